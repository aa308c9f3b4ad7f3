"""Conformally flat torus metrics whose Laplace eigenfunctions develop
tuned cascades of isolated critical points.

The package builds the smooth profile family (bumps, cutoffs, cascades),
solves the separated Sturm-Liouville problem by Pruefer shooting, tunes the
cascade sites to a spectral fixed point, certifies the resulting oscillation
pattern, and assembles the two-dimensional eigenfunctions and their level
sets on the torus.
"""

from .profiles import (
    SpecViolation,
    ProfileFunction,
    CascadeSpec,
    SiteAssignment,
    SandwichReport,
    make_psi,
    make_psi_t,
    make_phi_t,
    make_q,
    make_q_t,
    make_h,
    make_h_t,
    make_H_t,
    make_q_s_tau,
    make_q_tilde,
    verify_sandwich,
    sandwich_grid,
)
from .sturm import (
    NonpositiveQ,
    NoConvergence,
    SymmetryViolation,
    DegenerateBasis,
    EigenResult,
    SolutionBasis,
    FlatSolution,
    first_dirichlet_eigenvalue,
    eigenvalue_exceeds,
    fd_first_eigenvalue,
    check_lemma2_brackets,
    build_solution_basis,
    solve_with_flat_point,
    effective_wavenumber_profile,
)

__version__ = "0.1.0"
