"""First Dirichlet eigenvalue of u'' + (lam*Q - m^2)u = 0 on [0, 4].

The production path is Pruefer-phase shooting: with u = r sin(theta),
u' = r cos(theta), the phase obeys theta' = cos^2 + (lam*Q - m^2) sin^2 and
theta(4; lam) increases strictly through pi exactly at the first eigenvalue,
so a sign-based bracket refinement on theta(4) - pi converges without ever
representing the (exponentially large) solution amplitudes.  Log-amplitude
is integrated alongside for trajectories, which keeps relative accuracy even
where the eigenfunction is exp(-hundreds) below its peak.

An independent finite-difference matrix oracle (`fd_first_eigenvalue`) backs
the cross-validation tests; it never touches the compiled shooting path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from . import kernels
from .profiles import ProfileFunction, _as_profile

__all__ = [
    "NonpositiveQ",
    "NoConvergence",
    "SymmetryViolation",
    "DegenerateBasis",
    "EigenResult",
    "SolutionBasis",
    "FlatSolution",
    "Lemma2Report",
    "first_dirichlet_eigenvalue",
    "fd_first_eigenvalue",
    "check_lemma2_brackets",
    "build_solution_basis",
    "solve_with_flat_point",
    "effective_wavenumber_profile",
    "profile_min_max",
]

QUARTER_PI_SQ = (math.pi / 4.0) ** 2


class NonpositiveQ(ValueError):
    """The conformal factor must be strictly positive."""


class NoConvergence(RuntimeError):
    """Bracketing or iteration budget exhausted."""


class SymmetryViolation(RuntimeError):
    """U'(2) failed to vanish: Q is not an even 2-periodic profile (or the
    solve tolerance is too loose for the requested symmetry check)."""


class DegenerateBasis(RuntimeError):
    """The requested flat-point combination is numerically unresolvable."""


# ---------------------------------------------------------------------------


def profile_min_max(Q: ProfileFunction, n: int = 20001) -> tuple[float, float]:
    """Global (min, max) of a 2-periodic profile, sampling one period plus
    every fine-structure hint region."""
    xs = [np.linspace(0.0, 2.0, n)]
    for a, b, _cap in (Q.resolve_hint or ()):
        xs.append(np.linspace(a, b, 501) % 2.0)
    grid = np.concatenate(xs)
    v = Q.evaluator(grid)
    return float(np.min(v)), float(np.max(v))


def _require_kernel(Q: ProfileFunction) -> kernels.KernelSpec:
    if Q.kernel is None:
        raise NoConvergence(
            "profile has no compiled evaluator; eigenvalue shooting supports "
            "the built-in potential families (constant, cosine series, q, "
            "q_tilde, q_{S,tau})")
    return Q.kernel


@dataclass
class EigenResult:
    """First Dirichlet eigenvalue with its trajectory on [0, 8].

    ``x``/``u``/``up`` sample U and U' (normalised to max |U| = 1) on a
    uniform grid covering [0, 8]; the second half is the odd reflection
    U(x) = -U(8 - x).  ``theta``/``log_amp`` store the Pruefer phase and the
    log-amplitude on the primary interval's sample points (first ``n_half+1``
    entries), which give U to full relative accuracy at any depth.
    """

    lam: float
    m: int
    x: np.ndarray
    u: np.ndarray
    up: np.ndarray
    theta: np.ndarray
    log_amp: np.ndarray
    log_norm: float            # peak of log|U| before normalisation
    bracket: tuple[float, float]
    solver_tol: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_half(self) -> int:
        return (len(self.x) - 1) // 2

    def residual_check(self) -> float:
        """Max |U'' + (lam*Q - m^2) U| / max|U| on the stored grid, second
        derivative via the 5-point central stencil."""
        kern = self.diagnostics.get("kernel")
        n = self.n_half
        x = self.x[: n + 1]
        u = self.u[: n + 1]
        h = x[1] - x[0]
        d2 = (-u[:-4] + 16.0 * u[1:-3] - 30.0 * u[2:-2] + 16.0 * u[3:-1] - u[4:]) / (12.0 * h * h)
        Q = kernels.evaluate(kern, x[2:-2])
        K = self.lam * Q - self.m ** 2
        resid = d2 + K * u[2:-2]
        return float(np.max(np.abs(resid)))

    def u_at(self, xq) -> np.ndarray:
        """Cubic-Hermite interpolation of U at arbitrary points of [0, 8]."""
        return _hermite_eval(self.x, self.u, self.up, np.asarray(xq, dtype=float))

    def to_json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "m": self.m,
            "bracket": [self.bracket[0], self.bracket[1]],
            "solver_tol": self.solver_tol,
            "n_samples": int(len(self.x)),
            "log_norm": self.log_norm,
        }

    def trajectory_csv(self, path, max_rows: int = 200_000) -> None:
        step = max(1, len(self.x) // max_rows)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,U,Uprime\n")
            for i in range(0, len(self.x), step):
                fh.write("%.17g,%.17g,%.17g\n" % (self.x[i], self.u[i], self.up[i]))


def _hermite_eval(x, u, up, xq):
    """Piecewise cubic Hermite using values and exact derivatives."""
    h = x[1] - x[0]
    idx = np.clip(((xq - x[0]) / h).astype(int), 0, len(x) - 2)
    t = (xq - x[idx]) / h
    h00 = (1 + 2 * t) * (1 - t) ** 2
    h10 = t * (1 - t) ** 2
    h01 = t * t * (3 - 2 * t)
    h11 = t * t * (t - 1)
    return h00 * u[idx] + h10 * h * up[idx] + h01 * u[idx + 1] + h11 * h * up[idx + 1]


# ---------------------------------------------------------------------------


def _theta_end(lam, m, kern, bps, caps, rtol, atol, x1):
    th = kernels.prufer_theta_end(lam, float(m) ** 2, kern.kind, kern.rp, kern.ip,
                                  0.0, x1, bps, caps, rtol, atol)
    if math.isnan(th):
        raise NoConvergence("phase integration exhausted its step budget")
    return th


def _check_even_symmetry(Q: ProfileFunction) -> None:
    # the half-interval reduction needs Q(2+s) = Q(2-s); spot-check it
    s = np.array([0.311, 0.77, 1.13])
    a = np.asarray(Q.evaluator(2.0 + s), dtype=float)
    b = np.asarray(Q.evaluator(2.0 - s), dtype=float)
    if np.max(np.abs(a - b)) > 1e-12 * np.max(np.abs(a)):
        raise SymmetryViolation("Q is not symmetric about x = 2; the solver "
                                "requires an even 2-periodic potential")


def eigenvalue_exceeds(Q: ProfileFunction, m: int, lam_probe: float,
                       integ_rtol: float = 1e-8) -> bool:
    """True iff the first Dirichlet eigenvalue exceeds ``lam_probe``.

    Costs a single phase integration: theta(2; lam_probe) < pi/2 exactly when
    lam_probe lies below the first eigenvalue (phase is strictly increasing
    in lam).  This is what makes scanning candidate m values cheap."""
    kern = _require_kernel(Q)
    bps, caps = kernels.build_breakpoints(Q.resolve_hint, 0.0, 2.0)
    th = _theta_end(lam_probe, m, kern, bps, caps, integ_rtol, integ_rtol * 0.1, 2.0)
    return th < 0.5 * math.pi


def first_dirichlet_eigenvalue(Q: ProfileFunction, m: int, tol: float = 1e-10,
                               *, want_trajectory: bool = True,
                               traj_points: int | None = None,
                               integ_rtol: float | None = None) -> EigenResult:
    """Smallest lam with a nontrivial solution of u'' + (lam*Q - m^2)u = 0,
    u(0) = u(4) = 0; the eigenfunction is positive on (0, 4).

    The eigenvalue is bracketed by the constant-potential bounds
    (m^2 + pi^2/16)/max Q <= lam <= (m^2 + pi^2/16)/min Q and refined by a
    bracket-preserving root find to relative width ``tol`` (relative on lam).

    Because Q is even and 2-periodic, the first eigenfunction is symmetric
    about x = 2 and the shooting condition collapses to theta(2; lam) = pi/2
    (equivalently U'(2) = 0); integrating half the interval also avoids the
    phase-collapse region behind the second potential barrier.  The symmetry
    is spot-checked and a full-interval residual check remains available on
    the stored trajectory.
    """
    if m < 0 or m != int(m):
        raise ValueError("m must be a nonnegative integer")
    kern = _require_kernel(Q)
    _check_even_symmetry(Q)
    qmin, qmax = profile_min_max(Q)
    if qmin <= 0.0:
        raise NonpositiveQ(f"min Q = {qmin:g} <= 0")
    if tol <= 0:
        raise ValueError("tol must be positive")
    bps, caps = kernels.build_breakpoints(Q.resolve_hint, 0.0, 2.0)
    rtol = integ_rtol if integ_rtol is not None else max(min(1e-10, 0.1 * tol), 1e-12)
    atol = rtol * 0.1
    half_pi = 0.5 * math.pi

    base = float(m) ** 2 + QUARTER_PI_SQ
    lo = base / qmax * (1.0 - 1e-9)
    hi = base / qmin * (1.0 + 1e-9)
    g_lo = _theta_end(lo, m, kern, bps, caps, rtol, atol, 2.0) - half_pi
    g_hi = _theta_end(hi, m, kern, bps, caps, rtol, atol, 2.0) - half_pi
    expansions = 0
    while g_lo > 0.0:
        lo *= 0.5
        g_lo = _theta_end(lo, m, kern, bps, caps, rtol, atol, 2.0) - half_pi
        expansions += 1
        if expansions > 60:
            raise NoConvergence("lower eigenvalue bracket failed to close")
    while g_hi < 0.0:
        hi *= 2.0
        g_hi = _theta_end(hi, m, kern, bps, caps, rtol, atol, 2.0) - half_pi
        expansions += 1
        if expansions > 60:
            raise NoConvergence("upper eigenvalue bracket failed to close")

    n_eval = [2]

    def g(lam):
        n_eval[0] += 1
        return _theta_end(lam, m, kern, bps, caps, rtol, atol, 2.0) - half_pi

    lam = brentq(g, lo, hi, rtol=max(tol, 4 * np.finfo(float).eps), xtol=1e-300,
                 maxiter=200)

    diagnostics = {"kernel": kern, "theta_evals": n_eval[0], "qmin": qmin, "qmax": qmax}
    result = EigenResult(
        lam=float(lam), m=int(m), x=np.empty(0), u=np.empty(0), up=np.empty(0),
        theta=np.empty(0), log_amp=np.empty(0), log_norm=0.0,
        bracket=(lo, hi), solver_tol=tol, diagnostics=diagnostics,
    )
    if want_trajectory:
        _attach_trajectory(result, Q, traj_points, rtol, atol)
    return result


def _attach_trajectory(result: EigenResult, Q: ProfileFunction,
                       traj_points: int | None, rtol: float, atol: float) -> None:
    # Forward integration beyond the symmetry point x = 2 would contaminate
    # the decaying eigenfunction with the growing mode (a relative lam error
    # eps surfaces as eps * e^{2 int kappa} by x = 4).  Integrate [0, 2] only
    # and produce [0, 4] from the even reflection U(2+s) = U(2-s), then
    # [4, 8] from the odd one U(x) = -U(8-x); both are exact identities of
    # the first eigenfunction for even 2-periodic Q.
    kern = result.diagnostics["kernel"]
    m2 = float(result.m) ** 2
    bps, caps = kernels.build_breakpoints(Q.resolve_hint, 0.0, 2.0)

    if traj_points is None:
        # pilot pass: estimate max |K^3 U| / max|U| to choose a grid on which
        # the 5-point residual stencil resolves 1e-8 * max|U|
        xs = np.linspace(0.0, 2.0, 1001)
        th, lr = kernels.prufer_sampled(result.lam, m2, kern.kind, kern.rp, kern.ip,
                                        xs, bps, caps, rtol, atol)
        with np.errstate(divide="ignore"):
            logu = lr + np.log(np.abs(np.sin(th)) + 1e-320)
        K = result.lam * kernels.evaluate(kern, xs) - m2
        weight = 3.0 * np.log(np.maximum(np.abs(K), 1.0)) + logu - np.max(logu)
        k3u = float(np.exp(np.max(weight)))
        h = (30.0 * 1e-9 / max(k3u, 1.0)) ** 0.25
        h = min(h, 0.05 / max(result.m, 1.0), 1e-3)
        n = int(np.ceil(4.0 / h))
        n = min(max(n - n % 4 + 4, 4000), 4_000_000)
    else:
        n = max(traj_points - traj_points % 4, 8)

    nq = n // 2                               # samples on [0, 2]
    xs = np.linspace(0.0, 2.0, nq + 1)
    th, lr = kernels.prufer_sampled(result.lam, m2, kern.kind, kern.rp, kern.ip,
                                    xs, bps, caps, rtol, atol)
    if np.any(np.isnan(th)):
        raise NoConvergence("trajectory integration exhausted its step budget")
    sin_th = np.sin(th)
    with np.errstate(divide="ignore"):
        logu = lr + np.log(np.abs(sin_th) + 1e-320)
    log_norm = float(np.max(logu))
    u_q = np.sign(sin_th) * np.exp(logu - log_norm)
    up_q = np.cos(th) * np.exp(lr - log_norm)

    # even reflection about x = 2, then odd reflection about x = 4
    u_half = np.concatenate([u_q, u_q[::-1][1:]])
    up_half = np.concatenate([up_q, -up_q[::-1][1:]])
    x_half = np.linspace(0.0, 4.0, n + 1)
    x_full = np.concatenate([x_half, 8.0 - x_half[::-1][1:]])
    u_full = np.concatenate([u_half, -u_half[::-1][1:]])
    up_full = np.concatenate([up_half, up_half[::-1][1:]])

    result.x = x_full
    result.u = u_full
    result.up = up_full
    result.theta = th
    result.log_amp = lr
    result.log_norm = log_norm
    result.diagnostics["traj_points"] = n + 1


# ---------------------------------------------------------------------------
# independent finite-difference oracle


def fd_first_eigenvalue(Q: ProfileFunction, m: int, n: int = 4096) -> float:
    """Matrix oracle: second-order central differences on n interior points,
    symmetrised generalised problem, smallest eigenvalue by LAPACK's
    Sturm-sequence bisection.  Uses only the Python-side evaluator."""
    h = 4.0 / (n + 1)
    x = np.linspace(h, 4.0 - h, n)
    Qv = np.asarray(Q.evaluator(x), dtype=float)
    if np.any(Qv <= 0.0):
        raise NonpositiveQ("oracle requires Q > 0 on the grid")
    d = (2.0 / h**2 + float(m) ** 2) / Qv
    e = -1.0 / (h**2 * np.sqrt(Qv[:-1] * Qv[1:]))
    lam = eigh_tridiagonal(d, e, select="i", select_range=(0, 0),
                           eigvals_only=True)[0]
    return float(lam)


# ---------------------------------------------------------------------------
# Lemma-2-style spectral brackets


@dataclass
class Lemma2Report:
    q_peak: float
    eps: float
    ms: list
    lams: list
    lower_margins: list        # lam - m^2/Q(0), must be > 0
    upper_ok: list             # lam < m^2/(Q(0) - eps)
    threshold_m: int | None    # smallest m from which upper_ok stays true
    violations: list = field(default_factory=list)

    @property
    def lower_ok(self) -> bool:
        return all(mg > 0.0 for mg in self.lower_margins)


def check_lemma2_brackets(Q: ProfileFunction, m_range, eps: float,
                          tol: float = 1e-10) -> Lemma2Report:
    """For every m in m_range assert lam > m^2/Q(0); report the empirical
    threshold above which lam < m^2/(Q(0) - eps) holds through the range.

    Requires Q even, 2-periodic, with a strict maximum at 0 (the bracket is
    meaningless otherwise)."""
    q0 = float(Q.evaluator(0.0))
    _, qmax = profile_min_max(Q)
    if qmax > q0 * (1.0 + 1e-12):
        raise ValueError("Q(0) must be the global maximum")
    ms, lams, lower, upper = [], [], [], []
    for m in m_range:
        lam = first_dirichlet_eigenvalue(Q, m, tol, want_trajectory=False).lam
        ms.append(int(m))
        lams.append(lam)
        lower.append(lam - float(m) ** 2 / q0)
        upper.append(lam < float(m) ** 2 / (q0 - eps))
    threshold = None
    for i in range(len(ms)):
        if all(upper[i:]):
            threshold = ms[i]
            break
    violations = [ms[i] for i in range(len(ms)) if lower[i] <= 0.0]
    return Lemma2Report(q_peak=q0, eps=eps, ms=ms, lams=lams,
                        lower_margins=lower, upper_ok=upper,
                        threshold_m=threshold, violations=violations)


# ---------------------------------------------------------------------------
# the two-dimensional solution space at the first eigenvalue


@dataclass
class SolutionBasis:
    """Basis {U, V} of 8-periodic solutions at lam = Lambda_{Q,m}.

    V(x) = U(x+2); evenness and 2-periodicity of Q force U'(2) = 0, making
    the pair independent.  ``wronskian`` is U V' - U' V evaluated where both
    factors are representable; ``log_wronskian`` carries its scale exactly
    even when the value underflows double precision.
    """

    eig: EigenResult
    v: np.ndarray
    vp: np.ndarray
    wronskian: float
    log_wronskian: float
    wronskian_rel_dev: float
    uprime2_rel: float
    diagnostics: dict = field(default_factory=dict)


def build_solution_basis(Q: ProfileFunction, m: int, eig: EigenResult,
                         symmetry_tol: float = 1e-6) -> SolutionBasis:
    """Form V(x) = U(x+2) and verify the structural facts: U'(2) = 0 (to
    ``symmetry_tol`` * max|U'|), U(2) != 0, U'(0) != 0, and a Wronskian that
    is nonzero and constant along the period."""
    if len(eig.x) == 0:
        raise ValueError("eigenvalue result carries no trajectory")
    n = eig.n_half
    if n % 2 != 0:
        raise ValueError("trajectory grid must contain x = 2 as a sample")
    half_shift = n // 2               # grid points spanning x -> x + 2

    i2 = half_shift                   # index of x = 2.0
    up2 = eig.up[i2]
    up_max = float(np.max(np.abs(eig.up)))
    uprime2_rel = abs(up2) / up_max
    if uprime2_rel > symmetry_tol:
        raise SymmetryViolation(
            f"|U'(2)| = {uprime2_rel:.3e} * max|U'| exceeds {symmetry_tol:g}; "
            "Q is not an even 2-periodic profile at the solver tolerance")
    if abs(eig.u[i2]) < 1e-6:
        raise DegenerateBasis("U(2) vanished; first eigenfunction cannot")
    if abs(eig.up[0]) == 0.0 and eig.log_amp[0] == 0.0 and abs(eig.u[0]) > 0:
        raise DegenerateBasis("U'(0) = 0 is incompatible with U(0) = 0")

    # V on [0,8] by periodic index shift (period 8 = 2n grid steps)
    nfull = len(eig.x) - 1            # 2n steps on [0,8]
    v = np.empty_like(eig.u)
    vp = np.empty_like(eig.up)
    idx = (np.arange(nfull + 1) + half_shift) % nfull
    v[:] = eig.u[idx]
    vp[:] = eig.up[idx]

    # wronskian at x = 2 (clean: U'(2) ~ 0 kills the cancelling term)
    w_ref = eig.u[i2] * vp[i2] - eig.up[i2] * v[i2]

    # log form via the phase/amplitude data on [0, 2]: with the symmetry
    # V(x) = U(x+2) = U(2-x) and V'(x) = -U'(2-x),
    #   W(x) = -e^{L(x)+L(2-x)} sin(theta(x) + theta(2-x)),
    # a sum of phases, so no cancellation even deep under the barrier.
    lr = eig.log_amp
    th = eig.theta
    rev = slice(None, None, -1)
    phase_sum = th + th[rev]
    sin_s = np.sin(phase_sum)
    usable = np.abs(sin_s) > 1e-10
    logw = lr + lr[rev] + np.log(np.abs(sin_s) + 1e-320)
    logw = logw[usable] - 2.0 * eig.log_norm
    if len(logw) == 0:
        raise DegenerateBasis("no sample with separated phases; cannot certify the Wronskian")
    rel_dev = float(np.max(np.abs(logw - np.median(logw))))
    log_w = float(np.median(logw))

    return SolutionBasis(
        eig=eig, v=v, vp=vp,
        wronskian=float(w_ref),
        log_wronskian=log_w,
        wronskian_rel_dev=rel_dev,
        uprime2_rel=float(uprime2_rel),
        diagnostics={"u2": float(eig.u[i2]), "up0": float(eig.up[0]),
                     "usable_fraction": float(np.mean(usable))},
    )


@dataclass
class FlatSolution:
    """u = alpha*U + beta*V with u(x_star) = 1, u'(x_star) = 0, together with
    a finely resolved trajectory on the oscillation window."""

    x_star: float
    alpha: float
    beta: float
    lam: float
    m: int
    xs: np.ndarray
    u: np.ndarray
    up: np.ndarray
    flat_residual: float
    diagnostics: dict = field(default_factory=dict)

    def u_at(self, xq):
        return _hermite_eval_nonuniform(self.xs, self.u, self.up, np.asarray(xq, float))

    def up_at(self, xq):
        xq = np.asarray(xq, float)
        idx = np.clip(np.searchsorted(self.xs, xq) - 1, 0, len(self.xs) - 2)
        h = self.xs[idx + 1] - self.xs[idx]
        t = (xq - self.xs[idx]) / h
        # derivative of the cubic Hermite interpolant
        d00 = (6 * t * t - 6 * t) / h
        d10 = 3 * t * t - 4 * t + 1
        d01 = (6 * t - 6 * t * t) / h
        d11 = 3 * t * t - 2 * t
        return (d00 * self.u[idx] + d10 * self.up[idx]
                + d01 * self.u[idx + 1] + d11 * self.up[idx + 1])


def _hermite_eval_nonuniform(x, u, up, xq):
    idx = np.clip(np.searchsorted(x, xq) - 1, 0, len(x) - 2)
    h = x[idx + 1] - x[idx]
    t = (xq - x[idx]) / h
    h00 = (1 + 2 * t) * (1 - t) ** 2
    h10 = t * (1 - t) ** 2
    h01 = t * t * (3 - 2 * t)
    h11 = t * t * (t - 1)
    return h00 * u[idx] + h10 * h * up[idx] + h01 * u[idx + 1] + h11 * h * up[idx + 1]


def _local_values_at(Q: ProfileFunction, eig: EigenResult, x_target: float):
    """(U, U') at an arbitrary point, re-integrated at full resolution from
    the nearest clean sample to the left (trajectory samples inside cascade
    zones are pointwise exact, but Hermite interpolation between them is
    not, so we integrate instead of interpolating)."""
    kern = eig.diagnostics["kernel"]
    n = eig.n_half
    x4 = eig.x[: n + 1]
    h = x4[1] - x4[0]
    i0 = max(int((x_target - 0.02) / h), 0)
    x0 = x4[i0]
    if x_target - x0 < 1e-12:
        return float(eig.u[i0]), float(eig.up[i0])
    bps, caps = kernels.build_breakpoints(Q.resolve_hint, x0, x_target + 1e-12)
    xs = np.array([x0, x_target])
    u, up = kernels.window_solution(eig.lam, float(eig.m) ** 2, kern.kind, kern.rp,
                                    kern.ip, xs, bps, caps, 1e-12, 1e-300,
                                    float(eig.u[i0]), float(eig.up[i0]))
    return float(u[-1]), float(up[-1])


def solve_with_flat_point(basis: SolutionBasis, x_star: float, Q: ProfileFunction,
                          window: np.ndarray | None = None) -> FlatSolution:
    """Combination u = alpha*U + beta*V with u'(x_star) = 0, u(x_star) = 1.

    The coefficients come from the 2x2 system at x_star; the returned window
    trajectory is integrated directly from (x_star, 1, 0), which equals the
    combination by uniqueness of the initial-value problem while resolving
    the cascade scales exactly.
    """
    eig = basis.eig
    if not 0.0 <= x_star < 8.0:
        raise ValueError("x_star must lie in [0, 8)")
    u0, up0 = _local_values_at(Q, eig, x_star)
    # V(x_star) = U(x_star + 2), reduced into [0,4] by the odd 8-periodic extension
    xv = x_star + 2.0
    if xv <= 4.0:
        v0, vp0 = _local_values_at(Q, eig, xv)
    else:
        v0m, vp0m = _local_values_at(Q, eig, 8.0 - xv)
        v0, vp0 = -v0m, vp0m
    det = u0 * vp0 - up0 * v0
    scale = abs(u0 * vp0) + abs(up0 * v0) + 1e-300
    if abs(det) < 1e-12 * scale:
        raise DegenerateBasis(
            f"flat-point system at x_star={x_star:g} is singular to working "
            f"precision (|W| = {abs(det):.3e} vs scale {scale:.3e})")
    alpha = vp0 / det
    beta = -up0 / det
    flat_resid = abs(alpha * up0 + beta * vp0)

    if window is None:
        window = np.array([x_star, x_star + 1e-3])
    kern = eig.diagnostics["kernel"]
    bps, caps = kernels.build_breakpoints(Q.resolve_hint, float(window[0]),
                                          float(window[-1]) + 1e-15)
    u, up = kernels.window_solution(eig.lam, float(eig.m) ** 2, kern.kind, kern.rp,
                                    kern.ip, window, bps, caps, 1e-12, 1e-300,
                                    1.0, 0.0)
    if np.any(np.isnan(u)):
        raise NoConvergence("window integration exhausted its step budget")
    return FlatSolution(
        x_star=float(x_star), alpha=float(alpha), beta=float(beta),
        lam=eig.lam, m=eig.m, xs=np.asarray(window, float), u=u, up=up,
        flat_residual=float(flat_resid),
        diagnostics={"u_star_from_basis": u0 * alpha + beta * v0,
                     "U_at_star": u0, "V_at_star": v0,
                     "Up_at_star": up0, "Vp_at_star": vp0},
    )


# ---------------------------------------------------------------------------


def effective_wavenumber_profile(Q: ProfileFunction, lam: float, m: int) -> ProfileFunction:
    """K(x) = lam*Q(x) - m^2 as a profile (the ODE's coefficient)."""
    m2 = float(m) ** 2
    return _as_profile(
        lambda x: lam * Q.evaluator(x) - m2,
        lambda x: lam * Q.derivative1(x),
        lambda x: lam * Q.derivative2(x),
        period=Q.period,
        resolve_hint=Q.resolve_hint,
        kernel=None,
        name=f"K[m={m}]",
    )
