"""Inductive selection of (m_i, M_i, eps_i) and the spectral fixed point.

The goal is a potential Q = q_{S,tau} whose first Dirichlet eigenvalues
satisfy Lambda_{Q,m_i} * Q(4^-t_i x_inf) = m_i^2: then the effective
coefficient K_i = Lambda_i Q - m_i^2 vanishes exactly at the centre of the
cascade implanted at site t_i, which is what generates the oscillation
pattern of the separated eigenfunctions.

Selection walks the inductive chain:

  * m_i: smallest integer above m_{i-1} with
        m_i^2/q(0) < Lambda_{q~,m_i} < m_i^2 / q(4^{-1-M_{i-1}}),
    found by a doubling scan plus binary search on the one-integration
    comparison predicate (the threshold inequality is checked directly, the
    brackets re-verified at full tolerance for the accepted m_i);
  * M_i: the unique solution of q(4^{-M_i}) = m_i^2 / Lambda_{q,m_i}
    (monotone in M_i, solved by bracketed root finding);
  * eps_i: the largest dyadic intensity for which the single-site sandwich
    q~ <= q_{{t},tau} <= q holds at probe sites spanning [M_{i-1}+1, M_i]
    with tau = +-eps, halved once for safety.

The box P = prod [M_{i-1}+1, M_i] is mapped into itself by
F(t)_i = q^{-1}(m_i^2 / Lambda_{q_{S(t),tau}, m_i}) (in 4^-s coordinates);
a damped fixed-point iteration with a componentwise bisection fallback
locates t* with the residual identity satisfied to the requested tolerance.
Each coordinate influences its eigenvalue only through an exponentially
small tail of the eigenfunction, so the iteration contracts rapidly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import profiles
from .profiles import (CascadeSpec, ProfileFunction, SiteAssignment,
                       make_h, make_q, make_q_s_tau, make_q_tilde,
                       verify_sandwich, SpecViolation)
from .sturm import (first_dirichlet_eigenvalue, eigenvalue_exceeds,
                    NoConvergence)

__all__ = [
    "SearchExhausted",
    "BoxEscape",
    "TunerProfiles",
    "TunerState",
    "build_profiles",
    "select_m_and_M",
    "select_eps",
    "evaluate_F",
    "find_fixed_point",
    "tune",
]


class SearchExhausted(RuntimeError):
    """No admissible integer m below the configured cap; the gap between
    q~ and q at the required scale is too small for this profile family."""


class BoxEscape(RuntimeError):
    """F(t) left the selection box: a bracket inequality failed."""


@dataclass(frozen=True)
class TunerProfiles:
    """The immutable profile family one tuning run works with."""

    q: ProfileFunction
    q_tilde: ProfileFunction
    h: ProfileFunction
    spec: CascadeSpec
    q0: float
    family: str
    params: dict


def build_profiles(family: str = "logpow", *, flatness_alpha: float = 1.0,
                   beta: float = 1.5, gamma: float = 1.5,
                   c0: float = 1.0, c1: float = 1.0,
                   cascade: CascadeSpec | None = None) -> TunerProfiles:
    """Construct the (q, q~, h) triple used by selection and tuning.

    The log-power family is the production default: its maximum is flat
    enough that implanted cascades converge, yet the site-selection scales
    q(4^{-1-M}) remain resolvable, keeping the admissible m_i at desk scale.
    """
    q = make_q(flatness_alpha, family=family, beta=beta, gamma=gamma, c0=c0, c1=c1)
    qt = make_q_tilde(q)
    spec = cascade if cascade is not None else CascadeSpec.geometric(depth=12)
    spec.validate()
    h = make_h(spec)
    return TunerProfiles(q=q, q_tilde=qt, h=h, spec=spec,
                         q0=float(q.evaluator(0.0)), family=family,
                         params={"flatness_alpha": flatness_alpha, "beta": beta,
                                 "gamma": gamma, "c0": c0, "c1": c1})


@dataclass
class TunerState:
    """Mutable record of one tuning run (JSON-serialisable checkpoint)."""

    k: int
    m: list                      # m_1 < ... < m_k
    M: list                      # M_0 = 0, M_1, ..., M_k
    eps: list                    # admissible intensity bounds
    tau: list                    # chosen intensities, |tau_i| <= eps_i
    box: list                    # [(M_{i-1}+1, M_i)]
    t: list                      # current iterate
    lam: list                    # Lambda_{Q,m_i} at the current iterate
    residuals: list              # |Lambda_i q(4^-t_i) - m_i^2| / m_i^2
    lam_q: list                  # Lambda_{q,m_i} (box lower anchors)
    lam_qt: list                 # Lambda_{q~,m_i} (box upper anchors)
    iterations: int = 0
    f_evals: int = 0
    converged: bool = False
    history: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "k": self.k, "m": self.m, "M": self.M, "eps": self.eps,
            "tau": self.tau, "box": self.box, "t": self.t, "lam": self.lam,
            "residuals": self.residuals, "lam_q": self.lam_q,
            "lam_qt": self.lam_qt, "iterations": self.iterations,
            "f_evals": self.f_evals, "converged": self.converged,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TunerState":
        return cls(k=d["k"], m=d["m"], M=d["M"], eps=d["eps"], tau=d["tau"],
                   box=[tuple(b) for b in d["box"]], t=d["t"], lam=d["lam"],
                   residuals=d["residuals"], lam_q=d["lam_q"],
                   lam_qt=d["lam_qt"], iterations=d.get("iterations", 0),
                   f_evals=d.get("f_evals", 0),
                   converged=d.get("converged", False))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "TunerState":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# step 1: the integer sequence m_i and the depth anchors M_i


def _threshold_value(prof: TunerProfiles, M_prev: float) -> float:
    return float(prof.q.evaluator(4.0 ** (-1.0 - M_prev)))


def select_m_and_M(prof: TunerProfiles, k: int, *, m_cap: int = 2_000_000,
                   solve_tol: float = 1e-10, scan_rtol: float = 1e-8,
                   minimality_walk: int = 64) -> TunerState:
    """Inductively pick m_1 < ... < m_k and 0 < M_1 < ... < M_k.

    The scan predicate P(m) = [Lambda_{q~,m} < m^2/q(4^{-1-M_{i-1}})] costs a
    single phase integration.  A doubling scan finds some admissible m, a
    binary search plus a bounded downward walk locates the smallest one (the
    predicate is monotone up to eigenvalue wiggles; the walk certifies local
    minimality).  Raises SearchExhausted above ``m_cap``.
    """
    ms: list[int] = []
    Ms: list[float] = [0.0]
    lam_qs: list[float] = []
    lam_qts: list[float] = []
    for i in range(1, k + 1):
        thr = _threshold_value(prof, Ms[-1])
        if prof.q0 - thr < 1e-13 * prof.q0:
            raise SearchExhausted(
                f"site-{i} selection gap q(0) - q(4^(-1-M)) = {prof.q0 - thr:.3e} "
                "is below double-precision resolution")

        def admissible(m: int) -> bool:
            # Lambda_{q~,m} < m^2/thr  <=>  NOT (Lambda exceeds m^2/thr)
            return not eigenvalue_exceeds(prof.q_tilde, m, float(m) ** 2 / thr,
                                          integ_rtol=scan_rtol)

        m_lo = ms[-1] if ms else 0
        m_hi = max(2 * (m_lo + 1), 4)
        probes = 0
        while not admissible(m_hi):
            m_lo = m_hi
            m_hi *= 2
            probes += 1
            if m_hi > m_cap:
                raise SearchExhausted(
                    f"no admissible m_{i} below cap {m_cap}; raise the cap or "
                    "choose a less flat profile family")
        while m_hi - m_lo > 1:
            mid = (m_hi + m_lo) // 2
            if admissible(mid):
                m_hi = mid
            else:
                m_lo = mid
        m_i = m_hi
        walk = 0
        floor = (ms[-1] if ms else 0) + 1
        while m_i - 1 >= floor and walk < minimality_walk and admissible(m_i - 1):
            m_i -= 1
            walk += 1

        lam_qt = first_dirichlet_eigenvalue(prof.q_tilde, m_i, solve_tol,
                                            want_trajectory=False).lam
        lam_q = first_dirichlet_eigenvalue(prof.q, m_i, solve_tol,
                                           want_trajectory=False).lam
        mm = float(m_i) ** 2
        if not (mm / prof.q0 < lam_qt < mm / thr):
            raise SearchExhausted(
                f"bracket re-verification failed at m_{i} = {m_i}: "
                f"{mm / prof.q0:.6g} < {lam_qt:.6g} < {mm / thr:.6g} is false")
        if not (mm / prof.q0 < lam_q <= lam_qt * (1 + 1e-12)):
            raise SearchExhausted(
                f"monotonicity bracket failed at m_{i} = {m_i}")

        target = mm / lam_q

        def depth_gap(s: float) -> float:
            return float(prof.q.evaluator(4.0 ** (-s))) - target

        s_lo = Ms[-1] + 1.0
        s_hi = s_lo + 1.0
        guard = 0
        while depth_gap(s_hi) < 0.0:
            s_hi += 1.0
            guard += 1
            if guard > 40:
                raise SearchExhausted("depth anchor solve failed to bracket")
        M_i = brentq(depth_gap, s_lo, s_hi, xtol=1e-13, rtol=1e-15)
        if M_i <= Ms[-1] + 1.0:
            raise SearchExhausted(f"M_{i} = {M_i:.6f} does not clear M_{i-1} + 1")

        ms.append(m_i)
        Ms.append(float(M_i))
        lam_qs.append(float(lam_q))
        lam_qts.append(float(lam_qt))

    box = [(Ms[i - 1] + 1.0, Ms[i]) for i in range(1, k + 1)]
    t0 = [0.5 * (lo + hi) for lo, hi in box]
    return TunerState(k=k, m=ms, M=Ms, eps=[], tau=[], box=box, t=t0,
                      lam=[], residuals=[], lam_q=lam_qs, lam_qt=lam_qts)


# ---------------------------------------------------------------------------
# step 2: admissible intensities


def _single_site_margins(prof: TunerProfiles, t: float, tau: float,
                         n_zone: int = 30_000) -> tuple[float, float]:
    """(lower, upper) sandwich margins for S = {t}; the function differs
    from q only inside the zone, so a zone-local grid suffices."""
    assign = SiteAssignment((t,), (tau,))
    Q = make_q_s_tau(prof.q, prof.h, assign, prof.spec)
    hi = 4.0 ** (-t)
    zone = np.linspace(0.25 * hi, hi, n_zone)
    extra = [zone]
    for a, b, _ in Q.resolve_hint:
        if a > 0:
            extra.append(np.linspace(a, b, 256))
    grid = np.unique(np.concatenate(extra))
    qs = Q.evaluator(grid)
    qq = prof.q.evaluator(grid)
    qt = prof.q_tilde.evaluator(grid)
    return float(np.min(qs - qt)), float(np.min(qq - qs))


def select_eps(prof: TunerProfiles, state: TunerState, i: int, *,
               n_probes: int = 5, seed: int = 0, max_halvings: int = 60) -> float:
    """Largest dyadic eps keeping the single-site sandwich valid for every
    probe site t in [M_{i-1}+1, M_i] with tau = +-eps, halved once more for
    safety.  eps = 0 is always admissible, so the search terminates."""
    lo, hi = state.box[i - 1]
    rng = np.random.default_rng(seed + 1000 * i)
    probes = [lo, hi, 0.5 * (lo + hi)] + list(rng.uniform(lo, hi, n_probes))

    def passes(eps: float) -> bool:
        for t in probes:
            for s in (eps, -eps):
                low, upp = _single_site_margins(prof, float(t), s)
                if low < 0.0 or upp < 0.0:
                    return False
        return True

    eps = 1.0
    for _ in range(max_halvings):
        if passes(eps):
            break
        eps *= 0.5
    else:
        raise SpecViolation(f"no admissible eps found for site {i}")
    return eps * 0.5


# ---------------------------------------------------------------------------
# step 3: the self-map F and its fixed point


def _assemble_Q(prof: TunerProfiles, state: TunerState, t) -> ProfileFunction:
    assign = SiteAssignment.from_pairs(list(zip(map(float, t), state.tau)))
    return make_q_s_tau(prof.q, prof.h, assign, prof.spec)


def _invert_depth(prof: TunerProfiles, target: float, lo: float, hi: float) -> float:
    """Solve q(4^-s) = target for s; q(4^-s) is strictly increasing in s."""
    f = lambda s: float(prof.q.evaluator(4.0 ** (-s))) - target
    a, b = lo - 0.75, hi + 0.75
    fa, fb = f(a), f(b)
    guard = 0
    while fa > 0.0:
        a -= 0.5
        fa = f(a)
        guard += 1
        if a <= 0.0 or guard > 20:
            raise BoxEscape(f"depth inversion target {target:.12g} fell below q(1/4)")
    while fb < 0.0:
        b += 0.5
        fb = f(b)
        guard += 1
        if guard > 40:
            raise BoxEscape(f"depth inversion target {target:.12g} exceeds q(0) resolution")
    return brentq(f, a, b, xtol=1e-13, rtol=1e-15)


def evaluate_F(prof: TunerProfiles, state: TunerState, t, *,
               solve_tol: float = 1e-10, box_slack: float = 1e-9,
               integ_rtol: float | None = None):
    """One application of the selection map.

    Builds Q = q_{S,tau} for S = {t_1, ..., t_k}, solves the k eigenvalues,
    and returns (s, lams) where s_i is the unique depth with
    q(4^-s_i) = m_i^2 / Lambda_{Q,m_i}.  The sandwich brackets pin
    Lambda_{Q,m_i} between the q- and q~-eigenvalues, so s lands in the box;
    leaving it beyond ``box_slack`` raises BoxEscape.
    """
    t = [float(v) for v in t]
    for i, (lo, hi) in enumerate(state.box):
        if not lo - 1e-9 <= t[i] <= hi + 1e-9:
            raise BoxEscape(f"iterate t_{i + 1} = {t[i]:.6f} outside box [{lo:.6f}, {hi:.6f}]")
    Q = _assemble_Q(prof, state, t)
    s_out, lams = [], []
    for i in range(state.k):
        bracket_pad = max(1e-8 * state.lam_q[i], 10 * solve_tol * state.lam_q[i])
        eig = first_dirichlet_eigenvalue(
            Q, state.m[i], solve_tol, want_trajectory=False, integ_rtol=integ_rtol)
        lam = eig.lam
        if not (state.lam_q[i] * (1 - 1e-7) <= lam <= state.lam_qt[i] * (1 + 1e-7)):
            raise BoxEscape(
                f"Lambda_{{Q,m_{i + 1}}} = {lam:.9g} escaped the monotonicity "
                f"bracket [{state.lam_q[i]:.9g}, {state.lam_qt[i]:.9g}]")
        target = float(state.m[i]) ** 2 / lam
        lo, hi = state.box[i]
        s_i = _invert_depth(prof, target, lo, hi)
        if not lo - box_slack <= s_i <= hi + box_slack:
            raise BoxEscape(
                f"F(t)_{i + 1} = {s_i:.9f} left the box [{lo:.6f}, {hi:.6f}]")
        s_out.append(min(max(s_i, lo), hi))
        lams.append(lam)
    return s_out, lams


def _residuals(prof: TunerProfiles, state: TunerState, t, lams) -> list[float]:
    out = []
    for i in range(state.k):
        qv = float(prof.q.evaluator(4.0 ** (-t[i])))
        mm = float(state.m[i]) ** 2
        out.append(abs(lams[i] * qv - mm) / mm)
    return out


def find_fixed_point(prof: TunerProfiles, state: TunerState, *,
                     residual_tol: float = 1e-6, max_iter: int = 200,
                     solve_tol: float = 1e-10, polish: bool = True) -> TunerState:
    """Damped fixed-point iteration t <- (1 - theta) t + theta F(t).

    theta starts at 1 and halves whenever the residual worsens; if damping
    collapses, a componentwise monotone bisection on the residual signs
    takes over.  Because each t_i moves Lambda_{Q,m_i} only through an
    exponentially small eigenfunction tail, plain iteration converges in a
    few steps.  Ends with a polishing pass at tightened solver tolerance so
    downstream sign certification sees the smallest reachable residual.
    """
    if not state.tau:
        raise ValueError("state.tau must be set before tuning (see select_eps)")
    t = [float(v) for v in state.t]
    theta = 1.0
    best_t, best_r, best_l = None, math.inf, None
    for it in range(max_iter):
        s, lams = evaluate_F(prof, state, t, solve_tol=solve_tol)
        state.f_evals += 1
        res = _residuals(prof, state, t, lams)
        worst = max(res)
        state.history.append({"iter": it, "t": list(t), "residual": worst})
        if worst < best_r:
            best_t, best_r, best_l = list(t), worst, list(lams)
            theta = min(1.0, theta * 2.0)
        else:
            theta *= 0.5
            if theta < 1e-3:
                t = _bisection_fallback(prof, state, best_t, solve_tol)
                s, lams = evaluate_F(prof, state, t, solve_tol=solve_tol)
                state.f_evals += 1
                res = _residuals(prof, state, t, lams)
                worst = max(res)
                if worst < best_r:
                    best_t, best_r, best_l = list(t), worst, list(lams)
            t = list(best_t)
        state.iterations = it + 1
        if best_r <= residual_tol:
            break
        t = [(1.0 - theta) * tv + theta * sv for tv, sv in zip(t, s)]
        t = [min(max(tv, lo), hi) for tv, (lo, hi) in zip(t, state.box)]
    else:
        state.t, state.lam = best_t, best_l or []
        state.residuals = _residuals(prof, state, best_t, best_l) if best_l else []
        state.converged = False
        raise NoConvergence(
            f"fixed point not reached in {max_iter} iterations; best residual "
            f"{best_r:.3e} (state carries the best iterate)")

    t = list(best_t)
    if polish:
        # the iteration contracts at the (small but nonzero) rate set by the
        # eigenfunction mass on the cascade zones mirrored at x = 2; keep
        # iterating at tight solver tolerance down to the solve-noise floor
        stall = 0
        for _ in range(16):
            s, lams = evaluate_F(prof, state, t, solve_tol=1e-12, integ_rtol=1e-11)
            state.f_evals += 1
            res = _residuals(prof, state, t, lams)
            if max(res) <= best_r:
                best_t, best_r, best_l = list(t), max(res), list(lams)
                stall = 0
            else:
                stall += 1
            if max(res) < 5e-12 or stall >= 2:
                break
            t = [min(max(sv, lo), hi) for sv, (lo, hi) in zip(s, state.box)]
        t = list(best_t)

    state.t = list(best_t)
    state.lam = list(best_l)
    state.residuals = _residuals(prof, state, best_t, best_l)
    state.converged = True
    return state


def _bisection_fallback(prof: TunerProfiles, state: TunerState, t0,
                        solve_tol: float) -> list[float]:
    """Componentwise bisection on the sign of s_i(t) - t_i."""
    t = list(t0)
    for i in range(state.k):
        lo, hi = state.box[i]
        a, b = lo, hi
        for _ in range(40):
            mid = 0.5 * (a + b)
            trial = list(t)
            trial[i] = mid
            s, _ = evaluate_F(prof, state, trial, solve_tol=solve_tol)
            state.f_evals += 1
            if s[i] > mid:
                a = mid
            else:
                b = mid
            if b - a < 1e-12 * max(1.0, abs(b)):
                break
        t[i] = 0.5 * (a + b)
    return t


# ---------------------------------------------------------------------------
# orchestration


def tune(prof: TunerProfiles, k: int, *, residual_tol: float = 1e-6,
         max_iter: int = 200, solve_tol: float = 1e-10, m_cap: int = 2_000_000,
         seed: int = 0, tau_policy: str = "half", polish: bool = True,
         checkpoint_path=None, state: TunerState | None = None) -> TunerState:
    """Full tuning run: selection, intensity bounds, fixed point.

    ``tau_policy``: "half" sets tau_i = eps_i/2 (all positive, the canonical
    oscillation orientation); "alternating" flips the sign sitewise.  Pass a
    previously saved ``state`` to resume after the selection stage.
    """
    if state is None:
        state = select_m_and_M(prof, k, m_cap=m_cap, solve_tol=solve_tol)
        state.eps = [select_eps(prof, state, i, seed=seed) for i in range(1, k + 1)]
        if tau_policy == "half":
            state.tau = [e / 2.0 for e in state.eps]
        elif tau_policy == "alternating":
            state.tau = [(e / 2.0) * (-1.0) ** i for i, e in enumerate(state.eps)]
        else:
            raise ValueError(f"unknown tau policy {tau_policy!r}")
        if checkpoint_path:
            state.save(checkpoint_path)
    find_fixed_point(prof, state, residual_tol=residual_tol, max_iter=max_iter,
                     solve_tol=solve_tol, polish=polish)
    if checkpoint_path:
        state.save(checkpoint_path)
    return state
