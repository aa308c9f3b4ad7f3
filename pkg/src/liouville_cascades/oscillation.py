"""Certification of the cascade-driven oscillation pattern.

Given a solution of u'' + K u = 0 that is flat at the cascade centre
(u(x_*) > 0, u'(x_*) = 0) and a potential whose sign alternates over the
cascade intervals with geometrically dominated masses, the telescoping of

    u'(x_i) - u'(x_{i+1}) = -int_{x_{i+1}}^{x_i} K u dx

forces sign(u'(x_i)) = (-1)^i, hence one critical point per interval, each
isolated because u''(xi) = -K(xi) u(xi) != 0.  This module verifies every
ingredient numerically: the dominance inequalities (plain and first-moment
weighted), the derivative sign pattern, the located critical points with
isolation certificates, the level crossings of u = u(x_*), their strict
interlacing, and the four structural sign properties that make the level
sets on the torus close up into circles.

All operations work on sampled trajectories (arrays of x, u, u' with the
exact second derivative recovered from u'' = -K u), so they apply equally
to production window solves and to synthetic test trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "QuadratureUnderResolved",
    "ComparabilityViolation",
    "SignViolation",
    "DominanceReport",
    "CriticalPoint",
    "LevelCrossing",
    "PropertyReport",
    "OscillationReport",
    "build_window_grid",
    "verify_dominance",
    "certify_sign_pattern",
    "locate_critical_points",
    "locate_level_crossings",
    "verify_properties_i_to_iv",
    "analyze_window",
]


class QuadratureUnderResolved(RuntimeError):
    """An interval integral came out empty where a bump was expected."""


class ComparabilityViolation(RuntimeError):
    """u fails the two-sided ratio bound on the oscillation window."""


class SignViolation(RuntimeError):
    """The alternating derivative sign pattern broke at a certified node."""

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


# ---------------------------------------------------------------------------
# quadrature helpers

_GAUSS_CACHE: dict = {}


def _gauss(n: int):
    if n not in _GAUSS_CACHE:
        _GAUSS_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GAUSS_CACHE[n]


def _integrate(f: Callable, a: float, b: float, n: int = 80) -> float:
    z, w = _gauss(n)
    xs = 0.5 * (b - a) * z + 0.5 * (a + b)
    return 0.5 * (b - a) * float(np.sum(w * np.asarray(f(xs), dtype=float)))


# ---------------------------------------------------------------------------
# dominance of the head integral over the tail


@dataclass
class DominanceReport:
    strong: bool
    C: float
    integrals: np.ndarray          # signed plain integrals per interval, i = 1..N-1
    head: np.ndarray               # the quantity that must dominate (plain or weighted)
    tails: np.ndarray              # C-free tail sums of |plain integrals|
    margins: np.ndarray            # head_i - C * tail_i, for i = 1..N-2
    sign_ok: bool
    ok: bool


def verify_dominance(K: Callable, nodes, C: float, strong: bool = False,
                     n_gauss: int = 80) -> DominanceReport:
    """Check |int_{I_i} K| >= C * sum_{j>i} |int_{I_j} K| over the cascade.

    ``nodes`` is the decreasing sequence x_1 > ... > x_N (any scale); the
    intervals are I_i = (x_{i+1}, x_i).  With ``strong`` the left side is the
    first-moment integral |int (x_i - x) K dx| instead.  The sign pattern
    (-1)^i K < 0 on I_i is verified through the signs of the plain
    integrals.  Dominance is demanded for 1 <= i <= N-2: the last interval
    has an empty tail at finite truncation and is excluded.
    """
    nodes = np.asarray(nodes, dtype=float)
    if np.any(np.diff(nodes) >= 0):
        raise ValueError("nodes must be strictly decreasing")
    n_int = len(nodes) - 1
    plain = np.empty(n_int)
    headq = np.empty(n_int)
    for i in range(n_int):
        b, a = nodes[i], nodes[i + 1]
        plain[i] = _integrate(K, a, b, n_gauss)
        if plain[i] == 0.0:
            raise QuadratureUnderResolved(
                f"interval {i + 1} integrated to exactly zero; quadrature "
                "does not resolve the bump")
        if strong:
            headq[i] = _integrate(lambda x, bb=b: (bb - x) * np.asarray(K(x)), a, b, n_gauss)
        else:
            headq[i] = plain[i]
    signs_expected = np.array([(-1.0) ** (i + 2) for i in range(n_int)])  # +,-,+,...
    sign_ok = bool(np.all(np.sign(plain) == signs_expected))
    tails = np.concatenate([np.cumsum(np.abs(plain)[::-1])[::-1][1:], [0.0]])
    margins = np.abs(headq[: n_int - 1]) - C * tails[: n_int - 1]
    ok = sign_ok and bool(np.all(margins >= 0.0))
    return DominanceReport(strong=strong, C=C, integrals=plain, head=headq,
                           tails=tails, margins=margins, sign_ok=sign_ok, ok=ok)


# ---------------------------------------------------------------------------
# window sampling and interpolation


def build_window_grid(nodes, x_star: float, n_per_interval: int = 64,
                      margin: float = 0.1) -> np.ndarray:
    """Sample grid from x_star across all cascade intervals, extending
    ``margin`` * (x_1 - x_star) beyond the outermost node.  Every node and
    x_star itself are exact grid points."""
    nodes = np.asarray(nodes, dtype=float)
    pieces = [np.array([x_star])]
    asc = nodes[::-1]                    # x_N < ... < x_1
    pieces.append(np.linspace(x_star, asc[0], n_per_interval // 2 + 1)[1:])
    for i in range(len(asc) - 1):
        pieces.append(np.linspace(asc[i], asc[i + 1], n_per_interval + 1)[1:])
    top = nodes[0] + margin * (nodes[0] - x_star)
    pieces.append(np.linspace(asc[-1], top, n_per_interval + 1)[1:])
    return np.concatenate(pieces)


def _hermite_up(xs, up, upp):
    """Cubic Hermite interpolant of u' built from (u', u'') samples."""
    def f(xq):
        xq = np.asarray(xq, dtype=float)
        idx = np.clip(np.searchsorted(xs, xq) - 1, 0, len(xs) - 2)
        h = xs[idx + 1] - xs[idx]
        t = (xq - xs[idx]) / h
        h00 = (1 + 2 * t) * (1 - t) ** 2
        h10 = t * (1 - t) ** 2
        h01 = t * t * (3 - 2 * t)
        h11 = t * t * (t - 1)
        return (h00 * up[idx] + h10 * h * upp[idx]
                + h01 * up[idx + 1] + h11 * h * upp[idx + 1])
    return f


def _hermite_u(xs, u, up):
    def f(xq):
        xq = np.asarray(xq, dtype=float)
        idx = np.clip(np.searchsorted(xs, xq) - 1, 0, len(xs) - 2)
        h = xs[idx + 1] - xs[idx]
        t = (xq - xs[idx]) / h
        h00 = (1 + 2 * t) * (1 - t) ** 2
        h10 = t * (1 - t) ** 2
        h01 = t * t * (3 - 2 * t)
        h11 = t * t * (t - 1)
        return (h00 * u[idx] + h10 * h * up[idx]
                + h01 * u[idx + 1] + h11 * h * up[idx + 1])
    return f


def _bisect(f, a: float, b: float, steps: int = 60) -> float:
    fa = float(f(a))
    for _ in range(steps):
        mid = 0.5 * (a + b)
        fm = float(f(mid))
        if fa * fm <= 0.0:
            b = mid
        else:
            a = mid
            fa = fm
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# sign pattern certification


@dataclass
class OscillationReport:
    """Everything certified about one oscillation window."""

    x_star: float
    nodes: np.ndarray
    derivative_signs: list            # observed sign(u'(x_i)), i = 1..N
    certified: list                   # node deemed above the noise floor
    sign_pattern_ok: bool
    comparability_ratio: float        # max u / min u on [x_star, x_1]
    C_prime: float
    telescoping_lhs: np.ndarray       # u'(x_i) from the trajectory
    telescoping_rhs: np.ndarray       # -sum_{j>=i} int K u
    telescoping_rel_err: float
    critical_points: list = field(default_factory=list)
    level_crossings: list = field(default_factory=list)
    dominance_ok: bool | None = None
    counts: dict = field(default_factory=dict)
    properties: "PropertyReport | None" = None

    def to_json_dict(self) -> dict:
        return {
            "x_star": self.x_star,
            "nodes": [float(v) for v in self.nodes],
            "derivative_signs": [int(s) for s in self.derivative_signs],
            "certified": [bool(c) for c in self.certified],
            "sign_pattern_ok": bool(self.sign_pattern_ok),
            "comparability_ratio": self.comparability_ratio,
            "C_prime": self.C_prime,
            "telescoping_rel_err": self.telescoping_rel_err,
            "n_critical": self.counts.get("n_critical"),
            "n_crossings": self.counts.get("n_crossings"),
            "dominance_ok": self.dominance_ok,
            "critical_points": [c.to_json_dict() for c in self.critical_points],
            "level_crossings": [c.to_json_dict() for c in self.level_crossings],
            "properties": self.properties.to_json_dict() if self.properties else None,
        }


def certify_sign_pattern(xs, u, up, K: Callable, nodes, x_star: float,
                         C_prime: float = 1.5, sign_floor_rel: float = 1e-10,
                         n_gauss: int = 80, strict: bool = True) -> OscillationReport:
    """Verify sign(u'(x_i)) = (-1)^i at the cascade nodes.

    Also records the telescoping sums -sum_{j >= i} int_{I_j} K u dx (plus
    the stub from x_star to x_N, which vanishes at an exact fixed point) and
    compares them with the trajectory values u'(x_i).

    Preconditions checked here: u > 0 on [x_star, x_1] and the two-sided
    comparability max u / min u <= C_prime.  Nodes whose |u'| falls below
    ``sign_floor_rel`` * max|u'| are reported but not certified; with
    ``strict`` a broken sign at a certified node raises ``SignViolation``.
    """
    xs = np.asarray(xs, float)
    u = np.asarray(u, float)
    up = np.asarray(up, float)
    nodes = np.asarray(nodes, float)
    N = len(nodes)

    inwin = (xs >= x_star) & (xs <= nodes[0])
    if np.any(u[inwin] <= 0.0):
        raise ComparabilityViolation("u must stay positive on the window")
    ratio = float(np.max(u[inwin]) / np.min(u[inwin]))
    if ratio > C_prime:
        raise ComparabilityViolation(
            f"u ratio {ratio:.6g} exceeds C' = {C_prime:g} on the window")

    u_of = _hermite_u(xs, u, up)
    node_up = np.array([_sample_at(xs, up, x) for x in nodes])
    floor = sign_floor_rel * float(np.max(np.abs(up)))
    certified = [bool(abs(v) > floor) for v in node_up]
    signs = [int(np.sign(v)) if c else 0 for v, c in zip(node_up, certified)]

    # telescoping: u'(x_i) = -int_{x_star}^{x_i} K u
    Ku = lambda x: np.asarray(K(x), float) * u_of(x)
    pieces = np.empty(N)               # int over (x_{i+1}, x_i), i = 1..N-1
    for i in range(N - 1):
        pieces[i] = _integrate(Ku, nodes[i + 1], nodes[i], n_gauss)
    pieces[N - 1] = _integrate(Ku, x_star, nodes[N - 1], n_gauss)
    rhs = -np.cumsum(pieces[::-1])[::-1]          # -sum_{j>=i}
    lhs = node_up[: N]
    scale = float(np.max(np.abs(lhs))) + 1e-300
    tel_err = float(np.max(np.abs(lhs - rhs[: N]) / scale))

    ok = True
    for i1, (s, c) in enumerate(zip(signs, certified), start=1):
        want = 1 if i1 % 2 == 0 else -1
        if c and s != want:
            ok = False
            if strict:
                raise SignViolation(i1, f"sign(u'(x_{i1})) = {s}, expected {want}")
    return OscillationReport(
        x_star=float(x_star), nodes=nodes,
        derivative_signs=signs, certified=certified, sign_pattern_ok=ok,
        comparability_ratio=ratio, C_prime=C_prime,
        telescoping_lhs=lhs, telescoping_rhs=rhs[: N],
        telescoping_rel_err=tel_err,
    )


def _sample_at(xs, vals, x):
    i = int(np.searchsorted(xs, x))
    if i < len(xs) and xs[i] == x:
        return float(vals[i])
    i = np.clip(i, 1, len(xs) - 1)
    # fall back to the nearer sample (callers arrange exact node samples)
    return float(vals[i] if abs(xs[i] - x) < abs(xs[i - 1] - x) else vals[i - 1])


# ---------------------------------------------------------------------------
# critical points and level crossings


@dataclass
class CriticalPoint:
    x: float
    u: float
    upp: float                        # u''(xi) = -K(xi) u(xi)
    kind: str                         # "max" | "min"
    isolated: bool
    interval_index: int | None        # 1-based cascade interval containing xi

    def to_json_dict(self):
        return {"x": self.x, "u": self.u, "upp": self.upp, "kind": self.kind,
                "isolated": self.isolated, "interval_index": self.interval_index}


@dataclass
class LevelCrossing:
    x: float
    up: float
    tangential: bool
    interval_index: int | None = None

    def to_json_dict(self):
        return {"x": self.x, "up": self.up, "tangential": self.tangential,
                "interval_index": self.interval_index}


def _interval_index(nodes, x) -> int | None:
    """1-based j with x in (x_{j+1}, x_j), or None outside the skeleton."""
    nodes = np.asarray(nodes, float)
    asc = nodes[::-1]
    i = int(np.searchsorted(asc, x))
    if i <= 0 or i >= len(nodes):
        return None
    return len(nodes) - i


def locate_critical_points(xs, u, up, K: Callable, interval: tuple[float, float],
                           tol: float = 0.0, isolation_floor: float | None = None,
                           nodes=None) -> list[CriticalPoint]:
    """All sign changes of u' inside ``interval``, bisection-refined on the
    Hermite interpolant of (u', u'' = -Ku).

    Each point carries the isolation certificate u''(xi) = -K(xi)u(xi); a
    point with |u''| below the floor (default 1e-8 * max|K| * max|u| over the
    window) is flagged ``isolated=False`` and callers must not count it.
    """
    xs = np.asarray(xs, float)
    u = np.asarray(u, float)
    up = np.asarray(up, float)
    a, b = interval
    upp = -np.asarray(K(xs), float) * u
    if isolation_floor is None:
        sel = (xs >= a) & (xs <= b)
        isolation_floor = 1e-8 * float(np.max(np.abs(K(xs[sel])))) * float(np.max(np.abs(u[sel])))
    up_of = _hermite_up(xs, up, upp)
    u_of = _hermite_u(xs, u, up)
    out = []
    sel = np.where((xs >= a) & (xs <= b))[0]
    for k in range(len(sel) - 1):
        i0, i1 = sel[k], sel[k + 1]
        if up[i0] == 0.0 and i0 == sel[0]:
            continue                   # the flat anchor point itself
        if up[i0] * up[i1] < 0.0:
            xi = _bisect(up_of, xs[i0], xs[i1])
            uxi = float(u_of(xi))
            uppxi = float(-np.asarray(K(xi), float) * uxi)
            out.append(CriticalPoint(
                x=float(xi), u=uxi, upp=uppxi,
                kind="max" if uppxi < 0.0 else "min",
                isolated=bool(abs(uppxi) >= isolation_floor),
                interval_index=_interval_index(nodes, xi) if nodes is not None else None,
            ))
    return out


def locate_level_crossings(xs, u, up, level: float, interval: tuple[float, float],
                           tangent_floor: float | None = None,
                           nodes=None) -> list[LevelCrossing]:
    """Transversal solutions of u = level inside ``interval``."""
    xs = np.asarray(xs, float)
    u = np.asarray(u, float)
    up = np.asarray(up, float)
    a, b = interval
    if tangent_floor is None:
        tangent_floor = 1e-10 * float(np.max(np.abs(up)))
    u_of = _hermite_u(xs, u, up)
    up_of = _hermite_up(xs, up, np.gradient(up, xs))
    g = lambda x: u_of(x) - level
    out = []
    sel = np.where((xs >= a) & (xs <= b))[0]
    for k in range(len(sel) - 1):
        i0, i1 = sel[k], sel[k + 1]
        d0 = u[i0] - level
        d1 = u[i1] - level
        if d0 == 0.0:
            continue
        if d0 * d1 < 0.0:
            eta = _bisect(g, xs[i0], xs[i1])
            slope = float(up_of(eta))
            out.append(LevelCrossing(
                x=float(eta), up=slope,
                tangential=bool(abs(slope) < tangent_floor),
                interval_index=_interval_index(nodes, eta) if nodes is not None else None,
            ))
    return out


# ---------------------------------------------------------------------------
# the four structural properties and interlacing


@dataclass
class PropertyReport:
    j0: int
    prop_i: bool                      # sign u'(x_j) = (-1)^j
    prop_ii: bool                     # exactly one critical point per interval, max/min parity
    prop_iii: bool                    # sign(u(x_j) - u(x_{j+1})) = (-1)^j
    prop_iv: bool                     # sign(u(xi_j) - u(x_star)) = (-1)^(j-1)
    interlacing: bool                 # eta_j > xi_j > eta_{j+1} strictly
    failures: list = field(default_factory=list)
    j_range: tuple[int, int] = (0, 0)

    @property
    def all_ok(self) -> bool:
        return (self.prop_i and self.prop_ii and self.prop_iii
                and self.prop_iv and self.interlacing)

    def to_json_dict(self):
        return {"j0": self.j0, "prop_i": self.prop_i, "prop_ii": self.prop_ii,
                "prop_iii": self.prop_iii, "prop_iv": self.prop_iv,
                "interlacing": self.interlacing, "failures": self.failures,
                "j_range": list(self.j_range)}


def choose_j0(xs, u, nodes, x_star: float, C_prime: float) -> int:
    """Smallest 1-based j with x_j - x_star < 1 and the ratio bound holding
    on [x_star, x_j]."""
    u = np.asarray(u, float)
    xs = np.asarray(xs, float)
    for j in range(1, len(nodes) + 1):
        xj = nodes[j - 1]
        if xj - x_star >= 1.0:
            continue
        sel = (xs >= x_star) & (xs <= xj)
        if not np.any(sel):
            continue
        ratio = float(np.max(u[sel]) / np.min(u[sel]))
        if ratio <= C_prime and np.all(u[sel] > 0):
            return j
    raise ComparabilityViolation("no admissible j0: ratio bound fails everywhere")


def verify_properties_i_to_iv(report: OscillationReport, xs, u, up, K: Callable,
                              j_max: int | None = None) -> PropertyReport:
    """Check properties (i)-(iv) and interlacing for certified j >= j0.

    j runs over j0 .. j_max (default N-2).  Critical points and crossings are
    taken from the report (populated by ``analyze_window``)."""
    nodes = report.nodes
    N = len(nodes)
    j0 = choose_j0(xs, u, nodes, report.x_star, report.C_prime)
    if j_max is None:
        j_max = N - 2
    u_of = _hermite_u(np.asarray(xs, float), np.asarray(u, float), np.asarray(up, float))
    u_star = float(u_of(report.x_star))
    failures = []

    # property (i): from the certified sign pattern
    prop_i = True
    for j in range(j0, j_max + 1):
        want = 1 if j % 2 == 0 else -1
        if report.certified[j - 1] and report.derivative_signs[j - 1] != want:
            prop_i = False
            failures.append(("i", j))

    # property (ii): exactly one critical point per interval with parity
    by_interval: dict[int, list] = {}
    for c in report.critical_points:
        if c.interval_index is not None:
            by_interval.setdefault(c.interval_index, []).append(c)
    prop_ii = True
    for j in range(j0, j_max + 1):
        cs = by_interval.get(j, [])
        if len(cs) != 1 or not cs[0].isolated:
            prop_ii = False
            failures.append(("ii", j))
            continue
        want = "max" if j % 2 == 1 else "min"
        if cs[0].kind != want:
            prop_ii = False
            failures.append(("ii", j))

    # property (iii): consecutive node values alternate
    prop_iii = True
    node_u = np.array([float(u_of(x)) for x in nodes])
    for j in range(j0, min(j_max, N - 1) + 1):
        s = np.sign(node_u[j - 1] - node_u[j])
        want = 1.0 if j % 2 == 0 else -1.0
        if s != want:
            prop_iii = False
            failures.append(("iii", j))

    # property (iv): extremum values alternate around u(x_star)
    prop_iv = True
    for j in range(j0, j_max + 1):
        cs = by_interval.get(j, [])
        if len(cs) != 1:
            continue
        s = np.sign(cs[0].u - u_star)
        want = 1.0 if j % 2 == 1 else -1.0
        if s != want:
            prop_iv = False
            failures.append(("iv", j))

    # interlacing: eta_j > xi_j > eta_{j+1}
    xi = {c.interval_index: c.x for c in report.critical_points
          if c.interval_index is not None}
    eta = sorted((c.x for c in report.level_crossings), reverse=True)
    interlacing = True
    seq = []
    for j in range(j0, j_max + 1):
        if j in xi:
            seq.append(xi[j])
    merged = []
    ei = 0
    for x_xi in seq:
        while ei < len(eta) and eta[ei] > x_xi:
            merged.append(("eta", eta[ei]))
            ei += 1
        merged.append(("xi", x_xi))
    while ei < len(eta):
        merged.append(("eta", eta[ei]))
        ei += 1
    kinds = [k for k, _ in merged]
    for a, b in zip(kinds, kinds[1:]):
        if a == b:
            interlacing = False
            failures.append(("interlacing", 0))
            break

    return PropertyReport(j0=j0, prop_i=prop_i, prop_ii=prop_ii,
                          prop_iii=prop_iii, prop_iv=prop_iv,
                          interlacing=interlacing, failures=failures,
                          j_range=(j0, j_max))


# ---------------------------------------------------------------------------
# one-call analysis of a window


def analyze_window(xs, u, up, K: Callable, nodes, x_star: float, *,
                   C: float = 2.0, C_prime: float = 1.5,
                   isolation_floor: float | None = None,
                   sign_floor_rel: float = 1e-10,
                   strict: bool = True,
                   check_dominance: bool = True,
                   strong_dominance: bool = True) -> OscillationReport:
    """Full certification pipeline for one cascade window."""
    report = certify_sign_pattern(xs, u, up, K, nodes, x_star,
                                  C_prime=C_prime, sign_floor_rel=sign_floor_rel,
                                  strict=strict)
    interval = (x_star, float(xs[-1]))
    report.critical_points = locate_critical_points(
        xs, u, up, K, interval, isolation_floor=isolation_floor, nodes=nodes)
    u_of = _hermite_u(np.asarray(xs, float), np.asarray(u, float), np.asarray(up, float))
    level = float(u_of(x_star))
    report.level_crossings = locate_level_crossings(
        xs, u, up, level, (x_star, float(xs[-1])), nodes=nodes)
    if check_dominance:
        rep_weak = verify_dominance(K, nodes, C, strong=False)
        rep_strong = verify_dominance(K, nodes, C, strong=True) if strong_dominance else None
        report.dominance_ok = rep_weak.ok and (rep_strong.ok if rep_strong else True)
    report.counts = {
        "n_critical": sum(1 for c in report.critical_points if c.isolated),
        "n_crossings": len(report.level_crossings),
    }
    report.properties = verify_properties_i_to_iv(report, xs, u, up, K)
    return report
