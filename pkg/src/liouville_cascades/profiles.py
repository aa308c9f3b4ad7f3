"""Smooth profile construction kit.

Everything here is built from two closed-form C-infinity primitives: the
one-sided exponential ramp exp(-1/y) and bump functions exp(-s/((x-a)(b-x))).
From those we assemble

* ``psi``      -- even plateau bump, 1 on [1/2, 3/4] (+ mirror), support in
                  (1/4, 1) (+ mirror),
* ``phi_t``    -- 2-periodic cutoff 1 - sum_n psi(4^t (x + 2n)),
* ``q``        -- even 2-periodic potential profile, strictly decreasing on
                  [0, 1], with a configurable flat maximum at 0,
* ``h``        -- sign-alternating cascade of bumps accumulating at x_inf,
* ``q_{S,tau}``-- q with a rescaled copy of the cascade implanted at every
                  site t in S,
* ``q_tilde``  -- a strictly smaller companion profile pinched to q(5x) near 0.

Every constructed object is a :class:`ProfileFunction` carrying analytic
first and second derivatives (hand-propagated chain/product rules, no finite
differences).  Evaluators accept floats or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "SpecViolation",
    "ProfileFunction",
    "CascadeSpec",
    "SiteAssignment",
    "SandwichReport",
    "make_psi",
    "make_psi_t",
    "make_phi_t",
    "make_q",
    "make_q_t",
    "make_h",
    "make_h_t",
    "make_H_t",
    "make_q_s_tau",
    "make_q_tilde",
    "verify_sandwich",
    "sandwich_grid",
    "export_profile_csv",
    "wrap_period2",
    "BUMP_UNIT_INTEGRAL",
]

# integral of exp(-1/(4u(1-u))) over (0,1); fixed normalisation of the unit
# bump (verified against quadrature in the test suite)
BUMP_UNIT_INTEGRAL = 0.22199690808403968


class SpecViolation(ValueError):
    """A constructed object violates one of its structural requirements."""


# ---------------------------------------------------------------------------
# primitives

def wrap_period2(x):
    """Reduce x modulo 2 into [-1, 1].  Exact in floating point."""
    x = np.asarray(x, dtype=float)
    return x - 2.0 * np.round(0.5 * x)


def _ramp_jet(y, a=1.0):
    """exp(-y^-a) on y > 0 (0 otherwise) with first two derivatives."""
    y = np.asarray(y, dtype=float)
    pos = y > 0.0
    ys = np.where(pos, y, 1.0)
    with np.errstate(over="ignore", under="ignore"):
        e = np.exp(-ys ** (-a))
        e1 = e * a * ys ** (-a - 1.0)
        e2 = e * (a * a * ys ** (-2.0 * a - 2.0) - a * (a + 1.0) * ys ** (-a - 2.0))
    z = np.zeros_like(ys)
    return np.where(pos, e, z), np.where(pos, e1, z), np.where(pos, e2, z)


def _step_jet(y, a=1.0):
    """Smooth 0->1 transition on [0,1], flat to all orders at both ends."""
    y = np.asarray(y, dtype=float)
    inside = (y > 0.0) & (y < 1.0)
    ys = np.where(inside, y, 0.5)
    A, A1, A2 = _ramp_jet(ys, a)
    B, Bm1, Bm2 = _ramp_jet(1.0 - ys, a)
    B1 = -Bm1                      # d/dy E(1-y)
    B2 = Bm2
    D = A + B
    N1 = A1 * B - A * B1
    s = A / D
    s1 = N1 / D**2
    s2 = (A2 * B - A * B2) / D**2 - 2.0 * N1 * (A1 + B1) / D**3
    one = np.where(y >= 1.0, 1.0, 0.0)
    z = np.zeros_like(ys)
    return (np.where(inside, s, one),
            np.where(inside, s1, z),
            np.where(inside, s2, z))


def _bump_jet(x, a, b):
    """exp(-s/((x-a)(b-x))) with s = ((b-a)/2)^2; peak value e^-1 at midpoint."""
    x = np.asarray(x, dtype=float)
    inside = (x > a) & (x < b)
    xs = np.where(inside, x, 0.5 * (a + b))
    P = (xs - a) * (b - xs)
    P1 = a + b - 2.0 * xs
    s = 0.25 * (b - a) ** 2
    with np.errstate(over="ignore", under="ignore"):
        r = np.exp(-s / P)
        g1 = s * P1 / P**2
        r1 = r * g1
        r2 = r * (g1 * g1 + s * (-2.0) / P**2 - 2.0 * s * P1 * P1 / P**3)
    z = np.zeros_like(xs)
    return np.where(inside, r, z), np.where(inside, r1, z), np.where(inside, r2, z)


# ---------------------------------------------------------------------------
# profile container

@dataclass(frozen=True)
class ProfileFunction:
    """A twice-differentiable scalar profile with closed-form derivatives.

    ``evaluator``, ``derivative1`` and ``derivative2`` are vectorised maps
    R -> R.  ``period`` is 2.0 for the periodic profiles and None for the
    compactly supported building blocks.  ``support_hint`` lists open
    intervals (on the positive half of the fundamental domain) outside of
    which a compactly supported profile vanishes.  ``resolve_hint`` lists
    ``(lo, hi, cap)`` triples: regions an ODE stepper must enter with steps
    no larger than ``cap``.  ``kernel`` is the packed-parameter description
    consumed by the compiled evaluators in :mod:`liouville_cascades.kernels`.
    Instances are immutable and safe to share across workers.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    derivative1: Callable[[np.ndarray], np.ndarray]
    derivative2: Callable[[np.ndarray], np.ndarray]
    period: float | None = None
    support_hint: tuple[tuple[float, float], ...] | None = None
    resolve_hint: tuple[tuple[float, float, float], ...] = ()
    kernel: "object | None" = None
    name: str = ""

    def __call__(self, x):
        return self.evaluator(x)

    def d1(self, x):
        return self.derivative1(x)

    def d2(self, x):
        return self.derivative2(x)

    def interval_bounds(self, lo: float, hi: float, n: int = 4001) -> tuple[float, float]:
        """Crude (min, max) of the profile on [lo, hi] by dense sampling."""
        xs = np.linspace(lo, hi, n)
        v = self.evaluator(xs)
        return float(np.min(v)), float(np.max(v))


def _as_profile(f0, f1, f2, **kw) -> ProfileFunction:
    def ev(x):
        return f0(np.asarray(x, dtype=float))

    def d1(x):
        return f1(np.asarray(x, dtype=float))

    def d2(x):
        return f2(np.asarray(x, dtype=float))

    return ProfileFunction(ev, d1, d2, **kw)


# ---------------------------------------------------------------------------
# psi and phi_t

def make_psi() -> ProfileFunction:
    """Even plateau bump: 0 outside (1/4,1)+mirror, 1 on [1/2,3/4]+mirror.

    Rises with the standard exp(-1/y) transition on [1/4,1/2] and falls on
    [3/4,1]; both ramps are flat to all orders at their endpoints.
    """

    def jet(x):
        x = np.asarray(x, dtype=float)
        y = np.abs(x)
        sgn = np.sign(x)
        up, up1, up2 = _step_jet((y - 0.25) * 4.0)
        dn, dn1, dn2 = _step_jet((1.0 - y) * 4.0)
        rising = y < 0.5
        f = np.where(rising, up, dn)
        fy = np.where(rising, 4.0 * up1, -4.0 * dn1)
        fyy = np.where(rising, 16.0 * up2, 16.0 * dn2)
        return f, fy * sgn, fyy

    return _as_profile(
        lambda x: jet(x)[0], lambda x: jet(x)[1], lambda x: jet(x)[2],
        period=None,
        support_hint=((-1.0, -0.25), (0.25, 1.0)),
        resolve_hint=((0.25, 1.0, 0.75 / 50.0), (-1.0, -0.25, 0.75 / 50.0)),
        name="psi",
    )


def make_psi_t(t: float) -> ProfileFunction:
    """psi(4^t x): the plateau bump shrunk to the scale 4^-t."""
    if t < 0:
        raise SpecViolation("scale parameter t must be nonnegative")
    psi = make_psi()
    s = 4.0 ** t
    hi = 4.0 ** (-t)
    return _as_profile(
        lambda x: psi.evaluator(s * x),
        lambda x: s * psi.derivative1(s * x),
        lambda x: s * s * psi.derivative2(s * x),
        period=None,
        support_hint=((-hi, -0.25 * hi), (0.25 * hi, hi)),
        resolve_hint=((0.25 * hi, hi, 0.75 * hi / 50.0), (-hi, -0.25 * hi, 0.75 * hi / 50.0)),
        name=f"psi_{t:g}",
    )


def make_phi_t(t: float) -> ProfileFunction:
    """2-periodic cutoff 1 - sum_n psi(4^t (x+2n)).

    For t >= 0 the summands have disjoint supports inside (-4^-t, 4^-t) + 2Z,
    so reducing x mod 2 touches exactly the single contributing term; the
    periodisation is evaluated exactly, not truncated.
    """
    if t < 0:
        raise SpecViolation("scale parameter t must be nonnegative")
    psi = make_psi()
    s = 4.0 ** t
    hi = 4.0 ** (-t)

    def f0(x):
        return 1.0 - psi.evaluator(s * wrap_period2(x))

    def f1(x):
        return -s * psi.derivative1(s * wrap_period2(x))

    def f2(x):
        return -s * s * psi.derivative2(s * wrap_period2(x))

    return _as_profile(
        f0, f1, f2, period=2.0,
        resolve_hint=((0.25 * hi, hi, 0.75 * hi / 50.0), (-hi, -0.25 * hi, 0.75 * hi / 50.0)),
        name=f"phi_{t:g}",
    )


# ---------------------------------------------------------------------------
# the potential profile q and its flat families

_FAMILIES = ("exp", "logpow")


def _q_g_jet(y, family, alpha, beta, gamma):
    """The increasing shape g on [0,1] (g(0)=0, g(1)=1, flat at both ends)."""
    y = np.asarray(y, dtype=float)
    if family == "exp":
        return _step_jet(y, alpha)
    # log-power: g = step(xi), xi = (1 - ln(y)/gamma)^(-beta); much slower
    # decay toward 0 than any exp(-1/y^a) while still flat to all orders
    inside = (y > 0.0) & (y < 1.0)
    ys = np.where(inside, y, 0.5)
    L = 1.0 - np.log(ys) / gamma
    xi = L ** (-beta)
    xi1 = beta * L ** (-beta - 1.0) / (gamma * ys)
    xi2 = (-beta * L ** (-beta - 1.0) / gamma + beta * (beta + 1.0) * L ** (-beta - 2.0) / gamma**2) / ys**2
    s, s1, s2 = _step_jet(xi)
    g = s
    g1 = s1 * xi1
    g2 = s2 * xi1 * xi1 + s1 * xi2
    one = np.where(y >= 1.0, 1.0, 0.0)
    z = np.zeros_like(ys)
    return (np.where(inside, g, one), np.where(inside, g1, z), np.where(inside, g2, z))


def make_q(flatness_alpha: float = 1.0, *, family: str = "exp",
           beta: float = 1.5, gamma: float = 1.5,
           c0: float = 1.0, c1: float = 1.0) -> ProfileFunction:
    """Even, 2-periodic, positive profile with a flat maximum at 0.

    On the fundamental domain, q(x) = c0 + c1*(1 - g(|x|)) where g rises
    strictly from 0 to 1 on [0,1] and is flat to all orders at both ends, so
    q is C-infinity across x = 0 and the period seam x = +-1, strictly
    increasing on [-1,0] and strictly decreasing on [0,1].

    family="exp" uses g built from exp(-1/y^alpha) ramps, so
    q(0) - q(x) = O(exp(-1/|x|^alpha)) near 0 (``flatness_alpha`` >= 1 is the
    documented regime; smaller values are accepted and simply mean a less
    flat maximum).  family="logpow" uses the substitution
    xi = (1 - ln(y)/gamma)^(-beta), giving the much milder flatness
    q(0) - q(x) ~ exp(-(1 - ln|x|/gamma)^beta), beta > 1.  The slow variant
    keeps the inductive site-selection scales computable at desk size.
    """
    if family not in _FAMILIES:
        raise SpecViolation(f"unknown flatness family {family!r}")
    if flatness_alpha <= 0:
        raise SpecViolation("flatness_alpha must be positive")
    if family == "logpow" and beta <= 1.0:
        raise SpecViolation("log-power flatness requires beta > 1")
    if c0 <= 0 or c1 <= 0:
        raise SpecViolation("q requires c0 > 0 and c1 > 0")

    from . import kernels

    def jet(x):
        w = wrap_period2(x)
        y = np.abs(w)
        sgn = np.sign(w)
        g, g1, g2 = _q_g_jet(y, family, flatness_alpha, beta, gamma)
        return c0 + c1 * (1.0 - g), -c1 * g1 * sgn, -c1 * g2

    kern = kernels.q_kernel(family, flatness_alpha, beta, gamma, c0, c1)
    return _as_profile(
        lambda x: jet(x)[0], lambda x: jet(x)[1], lambda x: jet(x)[2],
        period=2.0, kernel=kern,
        name=f"q[{family}]",
    )


def make_q_t(q: ProfileFunction, t: float) -> ProfileFunction:
    """phi_t * (q - q(4^-t)) + q(4^-t): q with its peak at 0 truncated flat."""
    phi = make_phi_t(t)
    qc = float(q.evaluator(4.0 ** (-t)))

    def f0(x):
        return phi.evaluator(x) * (q.evaluator(x) - qc) + qc

    def f1(x):
        return phi.derivative1(x) * (q.evaluator(x) - qc) + phi.evaluator(x) * q.derivative1(x)

    def f2(x):
        return (phi.derivative2(x) * (q.evaluator(x) - qc)
                + 2.0 * phi.derivative1(x) * q.derivative1(x)
                + phi.evaluator(x) * q.derivative2(x))

    return _as_profile(f0, f1, f2, period=2.0, resolve_hint=phi.resolve_hint,
                       name=f"q_t[{t:g}]")


# ---------------------------------------------------------------------------
# the oscillation cascade h

@dataclass(frozen=True)
class CascadeSpec:
    """Skeleton of the alternating bump cascade.

    ``points`` is the strictly decreasing sequence x_1 > ... > x_N inside
    (x_inf, 3/4); bump i lives on (x_{i+1}, x_i) and carries the signed mass
    (-1)^(i+1) * amplitudes[i-1].  ``dominance_C`` is the constant the head
    integral must dominate the tail sum by, for every i <= N-2.
    """

    x_inf: float
    points: tuple[float, ...]
    dominance_C: float
    amplitudes: tuple[float, ...]

    @property
    def depth(self) -> int:
        return len(self.points)

    @classmethod
    def geometric(cls, x_inf: float = 0.6, depth: int = 16, margin: float = 0.01,
                  amplitude_ratio: float = 4.0, dominance_C: float = 2.0) -> "CascadeSpec":
        """Dyadic skeleton x_i = x_inf + 2^-i (3/4 - x_inf - margin) with
        amplitudes amplitude_ratio^-i; dominance is then a geometric-series
        identity (ratio r needs r - 1 >= C, e.g. r = 4, C = 2)."""
        if not 0.5 < x_inf < 0.75:
            raise SpecViolation("x_inf must lie in (1/2, 3/4)")
        if depth < 4:
            raise SpecViolation("cascade depth must be at least 4")
        w = 0.75 - x_inf - margin
        if w <= 0:
            raise SpecViolation("margin leaves no room for the cascade")
        pts = tuple(x_inf + w * 2.0 ** (-i) for i in range(1, depth + 1))
        amps = tuple(amplitude_ratio ** (-i) for i in range(1, depth))
        return cls(x_inf=x_inf, points=pts, dominance_C=dominance_C, amplitudes=amps)

    @classmethod
    def moment_dominant(cls, x_inf: float = 0.6, depth: int = 8, margin: float = 0.01,
                        dominance_C: float = 2.0, safety: float = 1.6) -> "CascadeSpec":
        """Cascade satisfying the first-moment dominance
        |int (x_i - x) h dx| >= C sum_{j>i} |int h|.

        The moment of the symmetric unit bump over an interval of length L is
        exactly (L/2) * |int h|, so the inequality forces the mass ratio
        a_{i+1}/a_i below L_i/(2C): amplitudes decay super-geometrically and
        the usable depth is limited by floating-point dynamic range (the
        geometric law above satisfies the plain dominance only).  An
        equal-length skeleton maximises the product of interval lengths and
        hence the reachable depth."""
        if not 0.5 < x_inf < 0.75:
            raise SpecViolation("x_inf must lie in (1/2, 3/4)")
        if depth < 4:
            raise SpecViolation("cascade depth must be at least 4")
        w = 0.75 - x_inf - margin
        if w <= 0:
            raise SpecViolation("margin leaves no room for the cascade")
        L = w / depth
        pts = tuple(x_inf + w - i * L for i in range(depth))
        amps = [0.25]
        for i in range(1, depth - 1):
            amps.append(amps[-1] * (L / 2.0) / (dominance_C * safety))
        return cls(x_inf=x_inf, points=pts, dominance_C=dominance_C,
                   amplitudes=tuple(amps))

    def validate(self) -> None:
        pts = np.asarray(self.points)
        if not 0.5 < self.x_inf < 0.75:
            raise SpecViolation("x_inf must lie in (1/2, 3/4)")
        if np.any(np.diff(pts) >= 0):
            raise SpecViolation("cascade points must be strictly decreasing")
        if pts[0] >= 0.75 or pts[-1] <= self.x_inf:
            raise SpecViolation("cascade points must lie in (x_inf, 3/4)")
        if self.dominance_C <= 1.0:
            raise SpecViolation("dominance constant must exceed 1")
        amps = np.asarray(self.amplitudes)
        if len(amps) != self.depth - 1 or np.any(amps <= 0):
            raise SpecViolation("need depth-1 positive amplitudes")
        tails = np.cumsum(amps[::-1])[::-1]
        for i in range(self.depth - 2):       # 1-based i <= N-2
            if amps[i] < self.dominance_C * tails[i + 1]:
                raise SpecViolation(
                    f"amplitude {i + 1} fails dominance: {amps[i]:.3e} < "
                    f"{self.dominance_C} * {tails[i + 1]:.3e}")

    def scaled_points(self, t: float) -> np.ndarray:
        """The node sequence 4^-t x_i of the cascade implanted at site t."""
        return 4.0 ** (-t) * np.asarray(self.points)

    def interval_lengths(self) -> np.ndarray:
        pts = np.asarray(self.points)
        return pts[:-1] - pts[1:]


def make_h(spec: CascadeSpec) -> ProfileFunction:
    """Even cascade profile: one full-width bump per interval (x_{i+1}, x_i).

    Bump i is strictly positive on the whole open interval for odd i and
    strictly negative for even i, with |integral| = amplitudes[i-1]; support
    is contained in (1/2, 3/4) and its mirror.
    """
    spec.validate()
    pts = np.asarray(spec.points)            # decreasing
    amps = np.asarray(spec.amplitudes)
    lens = spec.interval_lengths()
    signs = np.array([(-1.0) ** (i + 1) for i in range(1, spec.depth)])
    scales = signs * amps / (lens * BUMP_UNIT_INTEGRAL)

    def jet(x):
        w = wrap_period2(x)
        y = np.abs(w)
        sgn = np.sign(w)
        # pts is decreasing; locate y's interval via the ascending reversal
        asc = pts[::-1]
        idx = np.searchsorted(asc, y)        # y in (asc[idx-1], asc[idx])
        inband = (idx > 0) & (idx < spec.depth)
        ii = np.where(inband, spec.depth - 1 - idx, 0)   # 0-based bump index
        a = pts[np.minimum(ii + 1, spec.depth - 1)]
        b = pts[ii]
        r, r1, r2 = _bump_jet_arrays(y, a, b, inband)
        sc = scales[np.minimum(ii, spec.depth - 2)]
        f = np.where(inband, sc * r, 0.0)
        fy = np.where(inband, sc * r1, 0.0)
        fyy = np.where(inband, sc * r2, 0.0)
        return f, fy * sgn, fyy

    hints = tuple((float(pts[i + 1]), float(pts[i]), float(lens[i]) / 50.0)
                  for i in range(spec.depth - 1))
    return _as_profile(
        lambda x: jet(x)[0], lambda x: jet(x)[1], lambda x: jet(x)[2],
        period=None,
        support_hint=tuple((float(pts[i + 1]), float(pts[i])) for i in range(spec.depth - 1)),
        resolve_hint=hints,
        name=f"h[N={spec.depth}]",
    )


def _bump_jet_arrays(x, a, b, inside):
    """_bump_jet with per-point interval endpoints (vectorised helper)."""
    P = (x - a) * (b - x)
    ok = inside & (P > 0.0)
    Ps = np.where(ok, P, 1.0)
    P1 = a + b - 2.0 * x
    s = 0.25 * (b - a) ** 2
    with np.errstate(over="ignore", under="ignore"):
        r = np.exp(-s / Ps)
        g1 = s * P1 / Ps**2
        r1 = r * g1
        r2 = r * (g1 * g1 - 2.0 * s / Ps**2 - 2.0 * s * P1 * P1 / Ps**3)
    z = np.zeros_like(Ps)
    return np.where(ok, r, z), np.where(ok, r1, z), np.where(ok, r2, z)


def make_h_t(h: ProfileFunction, t: float) -> ProfileFunction:
    """h(4^t x): the cascade shrunk to live inside (4^-t/2, 3*4^-t/4)."""
    s = 4.0 ** t
    return _as_profile(
        lambda x: h.evaluator(s * x),
        lambda x: s * h.derivative1(s * x),
        lambda x: s * s * h.derivative2(s * x),
        period=None,
        support_hint=tuple((a / s, b / s) for a, b in (h.support_hint or ())),
        resolve_hint=tuple((a / s, b / s, c / s) for a, b, c in h.resolve_hint),
        name=f"h_t[{t:g}]",
    )


def make_H_t(h: ProfileFunction, t: float) -> ProfileFunction:
    """2-periodisation sum_n h(4^t(x+2n)); exact by argument reduction."""
    ht = make_h_t(h, t)

    def f0(x):
        return ht.evaluator(wrap_period2(x))

    def f1(x):
        return ht.derivative1(wrap_period2(x))

    def f2(x):
        return ht.derivative2(wrap_period2(x))

    return _as_profile(f0, f1, f2, period=2.0, resolve_hint=ht.resolve_hint,
                       name=f"H_t[{t:g}]")


# ---------------------------------------------------------------------------
# site assignments and the implanted profile q_{S,tau}

@dataclass(frozen=True)
class SiteAssignment:
    """A finite 1-separated site set S in [1, inf) with intensities tau."""

    sites: tuple[float, ...]
    intensities: tuple[float, ...]

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "SiteAssignment":
        pairs = sorted(pairs, key=lambda p: -p[0])     # descending t
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def validate(self) -> None:
        ts = np.asarray(self.sites)
        if len(ts) != len(self.intensities):
            raise SpecViolation("sites and intensities must have equal length")
        if len(ts) == 0:
            return
        if np.any(ts < 1.0):
            raise SpecViolation("sites must lie in [1, infinity)")
        srt = np.sort(ts)
        if len(srt) > 1 and np.min(np.diff(srt)) < 1.0:
            raise SpecViolation("sites must be 1-separated")

    def descending(self) -> list[tuple[float, float]]:
        order = np.argsort(self.sites)[::-1]
        return [(self.sites[i], self.intensities[i]) for i in order]


def make_q_s_tau(q: ProfileFunction, h: ProfileFunction,
                 assignment: SiteAssignment,
                 spec: CascadeSpec | None = None) -> ProfileFunction:
    """Implant the cascade h at every site of the assignment.

    Recursively (processed in descending t; the zones (4^-t-1, 4^-t) are
    disjoint for 1-separated sites, so the order is immaterial):

        q_{S,tau} = phi_t * (q_{S'} - q_{S'}(4^-t)) + q_{S'}(4^-t) + tau(t) H_t

    The result differs from q only inside the union of the zones, and takes
    the exact value q(4^-t) at the cascade centre 4^-t x_inf of each site.
    """
    assignment.validate()
    sites = assignment.descending()
    psi = make_psi()

    zone = []
    for t, tau in sites:
        hi = 4.0 ** (-t)
        lo = 0.25 * hi
        qc = float(q.evaluator(hi))
        zone.append((t, tau, lo, hi, qc))

    def jet(x, order):
        w = wrap_period2(x)
        y = np.abs(w)
        sgn = np.sign(w)
        f = q.evaluator(w)
        f1 = q.derivative1(w) if order >= 1 else None
        f2 = q.derivative2(w) if order >= 2 else None
        for t, tau, lo, hi, qc in zone:
            mask = (y > lo) & (y < hi)
            if not np.any(mask):
                continue
            s = 1.0 / hi                      # = 4^t
            z = y * s
            pv = psi.evaluator(z)
            hv = h.evaluator(z)
            qv = q.evaluator(y)
            val = (1.0 - pv) * (qv - qc) + qc + tau * hv
            f = np.where(mask, val, f)
            if order >= 1:
                p1 = psi.derivative1(z) * s
                h1 = h.derivative1(z) * s
                q1 = q.derivative1(w) * sgn   # d/dy of q at y
                d1 = -p1 * (qv - qc) + (1.0 - pv) * q1 + tau * h1
                f1 = np.where(mask, d1 * sgn, f1)
            if order >= 2:
                p2 = psi.derivative2(z) * s * s
                h2 = h.derivative2(z) * s * s
                q1 = q.derivative1(w) * sgn
                q2 = q.derivative2(w)
                d2 = (-p2 * (qv - qc) - 2.0 * p1 * q1
                      + (1.0 - pv) * q2 + tau * h2)
                f2 = np.where(mask, d2, f2)
        return f, f1, f2

    # h lives at unit scale; inside the zone of site t everything shrinks by 4^-t
    hints = []
    for t, tau, lo, hi, qc in zone:
        hints.append((lo, hi, 0.75 * hi / 50.0))
        hints.append((-hi, -lo, 0.75 * hi / 50.0))
        for a, b, cap in (h.resolve_hint or ()):
            if a > 0:
                hints.append((a * hi, b * hi, cap * hi))
                hints.append((-b * hi, -a * hi, cap * hi))

    from . import kernels
    kern = None
    if q.kernel is not None and spec is not None:
        kern = kernels.qstau_kernel(q.kernel, spec, zone)

    return _as_profile(
        lambda x: jet(x, 0)[0],
        lambda x: jet(x, 1)[1],
        lambda x: jet(x, 2)[2],
        period=2.0,
        resolve_hint=tuple(hints),
        kernel=kern,
        name=f"q_S_tau[k={len(sites)}]",
    )


# ---------------------------------------------------------------------------
# the lower companion q_tilde

def make_q_tilde(q: ProfileFunction, *, level: float = 0.5) -> ProfileFunction:
    """Even 2-periodic companion pinched below q.

    Equals q(5x) exactly on [0, 1/5], then blends smoothly into the constant
    level*q(1) on [2/9, 1]:  q~ = (1 - rho) q(5x) + rho * v0  with a smooth
    step rho rising 0 -> 1 across [1/5, 2/9].  Since 2 - 5x > 4x on
    (1/5, 2/9), q(5x) < q(4x) there, and any convex combination with
    v0 < q(1) stays below q(4x); on [2/9, 1] the value is v0 < q(1).
    """
    if not 0.0 < level < 1.0:
        raise SpecViolation("level must lie in (0, 1)")
    v0 = level * float(q.evaluator(1.0))
    lo, hi = 0.2, 2.0 / 9.0
    width = hi - lo

    def jet(x, order):
        w = wrap_period2(x)
        y = np.abs(w)
        sgn = np.sign(w)
        rho, rho1, rho2 = _step_jet((y - lo) / width)
        rho1 = rho1 / width
        rho2 = rho2 / width**2
        base = q.evaluator(5.0 * y)
        f = (1.0 - rho) * base + rho * v0
        if order == 0:
            return f, None, None
        b1 = 5.0 * q.derivative1(5.0 * y)
        d1 = rho1 * (v0 - base) + (1.0 - rho) * b1
        if order == 1:
            return f, d1 * sgn, None
        b2 = 25.0 * q.derivative2(5.0 * y)
        d2 = rho2 * (v0 - base) - 2.0 * rho1 * b1 + (1.0 - rho) * b2
        return f, d1 * sgn, d2

    from . import kernels
    kern = kernels.qtilde_kernel(q.kernel, v0) if q.kernel is not None else None

    return _as_profile(
        lambda x: jet(x, 0)[0],
        lambda x: jet(x, 1)[1],
        lambda x: jet(x, 2)[2],
        period=2.0, kernel=kern, name="q_tilde",
    )


# ---------------------------------------------------------------------------
# sandwich verification

@dataclass
class SandwichReport:
    """Outcome of the two-sided comparison q_tilde <= q_{S,tau} <= q."""

    ok: bool
    lower_margin: float          # min(q_{S,tau} - q_tilde) over the grid
    upper_margin: float          # min(q - q_{S,tau}) over the grid
    worst_lower_x: float
    worst_upper_x: float
    n_points: int
    case_margins: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def sandwich_grid(assignment: SiteAssignment, n_uniform: int = 200_000,
                  n_zone: int = 20_000, exclusion: float | None = None) -> np.ndarray:
    """Verification grid over one period: uniform background plus a fine
    cluster inside every cascade zone.  Points within ``exclusion`` of 0 are
    dropped: there q, q_{S,tau} and q_tilde agree to all orders by
    construction, so the comparison is vacuous (and floating-point ties
    would report zero slack)."""
    tmax = max(assignment.sites) if assignment.sites else 1.0
    if exclusion is None:
        exclusion = 4.0 ** (-tmax - 2.0)
    xs = [np.linspace(exclusion, 2.0 - exclusion, n_uniform)]
    for t in assignment.sites:
        hi = 4.0 ** (-t)
        xs.append(np.linspace(0.25 * hi, hi, n_zone))
        xs.append(2.0 - np.linspace(0.25 * hi, hi, n_zone))
    return np.unique(np.concatenate(xs))


def verify_sandwich(q_tilde: ProfileFunction, q_s_tau: ProfileFunction,
                    q: ProfileFunction, grid: np.ndarray) -> SandwichReport:
    """Check q_tilde <= q_{S,tau} <= q on the grid.

    The upper margin is zero wherever the grid leaves the cascade zones
    (there q_{S,tau} == q identically), so ``ok`` requires margins >= 0 while
    the reported minimum slack of interest is the lower one.  The breakdown
    reproduces the three comparison regimes on (0, 1]: against q(5x) via
    q(4x) on (0, 1/5], against q(4x) on [1/5, 2/9], against q(1) beyond.
    """
    grid = np.asarray(grid, dtype=float)
    qt = q_tilde.evaluator(grid)
    qs = q_s_tau.evaluator(grid)
    qq = q.evaluator(grid)
    low = qs - qt
    upp = qq - qs
    i_lo = int(np.argmin(low))
    i_up = int(np.argmin(upp))
    y = np.abs(wrap_period2(grid))
    cases = {}
    for name, mask in (("(0,1/5]", (y > 0) & (y <= 0.2)),
                       ("[1/5,2/9]", (y >= 0.2) & (y <= 2.0 / 9.0)),
                       ("[2/9,1]", (y >= 2.0 / 9.0))):
        if np.any(mask):
            cases[name] = float(np.min(low[mask]))
    ok = bool(low[i_lo] >= 0.0 and upp[i_up] >= -1e-15)
    return SandwichReport(
        ok=ok,
        lower_margin=float(low[i_lo]),
        upper_margin=float(upp[i_up]),
        worst_lower_x=float(grid[i_lo]),
        worst_upper_x=float(grid[i_up]),
        n_points=len(grid),
        case_margins=cases,
    )


# ---------------------------------------------------------------------------
# export

def export_profile_csv(path, xs: np.ndarray, profiles: dict[str, ProfileFunction],
                       derivatives: bool = True) -> None:
    """Write dense samples as CSV: x, then f (, f', f'') per profile."""
    xs = np.asarray(xs, dtype=float)
    cols = [("x", xs)]
    for name, p in profiles.items():
        cols.append((name, p.evaluator(xs)))
        if derivatives:
            cols.append((name + "_d1", p.derivative1(xs)))
            cols.append((name + "_d2", p.derivative2(xs)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(c[0] for c in cols) + "\n")
        data = np.column_stack([c[1] for c in cols])
        for row in data:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
