"""Self-similar shocks: jump partners, admissibility and Hugoniot loci.

In the variables ``R = |C|^ell``, ``W = 1 + V``, ``M = R W`` the jump
conditions keep ``M`` fixed and require ``f_M(R-) = f_M(R+)`` with
``f_M(R) = M^2/R + R^gamma/gamma``.  Dividing out the trivial root gives a
monotone equation for the ratio ``q = R'/R``::

    q (q^gamma - 1) / (q - 1) = gamma (1 + V)^2 / C^2

which is how :func:`jump_partner` computes the partner.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, root

from .core import Derived, PhasePoint, region_of
from .ode import Trajectory, active_tolerances

log = logging.getLogger(__name__)

_PAIRED = {
    "S1m": ("S1p", "one_shock", True),
    "S1p": ("S1m", "one_shock", False),
    "S2m": ("S2p", "two_shock", True),
    "S2p": ("S2m", "two_shock", False),
    "T1m": ("T1p", "one_shock", True),
    "T1p": ("T1m", "one_shock", False),
    "T2m": ("T2p", "two_shock", True),
    "T2p": ("T2m", "two_shock", False),
}


class SonicInputError(ValueError):
    """Jump requested from a point on a critical line."""


class NoIntersectionError(RuntimeError):
    """A trajectory and a Hugoniot locus do not cross."""


@dataclass(frozen=True)
class RWMState:
    R: float
    W: float
    M: float

    @classmethod
    def from_point(cls, p, d: Derived) -> "RWMState":
        R = abs(p[1]) ** d.ell
        W = 1.0 + p[0]
        return cls(R, W, R * W)


@dataclass(frozen=True)
class ShockPair:
    P_minus: PhasePoint
    P_plus: PhasePoint
    family: str
    xi_s: float | None = None


def f_m_eval(m: float, R: float, gamma: float) -> float:
    """``m^2/R + R^gamma/gamma``."""
    if R <= 0:
        raise ValueError("R must be positive")
    return m * m / R + R**gamma / gamma


def R_star(m: float, gamma: float) -> float:
    """Minimiser of ``f_m``: ``|m|^(2/(gamma+1))``."""
    return abs(m) ** (2.0 / (gamma + 1.0))


def rh_residual(Pm, Pp, d: Derived) -> tuple[float, float]:
    """Jumps of ``|C|^ell (1+V)`` and ``|C|^ell ((1+V)^2 + C^2/gamma)``."""
    def q(p):
        R = abs(p[1]) ** d.ell
        W = 1.0 + p[0]
        return R * W, R * (W * W + p[1] ** 2 / d.gamma)

    a1, a2 = q(Pm)
    b1, b2 = q(Pp)
    return a1 - b1, a2 - b2


def rh_residual_relative(Pm, Pp, d: Derived) -> tuple[float, float]:
    r1, r2 = rh_residual(Pm, Pp, d)

    def q(p):
        R = abs(p[1]) ** d.ell
        W = 1.0 + p[0]
        return abs(R * W), R * (W * W + p[1] ** 2 / d.gamma)

    a1, a2 = q(Pm)
    b1, b2 = q(Pp)
    s1 = max(a1, b1, 1e-300)
    s2 = max(a2, b2, 1e-300)
    return abs(r1) / s1, abs(r2) / s2


def _log_psi(t: float, gamma: float) -> float:
    """``ln[q (q^gamma - 1)/(q - 1)]`` at ``q = e^t``."""
    if abs(t) < 1e-8:
        return t + math.log(gamma) + 0.5 * (gamma - 1.0) * t
    if t > 0:
        return t + gamma * t + math.log1p(-math.exp(-gamma * t)) - t - math.log1p(-math.exp(-t))
    return t + math.log1p(-math.exp(gamma * t)) - math.log1p(-math.exp(t))


def partner_ratio(V: float, C: float, gamma: float) -> float:
    """``q = R'/R`` of the nontrivial jump partner of ``(V, C)``."""
    L = math.log(gamma) + 2.0 * (math.log(abs(1.0 + V)) - math.log(abs(C)))
    lg = math.log(gamma)
    if L > lg:
        lo, hi = (L - lg) / gamma, L - lg
    else:
        lo, hi = L - lg, min(L, 0.0)
    lo -= 1e-12 * (1 + abs(lo))
    hi += 1e-12 * (1 + abs(hi))
    g = lambda t: _log_psi(t, gamma) - L
    t = brentq(g, lo, hi, xtol=active_tolerances().jump_xtol, rtol=1e-15, maxiter=500)
    return math.exp(t)


def jump_partner(p, d: Derived, sign_xi_over_lambda: float) -> ShockPair:
    """Unique admissible jump partner of ``p`` (left/right roles from its region)."""
    V, C = float(p[0]), float(p[1])
    reg = region_of((V, C), sign_xi_over_lambda)
    if reg == "on_critical_line":
        raise SonicInputError(f"({V}, {C}) lies on a critical line")
    _, family, p_is_left = _PAIRED[reg]
    W = 1.0 + V
    q = partner_ratio(V, C, d.gamma)
    R = abs(C) ** d.ell
    Rp = q * R
    Rs = R_star(R * W, d.gamma)
    if (R - Rs) * (Rp - Rs) > 0:
        raise RuntimeError("jump roots do not straddle R*")
    Cp = math.copysign(abs(C) * q ** (1.0 / d.ell), C)
    Vp = W / q - 1.0
    P, Q = PhasePoint(V, C), PhasePoint(Vp, Cp)
    return ShockPair(P, Q, family) if p_is_left else ShockPair(Q, P, family)


def partner_point(p, d: Derived, sign_xi_over_lambda: float) -> PhasePoint:
    """The partner state only (whichever role it plays)."""
    pair = jump_partner(p, d, sign_xi_over_lambda)
    P = PhasePoint(float(p[0]), float(p[1]))
    return pair.P_plus if pair.P_minus == P else pair.P_minus


def admissible(pair: ShockPair, lam: float, xi_s: float, d: Derived | None = None,
               rh_tol: float = 1e-10) -> bool:
    """Strict entropy inequalities of the pair's family at ``xi_s``.

    With ``d`` given the jump conditions are also checked to relative
    tolerance ``rh_tol``.
    """
    if xi_s == 0:
        raise ValueError("xi_s must be nonzero")
    (Vm, Cm), (Vp, Cp) = pair.P_minus, pair.P_plus
    if Cm == 0 or Cp == 0 or math.copysign(1, Cm) != math.copysign(1, Cp):
        return False
    if d is not None:
        r1, r2 = rh_residual_relative(pair.P_minus, pair.P_plus, d)
        if r1 > rh_tol or r2 > rh_tol:
            return False
    w = xi_s / lam
    if pair.family == "one_shock":
        return w * (Cm - Vm) > w > w * (Cp - Vp)
    return -w * (Cm + Vm) > w > -w * (Cp + Vp)


# ---------------------------------------------------------------------------
# loci


@dataclass(frozen=True)
class HugoniotLocus:
    """Partners of the points of ``source``; ``u`` indexes the source curve."""

    source: Trajectory
    u: np.ndarray
    s: np.ndarray
    V_src: np.ndarray
    C_src: np.ndarray
    V: np.ndarray
    C: np.ndarray
    sign: float

    @property
    def points(self):
        xi = self.source.xi_sign * np.exp(self.s)
        return [(x, PhasePoint(v, c)) for x, v, c in zip(xi, self.V, self.C)]

    def to_csv(self, path, header: str = "") -> None:
        from ._io import write_csv

        xi = self.source.xi_sign * np.exp(self.s)
        write_csv(path, ["xi_source", "V_source", "C_source", "V_partner", "C_partner"],
                  zip(xi, self.V_src, self.C_src, self.V, self.C), header)


def _locus_sign(traj: Trajectory) -> float:
    return traj.xi_sign * (1.0 if traj.lam > 0 else -1.0)


def _partner_or_self(V, C, d, sgn):
    try:
        return partner_point((V, C), d, sgn)
    except SonicInputError:
        # limit on a critical line: the partner merges with the point
        return PhasePoint(V, C)


def hugoniot_locus(traj: Trajectory, d: Derived, spacing: float = 1e-2, max_refine: int = 6) -> HugoniotLocus:
    """Pointwise partners along ``traj`` with midpoints inserted where they spread."""
    sgn = _locus_sign(traj)
    us = list(traj.u)
    pts = {}
    for u, s, V, C in zip(traj.u, traj.s, traj.V, traj.C):
        pts[u] = (s, V, C, *_partner_or_self(V, C, d, sgn))
    for _ in range(max_refine):
        us = sorted(pts)
        new = []
        for a, b in zip(us[:-1], us[1:]):
            pa, pb = pts[a], pts[b]
            if math.hypot(pa[3] - pb[3], pa[4] - pb[4]) > spacing and traj.pieces:
                new.append(0.5 * (a + b))
        if not new:
            break
        for u in new:
            V, C, s = traj.at(u)
            pts[u] = (s, V, C, *_partner_or_self(V, C, d, sgn))
    us = sorted(pts)
    if traj.u[0] > traj.u[-1]:
        us = us[::-1]
    arr = np.array([pts[u] for u in us])
    return HugoniotLocus(traj, np.array(us), arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], sgn)


def asymptotic_hug_slope(k: float, gamma: float, ell: float) -> float:
    """Limiting slope of the Hugoniot locus of a trajectory with slope ``k`` at infinity."""
    if k == 0:
        raise ValueError("k must be nonzero")
    k2 = k * k
    if abs(k2 - 1.0) < 1e-14:
        return k
    g = lambda w: w ** (2 * (ell + 1)) / k2 - (1.0 / k2 + 1.0 / gamma) * w ** (ell + 2) + 1.0 / gamma
    wbar = ((gamma + k2) / (gamma + 1.0)) ** (1.0 / ell)
    if k2 < 1.0:
        w = brentq(g, 0.0, wbar, xtol=1e-15, rtol=1e-15)
    else:
        hi = 2.0 * wbar
        while g(hi) < 0:
            hi *= 2.0
        w = brentq(g, wbar, hi, xtol=1e-15, rtol=1e-15)
    return k * w ** (-1.0 - ell)


# ---------------------------------------------------------------------------
# intersection


@dataclass(frozen=True)
class Intersection:
    pair: ShockPair
    xi_s: float
    s_traj: float
    s_source: float
    u_traj: float
    u_source: float
    n_crossings: int
    crossings: tuple = field(default=())


def _segment_crossings(ax, ay, bx, by):
    """Index pairs (i, j) and fractions where segment i of a crosses segment j of b."""
    p = np.stack([ax[:-1], ay[:-1]], axis=1)
    r = np.stack([np.diff(ax), np.diff(ay)], axis=1)
    q = np.stack([bx[:-1], by[:-1]], axis=1)
    sv = np.stack([np.diff(bx), np.diff(by)], axis=1)
    out = []
    chunk = max(1, 2_000_000 // max(len(q), 1))
    for i0 in range(0, len(p), chunk):
        P = p[i0:i0 + chunk, None, :]
        Rr = r[i0:i0 + chunk, None, :]
        den = Rr[..., 0] * sv[None, :, 1] - Rr[..., 1] * sv[None, :, 0]
        qp = q[None, :, :] - P
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[..., 0] * sv[None, :, 1] - qp[..., 1] * sv[None, :, 0]) / den
            u = (qp[..., 0] * Rr[..., 1] - qp[..., 1] * Rr[..., 0]) / den
        ok = (den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
        for i, j in zip(*np.nonzero(ok)):
            out.append((i0 + i, j, float(t[i, j]), float(u[i, j])))
    out.sort()
    return out


def intersect_locus(traj: Trajectory, locus: HugoniotLocus, d: Derived) -> Intersection:
    """First crossing (along ``traj``) of ``traj`` with ``locus``.

    The polyline crossing is refined by solving
    ``traj(u1) = partner(source(u2))`` for both curve parameters.
    """
    cr = _segment_crossings(traj.V, traj.C, locus.V, locus.C)
    # drop degenerate touches at shared endpoints on the critical lines
    cr = [c for c in cr if not _is_sonic_touch(traj, locus, c)]
    if not cr:
        raise NoIntersectionError("trajectory does not cross the Hugoniot locus")
    if len(cr) > 1:
        log.warning("trajectory crosses the Hugoniot locus %d times; using the first", len(cr))
    i, j, t, w = cr[0]
    u1 = traj.u[i] + t * (traj.u[i + 1] - traj.u[i])
    u2 = locus.u[j] + w * (locus.u[j + 1] - locus.u[j])
    src = locus.source
    sgn = locus.sign
    lo1, hi1 = sorted((traj.u[i], traj.u[i + 1]))
    lo2, hi2 = sorted((locus.u[j], locus.u[j + 1]))
    sc1 = max(hi1 - lo1, 1e-300)
    sc2 = max(hi2 - lo2, 1e-300)

    def resid(x):
        a = lo1 + x[0] * sc1
        b = lo2 + x[1] * sc2
        V1, C1, _ = traj.at(a)
        V2, C2, _ = src.at(b)
        P = partner_point((V2, C2), d, sgn)
        return [V1 - P.V, C1 - P.C]

    x0 = [(u1 - lo1) / sc1, (u2 - lo2) / sc2]
    sol = root(resid, x0, method="hybr", options={"xtol": 1e-14})
    if sol.success and all(-0.5 <= v <= 1.5 for v in sol.x):
        u1 = lo1 + sol.x[0] * sc1
        u2 = lo2 + sol.x[1] * sc2
    V1, C1, s1 = traj.at(u1)
    V2, C2, s2 = src.at(u2)
    pair = jump_partner((V2, C2), d, sgn)
    xi_s = traj.xi_sign * math.exp(s1)
    pair = replace(pair, xi_s=xi_s)
    return Intersection(pair, xi_s, s1, s2, u1, u2, len(cr), tuple(cr))


def _is_sonic_touch(traj, locus, c):
    i, j, t, w = c
    V = traj.V[i] + t * (traj.V[i + 1] - traj.V[i])
    C = traj.C[i] + t * (traj.C[i + 1] - traj.C[i])
    return abs(abs(C) - abs(1.0 + V)) < 1e-7 * (1.0 + abs(C))
