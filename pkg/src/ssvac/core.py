"""Algebra of the similarity system for isentropic flow next to a vacuum.

The self-similar ansatz ``u = -(1/lam)(x/t) V(xi)``, ``c = -(1/lam)(x/t) C(xi)``
with ``xi = t**(-1/lam) x`` reduces the Euler equations to

    dV/dxi = G / (xi D),    dC/dxi = F / (xi D)

with the polynomials evaluated by :func:`eval_FGD`.  This module holds the
parameter bookkeeping, critical points and the region table used by the
jump solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

#: relative threshold for "equal to zero" decisions
ZERO_TOL = 1e-10
#: gamma closer than this to 3 is treated as gamma == 3
GAMMA3_TOL = 1e-10
#: half-width of the band around the critical lines in region_of
REGION_TOL = 1e-9


class ParameterError(ValueError):
    """Raised for parameters outside the admissible range."""


class SignConditionError(ValueError):
    """Raised when C has the wrong sign for the given sign of xi/lambda."""


class PhasePoint(NamedTuple):
    V: float
    C: float


@dataclass(frozen=True)
class Params:
    """Problem data: ``p = a^2 rho^gamma`` and ``u = Ma c_plus x^(1-lam)`` at t=0."""

    gamma: float
    lam: float
    mach: float = 0.0
    a: float = 1.0
    c_plus: float = 1.0

    def __post_init__(self):
        validate(self)

    @property
    def u_plus(self) -> float:
        return self.mach * self.c_plus

    def with_mach(self, mach: float) -> "Params":
        return Params(self.gamma, self.lam, mach, self.a, self.c_plus)


def validate(p: Params) -> None:
    for name in ("gamma", "lam", "mach", "a", "c_plus"):
        v = getattr(p, name)
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParameterError(f"{name} must be a finite real, got {v!r}")
    if p.gamma <= 1.0:
        raise ParameterError(f"gamma must exceed 1, got {p.gamma}")
    if p.lam == 0.0 or p.lam >= 1.0:
        raise ParameterError(f"lambda must lie in (-inf,0) or (0,1), got {p.lam}")
    if p.a <= 0.0:
        raise ParameterError(f"a must be positive, got {p.a}")
    if p.c_plus <= 0.0:
        raise ParameterError(f"c_plus must be positive, got {p.c_plus}")


@dataclass(frozen=True)
class Derived:
    """Constants derived from (gamma, lambda); computed once by :func:`derive`."""

    gamma: float
    lam: float
    ell: float
    V_star: float
    k1: float
    k0: float
    lambda_hat: float
    gamma_is_3: bool = field(default=False)

    @property
    def inv_ell(self) -> float:
        return 1.0 / self.ell


def derive(p: Params | tuple[float, float]) -> Derived:
    """Derived constants ``ell, V*, k1, k0, lambda_hat``.

    Accepts a :class:`Params` or a bare ``(gamma, lam)`` tuple.
    """
    if isinstance(p, Params):
        gamma, lam = p.gamma, p.lam
    else:
        gamma, lam = p
        if gamma <= 1.0:
            raise ParameterError(f"gamma must exceed 1, got {gamma}")
        if lam == 0.0 or lam == 1.0:
            raise ParameterError(f"lambda must differ from 0 and 1, got {lam}")
    g3 = abs(gamma - 3.0) < GAMMA3_TOL
    ell = 1.0 if g3 else 2.0 / (gamma - 1.0)
    inv = 1.0 / ell
    lam_hat = (gamma - 3.0) / (3.0 * gamma - 5.0) if gamma != 5.0 / 3.0 else math.inf
    return Derived(
        gamma=gamma,
        lam=lam,
        ell=ell,
        V_star=ell * (1.0 - lam),
        k1=(inv - 1.0) * (lam - 1.0),
        k0=inv * (lam - 1.0),
        lambda_hat=lam_hat,
        gamma_is_3=g3,
    )


def eval_FGD(V, C, d: Derived):
    """Return ``(F, G, D)``; works elementwise on arrays."""
    lam = d.lam
    W = 1.0 + V
    C2 = C * C
    D = W * W - C2
    G = C2 * (V - d.V_star) - V * W * (lam + V)
    F = C * (C2 - W * W + d.k1 * W - d.k0)
    return F, G, D


def jacobian_FG(V, C, d: Derived):
    """Partial derivatives ``(F_V, F_C, G_V, G_C)``."""
    lam = d.lam
    W = 1.0 + V
    G_V = C * C - (3.0 * V * V + 2.0 * (1.0 + lam) * V + lam)
    G_C = 2.0 * C * (V - d.V_star)
    F_V = C * (d.k1 - 2.0 * W)
    F_C = 3.0 * C * C - W * W + d.k1 * W - d.k0
    return F_V, F_C, G_V, G_C


@dataclass(frozen=True)
class CriticalPoint:
    id: str
    location: PhasePoint
    kind: str
    primary_slope: float | None = None
    secondary_slope: float | None = None
    xi_limit: str = "not_applicable"


def _eigen(V, C, d: Derived):
    """Eigen-slopes and rates of the reduced system at a critical point.

    Returns ``(W, R2, [(mu, L), (mu, L)])`` sorted by |mu| ascending, where
    ``L`` is dC/dV along the eigendirection and ``mu = G_V + L G_C``.
    """
    F_V, F_C, G_V, G_C = jacobian_FG(V, C, d)
    W = F_C * G_V - F_V * G_C
    R2 = (F_C + G_V) ** 2 - 4.0 * W
    if R2 < 0.0:
        return W, R2, []
    R = math.sqrt(R2)
    pairs = []
    for sgn in (1.0, -1.0):
        mu = 0.5 * (F_C + G_V + sgn * R)
        if abs(G_C) > ZERO_TOL * (1.0 + abs(F_V) + abs(mu)):
            L = (mu - G_V) / G_C
        elif abs(mu - G_V) > ZERO_TOL * (1.0 + abs(mu)):
            L = math.inf
        else:
            L = F_V / (mu - F_C) if abs(mu - F_C) > ZERO_TOL else 0.0
        pairs.append((mu, L))
    pairs.sort(key=lambda q: abs(q[0]))
    return W, R2, pairs


def p3_location(d: Derived) -> tuple[PhasePoint, PhasePoint]:
    V3 = -d.lam * d.ell / (d.ell + 1.0)
    C3 = abs(d.lam) / (d.ell + 1.0)
    return PhasePoint(V3, C3), PhasePoint(V3, -C3)


def p5_location(d: Derived) -> tuple[PhasePoint, PhasePoint]:
    if d.gamma_is_3:
        raise ParameterError("P5 and P6 are absent when gamma = 3")
    V5 = d.ell / (1.0 - d.ell)
    C5 = 1.0 / abs(d.ell - 1.0)
    return PhasePoint(V5, C5), PhasePoint(V5, -C5)


def p3_wronskian(d: Derived) -> float:
    """Wronskian at P3/P4; negative means saddle."""
    C3 = p3_location(d)[0].C
    return d.ell * C3 * C3 * (d.lam - 1.0) * ((d.gamma - 3.0) * d.lam + (d.gamma + 1.0))


def classify_P1(d: Derived | Params) -> tuple[float, str]:
    """Return ``(sigma1, 'saddle')``; the separatrix is ``C^2 = sigma1 (1+V)``."""
    if isinstance(d, Params):
        d = derive(d)
    g, lam = d.gamma, d.lam
    sigma1 = -g * (g - 1.0) * (1.0 - lam) / ((g - 1.0) + 2.0 * (1.0 - lam))
    return sigma1, "saddle"


def classify_P2(d: Derived | Params) -> tuple[float, str]:
    """Return ``(A, kind)`` with ``C ~ xi^A`` on approach to P2.

    ``A`` is only meaningful for ``0 < lam < 1`` (P2 reached as xi -> 0);
    for ``lam < 0`` it is negative and P2 is reached as xi -> infinity.
    """
    if isinstance(d, Params):
        d = derive(d)
    A = d.lam * d.inv_ell / (1.0 - d.lam)
    return A, ("star" if d.gamma_is_3 else "node")


def classify_triple(d: Derived | Params, which: str = "P5"):
    """Slopes at a triple point.

    Returns ``(L1, L2, W, R2)`` with ``L1`` the primary slope (the direction
    with the smaller eigenvalue in modulus) and ``L2`` the secondary one.
    When ``R2`` vanishes the node is degenerate and ``L1 == L2``.
    """
    if isinstance(d, Params):
        d = derive(d)
    if d.gamma_is_3:
        raise ParameterError("P5 and P6 are absent when gamma = 3")
    p5, p6 = p5_location(d)
    pt = p5 if which == "P5" else p6
    W, R2, pairs = _eigen(pt.V, pt.C, d)
    scale = (pt.C * (2.0 + (d.ell - 3.0) * (1.0 - d.lam))) ** 2
    if abs(R2) <= ZERO_TOL * (1.0 + scale) or not pairs:
        # both directions collapse onto the straight line through the origin
        L = pt.C / pt.V
        return L, L, W, max(R2, 0.0)
    return pairs[0][1], pairs[1][1], W, R2


def critical_points(p: Params | Derived) -> list[CriticalPoint]:
    """All critical points P0..P6 (P5/P6 omitted when gamma == 3)."""
    d = derive(p) if isinstance(p, Params) else p
    lam = d.lam
    pts = [CriticalPoint("P0", PhasePoint(0.0, 0.0), "star", None, None, "infinity" if lam > 0 else "zero")]
    sigma1, _ = classify_P1(d)
    # separatrix C^2 = sigma1 (1+V) is vertical in (V,C); primary is the V-axis
    pts.append(CriticalPoint("P1", PhasePoint(-1.0, 0.0), "saddle", 0.0, math.inf, "finite"))
    A, kind2 = classify_P2(d)
    B = lam / (1.0 - lam)
    if d.gamma_is_3:
        prim2, sec2 = None, None
    elif A < B if lam > 0 else A > B:
        prim2, sec2 = math.inf, 0.0
    else:
        prim2, sec2 = 0.0, math.inf
    pts.append(CriticalPoint("P2", PhasePoint(-lam, 0.0), kind2, prim2, sec2, "zero" if lam > 0 else "infinity"))

    p3, p4 = p3_location(d)
    wr = p3_wronskian(d)
    for name, pt in (("P3", p3), ("P4", p4)):
        W, R2, pairs = _eigen(pt.V, pt.C, d)
        if wr < 0:
            kind = "saddle"
        elif abs(R2) <= ZERO_TOL * (1.0 + abs(W)):
            kind = "degenerate_node"
        else:
            kind = "node"
        s1 = pairs[0][1] if pairs else None
        s2 = pairs[1][1] if pairs else None
        # along E+-, V - V3 ~ xi^(lam/(1-lam))
        pts.append(CriticalPoint(name, pt, kind, s1, s2, "zero" if lam > 0 else "infinity"))

    if not d.gamma_is_3:
        for name in ("P5", "P6"):
            pt = p5_location(d)[0 if name == "P5" else 1]
            L1, L2, W, R2 = classify_triple(d, name)
            if W < 0:
                kind = "triple_saddle"
            elif L1 == L2:
                kind = "degenerate_node"
            else:
                kind = "triple_node"
            pts.append(CriticalPoint(name, pt, kind, L1, L2, "finite"))
    return pts


def critical_point(p: Params | Derived, name: str) -> CriticalPoint:
    for cp in critical_points(p):
        if cp.id == name:
            return cp
    raise ParameterError(f"critical point {name} is absent for these parameters")


def in_cone(V, C) -> bool:
    """Membership of the open cone K = {|C| < |1+V|} bounded by L+-."""
    return abs(C) < abs(1.0 + V)


def p3_in_cone_predicted(d: Derived) -> bool:
    return (d.lam - 1.0) * ((d.gamma - 3.0) * d.lam + (d.gamma + 1.0)) < 0.0


def g_curve(V, d: Derived):
    """``C^2`` along the level set G = 0: ``V(1+V)(lam+V)/(V-V*)``."""
    return V * (1.0 + V) * (d.lam + V) / (V - d.V_star)


REGIONS = ("S1m", "S1p", "S2m", "S2p", "T1m", "T1p", "T2m", "T2p")


def region_of(p: PhasePoint | tuple[float, float], sign_xi_over_lambda: float) -> str:
    """Region tag of ``p`` for the given sign of xi/lambda.

    ``on_critical_line`` is returned inside a band of relative width 1e-9
    around L+ and L-.  Points with ``C == 0`` or ``V == -1`` off the critical
    lines belong to no region and raise ``ValueError``.
    """
    V, C = float(p[0]), float(p[1])
    W = 1.0 + V
    band = REGION_TOL * (1.0 + abs(W) + abs(C))
    if abs(C - W) <= band or abs(C + W) <= band:
        return "on_critical_line"
    if sign_xi_over_lambda > 0:
        if C > 0:
            raise SignConditionError(f"C={C} > 0 violates the sign condition for xi/lambda > 0")
    elif C < 0:
        raise SignConditionError(f"C={C} < 0 violates the sign condition for xi/lambda < 0")
    if C == 0.0 or W == 0.0:
        raise ValueError(f"point ({V}, {C}) lies on a region boundary")
    if C < 0:
        if W < 0:
            return "S1m" if W < C else "S1p"
        return "S2m" if C < -W else "S2p"
    if W > 0:
        return "T1m" if C < W else "T1p"
    return "T2m" if -W < C else "T2p"
