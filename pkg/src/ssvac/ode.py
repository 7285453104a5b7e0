"""Integration of the similarity ODEs.

With ``s = ln|xi|`` the system reads ``dV/ds = G/D``, ``dC/ds = F/D``.  The
integrator advances in phase-plane arclength and carries ``s`` as a third
state, which keeps vertical tangents (G = 0), the approach to triple points
and the approach to P1 regular; the sonic denominator only enters ``ds``.
Far from the origin the same scheme runs in the inverted variables
``W = 1/V``, ``Z = 1/C``.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .core import (
    Derived,
    Params,
    PhasePoint,
    classify_P1,
    critical_points,
    derive,
    eval_FGD,
    jacobian_FG,
    region_of,
)

RTOL = 1e-10
ATOL = 1e-12
LAUNCH_RADIUS = 1e-6
TRIPLE_DELTA = 1e-5
NODE_STOP = 1e-8
RADIUS_SWITCH = 1e4
INFINITY_RADII = (1e4, 1e5, 1e6)
MAX_STEPS = 10_000_000


@dataclass(frozen=True)
class Tolerances:
    """Integration tolerances used when a call does not pass its own."""

    rtol: float = RTOL
    atol: float = ATOL
    launch_radius: float = LAUNCH_RADIUS
    triple_delta: float = TRIPLE_DELTA
    jump_xtol: float = 1e-15  # root-solve tolerance of the shock-partner map, in ln(R'/R)

    def __post_init__(self):
        for name in ("rtol", "atol", "launch_radius", "triple_delta", "jump_xtol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")


_active = Tolerances()
_cache_clearers: list[Callable[[], None]] = []


def active_tolerances() -> Tolerances:
    return _active


@contextlib.contextmanager
def numerics(tol: Tolerances):
    """Run a block with ``tol`` as the default tolerances.

    Caches of trajectories built under other tolerances are dropped on entry
    and on exit.
    """
    global _active
    prev = _active
    _active = tol
    for clear in _cache_clearers:
        clear()
    try:
        yield tol
    finally:
        _active = prev
        for clear in _cache_clearers:
            clear()


class IntegrationError(RuntimeError):
    """Numerical failure while integrating a trajectory."""


class SonicError(IntegrationError):
    """Evaluation on a critical line away from a triple point."""


class VerticalTangent(IntegrationError):
    """G vanishes: the reduced slope dC/dV is infinite."""


class SingularDirectionError(IntegrationError):
    """Approach to infinity along one of the singular directions |C| = |V|."""


class FitError(IntegrationError):
    """Asymptotic coefficients did not converge."""


# ---------------------------------------------------------------------------
# right-hand sides


def rhs_log_xi(V, C, d: Derived, tol: float = 1e-14):
    """``(dV/ds, dC/ds) = (G/D, F/D)``."""
    F, G, D = eval_FGD(V, C, d)
    if abs(D) <= tol * (1.0 + V * V + C * C):
        raise SonicError(f"D vanishes at ({V}, {C})")
    return G / D, F / D


def rhs_reduced(V, C, d: Derived, tol: float = 1e-14):
    """Slope ``dC/dV = F/G`` of the reduced equation."""
    F, G, _ = eval_FGD(V, C, d)
    if abs(G) <= tol * (1.0 + abs(F)):
        raise VerticalTangent(f"G vanishes at ({V}, {C})")
    return F / G


def inverted_field(Wv, Z, d: Derived):
    """``(fW, fZ, Dinv)`` with ``dW/ds = fW/Dinv`` and ``dZ/ds = fZ/Dinv``."""
    lam = d.lam
    W1 = 1.0 + Wv
    Z2 = Z * Z
    W2 = Wv * Wv
    Dinv = Z2 * W1 * W1 - W2
    fW = Wv * (Z2 * W1 * (1.0 + lam * Wv) - W2 * (1.0 - d.V_star * Wv))
    fZ = Z * (Z2 * W1 * W1 - W2 - d.k1 * Z2 * Wv * W1 + d.k0 * W2 * Z2)
    return fW, fZ, Dinv


def inverted_AB(Wv, Z, d: Derived):
    """Higher-order terms of the inverted reduced equation."""
    A = Wv * Z**3 * (2.0 - d.k1 + d.lam * Wv)
    B = Wv**2 * (d.V_star * Wv**2 + Z**2 * (1.0 + d.lam + d.lam * Wv))
    return A, B


def rhs_inverted(Wv, Z, d: Derived, angle_tol: float = 1e-8):
    """Slope ``dZ/dW`` of the reduced equation in ``W = 1/V``, ``Z = 1/C``."""
    if Wv == 0.0 and Z == 0.0:
        raise SingularDirectionError("the origin of the inverted plane is singular")
    A, B = inverted_AB(Wv, Z, d)
    q = Z * Z - Wv * Wv
    r2 = Wv * Wv + Z * Z
    if abs(q) <= angle_tol * r2 and r2 < 1e-4:
        raise SingularDirectionError(f"({Wv}, {Z}) lies along a singular direction")
    num = Z * q + A
    den = Wv * q + B
    if den == 0.0:
        raise VerticalTangent(f"vertical slope at W={Wv}, Z={Z}")
    return num / den


def line_s(V, d: Derived, const: float):
    """``s`` along a straight trajectory ``C = +-V/ell`` as a function of V.

    Along either line ``dV/ds = -V (V - V3) / (V + ell/(ell+1))``; the
    separable equation integrates to this closed form.
    """
    a = d.ell / (d.ell + 1.0)
    return scalar_s(V, a, d.lam, const)


def scalar_s(Y, a: float, lam: float, const: float):
    """Closed form of ``dY/ds = -Y (Y + lam a) / (Y + a)``."""
    Y = np.asarray(Y, dtype=float)
    return const - np.log(np.abs(Y)) / lam + (1.0 - lam) / lam * np.log(np.abs(Y + lam * a))


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class EventSpec:
    """Termination condition for :func:`integrate`.

    ``kind`` is one of ``hit_critical_line``, ``hit_V_axis``,
    ``radius_exceeds`` (``value`` = radius), ``near_critical_point``
    (``target`` = id, ``value`` = distance), ``xi_reaches`` (``value`` = xi)
    or ``crosses_curve`` (``fn(V, C)`` changes sign).
    """

    kind: str
    value: float | None = None
    target: str | None = None
    fn: Callable[[float, float], float] | None = None
    terminal: bool = True

    @property
    def name(self) -> str:
        if self.kind == "near_critical_point":
            return f"near_{self.target}"
        return self.kind


@dataclass(frozen=True)
class Seed:
    V: float
    C: float
    s: float
    xi_sign: int
    orientation: str  # xi_decreasing | xi_increasing

    @property
    def s_direction(self) -> int:
        return (1 if self.orientation == "xi_increasing" else -1) * self.xi_sign


@dataclass(frozen=True)
class Piece:
    """Dense representation on ``u in [u0, u1]`` returning ``(V, C, s)``."""

    u0: float
    u1: float
    fn: Callable[[float], tuple[float, float, float]]


@dataclass(frozen=True)
class Trajectory:
    """A discretised solution curve carrying ``s = ln|xi|`` and ``sgn(xi)``.

    Points are stored in the order of integration; ``u`` is a monotone curve
    parameter used for dense evaluation through :meth:`at`.
    """

    s: np.ndarray
    V: np.ndarray
    C: np.ndarray
    u: np.ndarray
    xi_sign: int
    orientation: str
    start_anchor: str
    end_anchor: str
    lam: float
    slope_at_infinity: float | None = None
    K_V: float | None = None
    K_C: float | None = None
    pieces: tuple[Piece, ...] = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("s", "V", "C", "u"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def xi(self) -> np.ndarray:
        return self.xi_sign * np.exp(self.s)

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.xi.tolist(), self.V.tolist(), self.C.tolist()))

    def __len__(self) -> int:
        return len(self.s)

    @property
    def start(self) -> PhasePoint:
        return PhasePoint(float(self.V[0]), float(self.C[0]))

    @property
    def end(self) -> PhasePoint:
        return PhasePoint(float(self.V[-1]), float(self.C[-1]))

    def shifted(self, ds: float) -> "Trajectory":
        """Same curve with ``s -> s + ds`` (the scaling symmetry xi -> e^ds xi)."""
        pieces = tuple(Piece(p.u0, p.u1, _shift_fn(p.fn, ds)) for p in self.pieces)
        K_V = None if self.K_V is None else self.K_V * math.exp(ds)
        K_C = None if self.K_C is None else self.K_C * math.exp(ds)
        info = dict(self.info)
        if "recorded" in info:
            info["recorded"] = {R: (v, c, sv + ds) for R, (v, c, sv) in info["recorded"].items()}
        return replace(self, s=self.s + ds, pieces=pieces, K_V=K_V, K_C=K_C, info=info)

    def at(self, u: float) -> tuple[float, float, float]:
        """Dense evaluation ``(V, C, s)`` at curve parameter ``u``."""
        for p in self.pieces:
            if p.u0 - 1e-15 <= u <= p.u1 + 1e-15 or p.u1 - 1e-15 <= u <= p.u0 + 1e-15:
                return p.fn(u)
        # outside dense coverage: linear in the stored points
        V = float(np.interp(u, self.u, self.V))
        C = float(np.interp(u, self.u, self.C))
        s = float(np.interp(u, self.u, self.s))
        return V, C, s

    def region_tags(self) -> list[str]:
        sgn = self.xi_sign * (1 if self.lam > 0 else -1)
        out = []
        for V, C in zip(self.V, self.C):
            try:
                out.append(region_of((V, C), sgn))
            except ValueError:
                out.append("boundary")
        return out

    def to_csv(self, path, header: str = "") -> None:
        from ._io import write_csv

        rows = zip(self.xi, self.V, self.C, self.s, self.region_tags())
        write_csv(path, ["xi", "V", "C", "s", "region_tag"], rows, header)


def _shift_fn(fn, ds):
    def g(u):
        V, C, s = fn(u)
        return V, C, s + ds

    return g


# ---------------------------------------------------------------------------
# low level arclength integration


def _vc_field(d: Derived):
    def f(a, b):
        F, G, D = eval_FGD(a, b, d)
        return G, F, D

    return f


def _wz_field(d: Derived):
    def f(a, b):
        fW, fZ, Dinv = inverted_field(a, b, d)
        return fW, fZ, Dinv

    return f


def _to_vc(coords, a, b):
    if coords == "VC":
        return a, b
    return 1.0 / a, 1.0 / b


def _event_fns(events: Sequence[EventSpec], d: Derived, coords: str, cps: dict):
    """Build scipy event callables for the given coordinate chart."""
    fns, names = [], []
    for ev in events:
        k = ev.kind
        if k == "hit_critical_line":
            if coords == "VC":
                fn = lambda t, y: (1.0 + y[0]) ** 2 - y[1] ** 2
            else:
                fn = lambda t, y: y[1] ** 2 * (1.0 + y[0]) ** 2 - y[0] ** 2
        elif k == "hit_V_axis":
            if coords != "VC":
                continue
            fn = lambda t, y: y[1]
        elif k == "radius_exceeds":
            R = float(ev.value)
            if coords == "VC":
                fn = lambda t, y, R=R: y[0] ** 2 + y[1] ** 2 - R * R
            else:
                fn = lambda t, y, R=R: (y[0] ** 2 + y[1] ** 2) - R * R * y[0] ** 2 * y[1] ** 2
        elif k == "near_critical_point":
            if coords != "VC" or ev.target not in cps:
                continue
            P = cps[ev.target]
            dl = float(ev.value)
            fn = lambda t, y, P=P, dl=dl: (y[0] - P[0]) ** 2 + (y[1] - P[1]) ** 2 - dl * dl
        elif k == "xi_reaches":
            target = math.log(abs(ev.value))
            fn = lambda t, y, target=target: y[2] - target
        elif k == "crosses_curve":
            cf = ev.fn
            if coords == "VC":
                fn = lambda t, y, cf=cf: cf(y[0], y[1])
            else:
                fn = lambda t, y, cf=cf: cf(1.0 / y[0], 1.0 / y[1])
        else:
            raise ValueError(f"unknown event kind {k!r}")
        fn.terminal = ev.terminal
        if k == "near_critical_point":
            fn.direction = -1
        fns.append(fn)
        names.append(ev.name)
    return fns, names


def _arc_solve(field_fn, y0, o, Dsign, fns, sigma_max, rtol, atol, max_step=np.inf):
    def rhs(t, y):
        fa, fb, fD = field_fn(y[0], y[1])
        N = math.hypot(fa, fb)
        if N == 0.0 or not math.isfinite(N):
            return [0.0, 0.0, 0.0]
        k = o * Dsign / N
        return [fa * k, fb * k, k * fD]

    return solve_ivp(
        rhs,
        (0.0, sigma_max),
        list(y0),
        method="DOP853",
        rtol=rtol,
        atol=atol,
        events=fns,
        dense_output=True,
        max_step=max_step,
    )


def default_events(d: Derived, exclude: Sequence[str] = (), triple_delta: float | None = None,
                   node_stop: float = NODE_STOP) -> list[EventSpec]:
    """Sonic line, V-axis and a stop radius around every critical point."""
    if triple_delta is None:
        triple_delta = _active.triple_delta
    evs = [EventSpec("hit_critical_line"), EventSpec("hit_V_axis")]
    for cp in critical_points(d):
        if cp.id in exclude or cp.id == "P0":
            continue
        dl = triple_delta if cp.id in ("P5", "P6") else node_stop
        evs.append(EventSpec("near_critical_point", dl, cp.id))
    return evs


def integrate(
    seed: Seed,
    d: Derived,
    events: Sequence[EventSpec] | None = None,
    *,
    exclude: Sequence[str] = (),
    start_anchor: str = "origin",
    radius_switch: float = RADIUS_SWITCH,
    rtol: float | None = None,
    atol: float | None = None,
    sigma_max: float = 1e9,
    triple_delta: float | None = None,
    node_stop: float = NODE_STOP,
    record_radii: Sequence[float] = (),
) -> Trajectory:
    """Integrate from ``seed`` until the first terminal event.

    ``events`` defaults to :func:`default_events`.  The chart switches to the
    inverted variables beyond ``radius_switch`` and back on re-entry.  The
    end anchor names the event that stopped the integration
    (``critical_point:P2``, ``critical_line_hit``, ``V_axis_hit``,
    ``radius_exceeds``, ``xi_reaches``, ``curve``).
    """
    rtol = _active.rtol if rtol is None else rtol
    atol = _active.atol if atol is None else atol
    triple_delta = _active.triple_delta if triple_delta is None else triple_delta
    if events is None:
        events = default_events(d, exclude, triple_delta, node_stop)
    cps = {cp.id: cp.location for cp in critical_points(d)}
    o = seed.s_direction
    lam_sign = 1 if d.lam > 0 else -1

    V0, C0 = seed.V, seed.C
    if V0 * V0 + C0 * C0 > radius_switch**2:
        coords, y = "WZ", [1.0 / V0, 1.0 / C0, seed.s]
    else:
        coords, y = "VC", [V0, C0, seed.s]
    _, _, Dv = eval_FGD(V0, C0, d)
    if Dv == 0.0:
        raise SonicError("seed lies on a critical line")
    Dsign = 1.0 if Dv > 0 else -1.0

    Ss, Vs, Cs, Us = [], [], [], []
    pieces: list[Piece] = []
    recorded: dict[float, tuple[float, float, float]] = {}
    u_off = 0.0
    end_anchor = None
    nsteps = 0
    for _ in range(64):
        fns, names = _event_fns(events, d, coords, cps)
        if coords == "VC":
            sw = lambda t, y: y[0] ** 2 + y[1] ** 2 - radius_switch**2
            sw.direction = 1
            field_fn = _vc_field(d)
        else:
            back = 0.9 * radius_switch
            sw = lambda t, y, R=back: (y[0] ** 2 + y[1] ** 2) - R * R * y[0] ** 2 * y[1] ** 2
            sw.direction = 1
            field_fn = _wz_field(d)
        sw.terminal = True
        rec_fns = []
        for R in record_radii:
            if coords == "VC":
                rf = lambda t, y, R=R: y[0] ** 2 + y[1] ** 2 - R * R
            else:
                rf = lambda t, y, R=R: (y[0] ** 2 + y[1] ** 2) - R * R * y[0] ** 2 * y[1] ** 2
            rf.terminal = False
            rec_fns.append(rf)
        all_fns = fns + [sw] + rec_fns
        sol = _arc_solve(field_fn, y, o, Dsign, all_fns, sigma_max, rtol, atol)
        if sol.status == -1:
            raise IntegrationError(f"integration failed: {sol.message}")
        nsteps += len(sol.t)
        if nsteps > MAX_STEPS:
            raise IntegrationError("maximum number of steps exceeded")
        a, b, s = sol.y
        V, C = _to_vc(coords, a, b)
        first = 0 if not Ss else 1
        Vs.extend(np.atleast_1d(V)[first:])
        Cs.extend(np.atleast_1d(C)[first:])
        Ss.extend(s[first:])
        Us.extend((sol.t + u_off)[first:])
        pieces.append(Piece(u_off, u_off + sol.t[-1], _dense_fn(sol.sol, coords, u_off)))
        for R, te in zip(record_radii, sol.y_events[len(all_fns) - len(rec_fns):]):
            for yy in te:
                v, c = _to_vc(coords, yy[0], yy[1])
                recorded.setdefault(R, (v, c, yy[2]))
        u_off += sol.t[-1]
        hit = None
        if sol.status == 1:
            for i, name in enumerate(names + ["switch"]):
                if len(sol.t_events[i]) and all_fns[i].terminal:
                    hit = name
                    break
        if hit is None:
            if sol.status == 0:
                raise IntegrationError("arclength budget exhausted without a terminal event")
            raise IntegrationError(sol.message)
        if hit == "switch":
            coords = "WZ" if coords == "VC" else "VC"
            aa, bb, ss = sol.y[:, -1]
            vv, cc = _to_vc("VC" if coords == "WZ" else "WZ", aa, bb)
            y = [1.0 / vv, 1.0 / cc, ss] if coords == "WZ" else [vv, cc, ss]
            continue
        end_anchor = {
            "hit_critical_line": "critical_line_hit",
            "hit_V_axis": "V_axis_hit",
            "radius_exceeds": "infinity",
            "xi_reaches": "xi_reaches",
            "crosses_curve": "curve",
        }.get(hit, None)
        if end_anchor is None and hit.startswith("near_"):
            end_anchor = "critical_point:" + hit[5:]
        break
    else:
        raise IntegrationError("too many chart switches")

    Ss, Vs, Cs, Us = np.array(Ss), np.array(Vs), np.array(Cs), np.array(Us)
    if end_anchor == "critical_line_hit" and not d.gamma_is_3:
        # a step may cross a triple point before the distance event fires
        for name in ("P5", "P6"):
            if name in exclude:
                continue
            P = cps[name]
            if math.hypot(Vs[-1] - P[0], Cs[-1] - P[1]) < triple_delta:
                Ss, Vs, Cs, Us = _truncate_at_distance(Ss, Vs, Cs, Us, pieces[-1], P, triple_delta)
                end_anchor = "critical_point:" + name
                break
    if record_radii:
        rad = np.hypot(Vs, Cs)
        for R in record_radii:
            if R not in recorded:
                j = int(np.argmin(np.abs(rad - R)))
                if abs(rad[j] - R) <= 1e-8 * R:
                    recorded[R] = (Vs[j], Cs[j], Ss[j])
    sgn = seed.xi_sign * lam_sign
    bad = sgn * Cs > 1e-12 * (1.0 + np.abs(Cs))
    if np.any(bad):
        raise IntegrationError("sign condition violated along the trajectory")
    info = {"recorded": recorded, "nsteps": nsteps}
    return Trajectory(
        s=Ss, V=Vs, C=Cs, u=np.array(Us), xi_sign=seed.xi_sign, orientation=seed.orientation,
        start_anchor=start_anchor, end_anchor=end_anchor, lam=d.lam, pieces=tuple(pieces), info=info,
    )


def _truncate_at_distance(Ss, Vs, Cs, Us, piece, P, delta):
    dist = np.hypot(Vs - P[0], Cs - P[1])
    outside = np.nonzero(dist > delta)[0]
    if len(outside) == 0:
        raise IntegrationError("trajectory starts inside the triple-point radius")
    j = int(outside[-1])
    lo, hi = max(Us[j], piece.u0), Us[-1]

    def g(u):
        V, C, _ = piece.fn(u)
        return math.hypot(V - P[0], C - P[1]) - delta

    if g(lo) <= 0:
        lo = piece.u0
    # the distance dips below delta somewhere in (lo, hi]; find the first crossing
    grid = np.linspace(lo, hi, 65)
    vals = [g(u) for u in grid]
    k = next(i for i in range(1, len(grid)) if vals[i] <= 0)
    u_star = brentq(g, grid[k - 1], grid[k], xtol=1e-15, rtol=1e-14)
    V, C, s = piece.fn(u_star)
    keep = Us < u_star
    return (np.append(Ss[keep], s), np.append(Vs[keep], V), np.append(Cs[keep], C),
            np.append(Us[keep], u_star))


def _dense_fn(odesol, coords, u_off):
    def fn(u):
        a, b, s = odesol(u - u_off)
        V, C = _to_vc(coords, a, b)
        return float(V), float(C), float(s)

    return fn


# ---------------------------------------------------------------------------
# seeds


def launch_from_origin(params: Params, r0: float | None = None, d: Derived | None = None) -> Seed:
    """Seed on the trajectory leaving the star point P0 with slope ``1/Ma``.

    Uses the second-order expansion of the trajectory through P0 and fixes
    ``s`` from ``xi^lam C -> -lam c_plus`` including the first correction.
    """
    d = d or derive(params)
    r0 = _active.launch_radius if r0 is None else r0
    lam = d.lam
    Ma = params.mach
    kap = d.k1 - 1.0 + lam
    sC = -1.0 if lam > 0 else 1.0  # sign of C near the data end
    if abs(Ma) >= 1.0:
        m = 1.0 / Ma
        a2 = -m * (kap + d.V_star * m * m) / lam
        V0 = sC * math.copysign(1.0, Ma) * r0 / math.hypot(1.0, m)
        C0 = m * V0 + a2 * V0 * V0
    else:
        mu = Ma
        b2 = (kap * mu * mu + d.V_star) / lam
        C0 = sC * r0 / math.hypot(1.0, mu)
        V0 = mu * C0 + b2 * C0 * C0
    kp = d.k1 - 2.0 + 2.0 * lam
    s0 = (math.log(abs(lam) * params.c_plus) - math.log(abs(C0)) - kp * V0 / lam) / lam
    orient = "xi_decreasing" if lam > 0 else "xi_increasing"
    return Seed(V0, C0, s0, 1, orient)


def seed_separatrix_P1(params: Params | Derived, delta: float = 1e-6) -> Seed:
    """Seed on the upper separatrix of P1: ``V = -1 - delta``, ``C^2 = sigma1 (1+V)``.

    Integrating with xi increasing moves away from P1; the seed carries
    ``s = 0`` and is shifted later to fix the xi-scale.
    """
    d = params if isinstance(params, Derived) else derive(params)
    sigma1, _ = classify_P1(d)
    return Seed(-1.0 - delta, math.sqrt(-sigma1 * delta), 0.0, -1, "xi_increasing")


def p1_s_gradient(d: Derived) -> float:
    """``ds/dV`` along the separatrix at P1 (``= sigma1 / (2 k0)``)."""
    sigma1, _ = classify_P1(d)
    return sigma1 / (2.0 * d.k0)


def xi_at_P1(traj: Trajectory, d: Derived, rel_check: float = 1e-2) -> tuple[float, float]:
    """``(xi_v, err)`` for a trajectory that starts or ends next to P1.

    Near P1 along the separatrix ``C^2 ~ 2 k0 ln(xi/xi_v)`` and
    ``1 + V ~ C^2 / sigma1``, so ``s`` is linear in ``1+V`` with gradient
    ``sigma1/(2 k0)``.  The error estimate compares the extrapolations from
    the two points closest to P1.
    """
    sigma1, _ = classify_P1(d)
    idx = 0 if traj.start_anchor == "critical_point:P1" else -1
    if idx == -1 and traj.end_anchor != "critical_point:P1":
        dist0 = math.hypot(traj.V[0] + 1.0, traj.C[0])
        dist1 = math.hypot(traj.V[-1] + 1.0, traj.C[-1])
        idx = 0 if dist0 < dist1 else -1
        if min(dist0, dist1) > 1e-2:
            raise FitError("trajectory does not approach P1")
    w = traj.V[idx] + 1.0
    C = traj.C[idx]
    if w >= 0 or abs(C * C / w - sigma1) > rel_check * abs(sigma1):
        raise FitError("trajectory is not asymptotic to the separatrix of P1")
    g1 = p1_s_gradient(d)
    s_v = traj.s[idx] - g1 * w
    j = 1 if idx == 0 else -2
    w2 = traj.V[j] + 1.0
    s_v2 = traj.s[j] - g1 * w2
    err = abs(s_v - s_v2)
    return traj.xi_sign * math.exp(s_v), err * math.exp(s_v)


# ---------------------------------------------------------------------------
# infinity


@dataclass(frozen=True)
class InfinityFit:
    k: float
    K_V: float
    K_C: float
    estimates: tuple[float, ...]
    xi_sign: int
    V_sign: int


def _inf_series(p: float, d: Derived):
    """Second-order coefficients at the inverted origin for ``Z ~ p W``."""
    kap = d.k1 - 1.0 + d.lam
    b = -p * (kap * p * p + d.V_star) / (p * p - 1.0)
    beta = (p * p * (d.lam - 1.0) + d.V_star) / (p * p - 1.0)
    return b, beta


def slope_estimate(traj: Trajectory) -> tuple[float, float]:
    """Extrapolated slope ``C/V`` at infinity and a spread-based error bar.

    Cheaper and more forgiving than :func:`fit_infinity`; for slopes near the
    singular directions the correction is not ``O(1/r)`` and the two
    Richardson estimates can disagree beyond its tolerance.
    """
    rec = traj.info.get("recorded", {})
    if any(R not in rec for R in INFINITY_RADII):
        raise FitError("trajectory lacks samples at the fitting radii")
    ks = [rec[R][1] / rec[R][0] for R in INFINITY_RADII]
    r1 = (10.0 * ks[1] - ks[0]) / 9.0
    r2 = (10.0 * ks[2] - ks[1]) / 9.0
    return r2, max(abs(r2 - r1), abs(ks[2] - r2), 1e-12)


def fit_infinity(traj: Trajectory, d: Derived, tol: float = 1e-7, slope_tol: float = 1e-6) -> InfinityFit:
    """Slope and ``K`` coefficients of a trajectory that runs off to infinity.

    ``C/V`` recorded at radii 1e4, 1e5, 1e6 is Richardson-extrapolated in
    1/r; ``K_V`` follows from ``W/(1 + beta W) = sgn e^(s) / K_V``.
    """
    rec = traj.info.get("recorded", {})
    if any(R not in rec for R in INFINITY_RADII):
        raise FitError("trajectory lacks samples at the fitting radii")
    ks = [rec[R][1] / rec[R][0] for R in INFINITY_RADII]
    r1 = (10.0 * ks[1] - ks[0]) / 9.0
    r2 = (10.0 * ks[2] - ks[1]) / 9.0
    if abs(r2 - r1) > tol:
        raise FitError(f"slope estimates {r1} and {r2} differ by more than {tol}")
    k = (100.0 * r2 - r1) / 99.0
    if abs(abs(k) - 1.0) < slope_tol:
        raise SingularDirectionError(f"asymptotic slope {k} is a singular direction")
    V, C, s = rec[INFINITY_RADII[-1]]
    p = 1.0 / k
    _, beta = _inf_series(p, d)
    Wv = 1.0 / V
    lnK = s - math.log(abs(Wv / (1.0 + beta * Wv)))
    K_V = math.copysign(math.exp(lnK), V * traj.xi_sign)
    # consistency of K between the last two radii
    V1, C1, s1 = rec[INFINITY_RADII[-2]]
    W1 = 1.0 / V1
    lnK1 = s1 - math.log(abs(W1 / (1.0 + beta * W1)))
    if abs(lnK1 - lnK) > 1e-6:
        raise FitError(f"K_V estimates disagree ({lnK1} vs {lnK})")
    return InfinityFit(k, K_V, k * K_V, (r1, r2, k), traj.xi_sign, 1 if V > 0 else -1)


def seed_from_infinity(fit: InfinityFit, d: Derived, xi_sign: int, orientation: str,
                       radius: float = INFINITY_RADII[-1]) -> Seed:
    """Seed at phase-plane ``radius`` on the trajectory with ``V ~ K_V/xi``, ``C ~ K_C/xi``."""
    k = fit.k
    p = 1.0 / k
    b, beta = _inf_series(p, d)
    V_sign = math.copysign(1.0, fit.K_V) * xi_sign
    Wv = V_sign * math.hypot(1.0, k) / radius
    Z = p * Wv + b * Wv * Wv
    s0 = math.log(abs(Wv / (1.0 + beta * Wv))) + math.log(abs(fit.K_V))
    return Seed(1.0 / Wv, 1.0 / Z, s0, xi_sign, orientation)


def continue_through_infinity(traj: Trajectory, d: Derived, events: Sequence[EventSpec] | None = None,
                              **kw) -> Trajectory:
    """Continuation entering from infinity in the opposite quadrant.

    The continuation keeps the slope ``k`` and the coefficients ``K_V``,
    ``K_C`` (continuity of u and c across x = 0) while xi changes sign.
    """
    if traj.end_anchor != "infinity":
        raise IntegrationError("trajectory does not end at infinity")
    fit = fit_infinity(traj, d)
    seed = seed_from_infinity(fit, d, -traj.xi_sign, traj.orientation)
    out = integrate(seed, d, events, start_anchor="infinity", **kw)
    return replace(out, slope_at_infinity=fit.k, K_V=fit.K_V, K_C=fit.K_C,
                   info={**out.info, "infinity_fit": fit})


# ---------------------------------------------------------------------------
# triple points


def s_at_point(traj: Trajectory, P: PhasePoint | tuple[float, float], d: Derived, end: int = -1) -> float:
    """Extrapolate ``s`` at a triple point next to one end of ``traj``.

    Near a triple point F, G and D are linear, so ``ds/dV = D/G`` is constant
    along a straight approach; the chord from the point to the stored end
    supplies the direction.
    """
    V, C, s = traj.V[end], traj.C[end], traj.s[end]
    F, G, D = eval_FGD(V, C, d)
    dv, dc = V - P[0], C - P[1]
    if abs(G) >= abs(F):
        return float(s - dv * D / G)
    return float(s - dc * D / F)


def pass_through_triple_point(traj: Trajectory, cp: str, d: Derived, exit_traj: Trajectory | None = None,
                              exit_end: int = -1):
    """Locate xi at the triple point ``cp`` and attach the outgoing trajectory.

    ``exit_traj`` must be a trajectory that ends next to ``cp`` (it is
    typically integrated towards the node from the far side); it is reversed
    and shifted so that xi is continuous at ``cp``.  Returns
    ``(xi_cp, exit_shifted_or_None)``.
    """
    P = _cp_location(d, cp)
    if traj.end_anchor != f"critical_point:{cp}":
        raise IntegrationError(f"trajectory does not end at {cp}")
    _check_direction(traj, P, d, cp)
    s_cp = s_at_point(traj, P, d, -1)
    xi_cp = traj.xi_sign * math.exp(s_cp)
    if exit_traj is None:
        return xi_cp, None
    if exit_traj.xi_sign != traj.xi_sign:
        raise IntegrationError("exit trajectory has the wrong sign of xi")
    _check_direction(exit_traj, P, d, cp, exit_end)
    s_exit = s_at_point(exit_traj, P, d, exit_end)
    return xi_cp, exit_traj.shifted(s_cp - s_exit)


def _cp_location(d, cp):
    for c in critical_points(d):
        if c.id == cp:
            return c.location
    raise IntegrationError(f"critical point {cp} is absent")


def _check_direction(traj, P, d, cp, end=-1, tol=0.05):
    """Entry direction must be a characteristic direction of the node."""
    cpt = [c for c in critical_points(d) if c.id == cp][0]
    dv, dc = traj.V[end] - P[0], traj.C[end] - P[1]
    ang = math.atan2(dc, dv)
    ok = False
    for L in (cpt.primary_slope, cpt.secondary_slope):
        if L is None:
            continue
        th = math.pi / 2 if math.isinf(L) else math.atan(L)
        diff = (ang - th) % math.pi
        if min(diff, math.pi - diff) < tol:
            ok = True
    if not ok:
        raise IntegrationError(f"approach to {cp} is not along a characteristic direction")


def reversed_trajectory(traj: Trajectory) -> Trajectory:
    """Same curve traversed the other way (orientation flipped)."""
    orient = "xi_increasing" if traj.orientation == "xi_decreasing" else "xi_decreasing"
    umax = traj.u[-1] if len(traj.u) else 0.0
    pieces = tuple(Piece(umax - p.u1, umax - p.u0, _flip_fn(p.fn, umax)) for p in reversed(traj.pieces))
    return replace(
        traj, s=traj.s[::-1], V=traj.V[::-1], C=traj.C[::-1], u=umax - traj.u[::-1],
        orientation=orient, start_anchor=traj.end_anchor, end_anchor=traj.start_anchor, pieces=pieces,
    )


def _flip_fn(fn, umax):
    return lambda u: fn(umax - u)


# ---------------------------------------------------------------------------
# straight-line trajectories


def line_trajectory(d: Derived, slope_sign: int, V_start: float, V_end: float, const: float,
                    xi_sign: int, orientation: str, start_anchor: str, end_anchor: str,
                    n: int = 400) -> Trajectory:
    """Exact trajectory on ``C = slope_sign V / ell`` between two V values.

    Points are spaced evenly in ``s``.  Equilibria of the line equation
    (V = 0 and V = V3) sit at ``s = +-inf``, so the candidate grids are
    geometric towards them and uniform in 1/V towards infinity.
    """
    V3 = -d.lam * d.ell / (d.ell + 1.0)
    k = slope_sign / d.ell

    def grid(v0, v1):
        m = 4 * n
        cands = [np.linspace(v0, v1, m)]
        for anchor in (0.0, V3):
            a0, a1 = v0 - anchor, v1 - anchor
            if a0 != 0 and a1 != 0 and a0 * a1 > 0:
                cands.append(anchor + np.sign(a0) * np.geomspace(abs(a0), abs(a1), m))
        if v0 * v1 > 0:
            cands.append(1.0 / np.linspace(1.0 / v0, 1.0 / v1, m))
        V = np.unique(np.concatenate(cands))
        sv = line_s(V, d, const)
        order = np.argsort(sv)
        target = np.linspace(line_s(v0, d, const), line_s(v1, d, const), n)
        out = np.interp(target, sv[order], V[order])
        out[0], out[-1] = v0, v1
        return out

    Vg = grid(V_start, V_end)
    s = line_s(Vg, d, const)

    def fn(u, v0=V_start, v1=V_end):
        V = _line_param(u, v0, v1)
        return V, k * V, float(line_s(V, d, const))

    u = np.array([_line_u(v, V_start, V_end) for v in Vg])
    return Trajectory(
        s=s, V=Vg, C=k * Vg, u=u, xi_sign=xi_sign, orientation=orientation,
        start_anchor=start_anchor, end_anchor=end_anchor, lam=d.lam,
        pieces=(Piece(0.0, 1.0, fn),), info={"line": slope_sign, "line_const": const},
    )


def _line_u(v, v0, v1):
    if v0 * v1 > 0 and max(abs(v0), abs(v1)) > 100.0:
        return (1.0 / v - 1.0 / v0) / (1.0 / v1 - 1.0 / v0)
    return (v - v0) / (v1 - v0)


def _line_param(u, v0, v1):
    if v0 * v1 > 0 and max(abs(v0), abs(v1)) > 100.0:
        return 1.0 / (1.0 / v0 + u * (1.0 / v1 - 1.0 / v0))
    return v0 + u * (v1 - v0)


def line_constant(d: Derived, params: Params) -> float:
    """Constant of :func:`line_s` for data with ``|Ma| = ell`` (so ``u+ = +-ell c+``).

    Matches ``V ~ -lam u_plus xi^(-lam)`` at the data end.
    """
    V3 = -d.lam * d.ell / (d.ell + 1.0)
    return math.log(abs(d.lam * params.u_plus)) / d.lam - (1.0 - d.lam) / d.lam * math.log(abs(V3))
