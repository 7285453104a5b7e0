"""Assembly of complete similarity solutions.

A solution is an ordered chain of trajectory segments running from the data
end (P0) to the vacuum end, with at most one admissible 2-shock.  Segments
are oriented in the direction of the chain, so ``xi`` is monotone along the
whole chain: decreasing for ``0 < lam < 1`` and increasing for ``lam < 0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .core import (
    GAMMA3_TOL,
    Derived,
    Params,
    ParameterError,
    PhasePoint,
    classify_P2,
    critical_points,
    derive,
)
from .ode import (
    _cache_clearers,
    active_tolerances,
    INFINITY_RADII,
    EventSpec,
    IntegrationError,
    Piece,
    Trajectory,
    _inf_series,
    continue_through_infinity,
    default_events,
    fit_infinity,
    integrate,
    launch_from_origin,
    numerics,
    line_constant,
    line_s,
    line_trajectory,
    pass_through_triple_point,
    reversed_trajectory,
    s_at_point,
    scalar_s,
    seed_separatrix_P1,
    slope_estimate,
    xi_at_P1,
)
from .shock import (
    NoIntersectionError,
    ShockPair,
    admissible,
    asymptotic_hug_slope,
    hugoniot_locus,
    intersect_locus,
    rh_residual_relative,
)

log = logging.getLogger(__name__)

MACH_TOL = 1e-10
CRITICAL_MACH_TOL = 1e-6
FAR_RADIUS = INFINITY_RADII[-1]
LINE_R0 = 1e-6
# smallest capture radius around P5/P6 that the separatrix integration still resolves
MIN_TRIPLE_DELTA = 1e-7

REGIME_TAGS = (
    "continuous_stationary_C1",
    "continuous_stationary_lipschitz_or_linear",
    "continuous_accelerating_physical_singularity",
    "shock_plus_physical_singularity_left_moving_shock",
    "shock_plus_physical_singularity_right_moving_shock",
    "partial_flow",
)


class BuildError(RuntimeError):
    """Construction failed; ``segment`` names the trajectory involved."""

    def __init__(self, message: str, segment: str | None = None):
        super().__init__(message if segment is None else f"[{segment}] {message}")
        self.segment = segment


class BracketError(BuildError):
    pass


@dataclass(frozen=True)
class Regime:
    tag: str
    thresholds_used: tuple[tuple[str, float], ...] = ()

    @property
    def has_shock(self) -> bool:
        return self.tag.startswith("shock")

    @property
    def is_partial(self) -> bool:
        return self.tag == "partial_flow"


@dataclass(frozen=True)
class SimilaritySolution:
    """A complete (or partial) similarity solution.

    ``vacuum_endpoint`` is the critical point at which the chain meets the
    vacuum: P1 (accelerating interface), P2 or P4 (interface fixed at x = 0),
    P0 for ``lam < 0`` where the fixed interface sits at the data end, or
    ``none`` for partial flows.  ``far_endpoint`` is the critical point that
    closes the chain at ``xi -> +inf`` when ``lam < 0``.
    """

    params: Params
    regime: Regime
    segments: tuple[Trajectory, ...]
    jump: ShockPair | None = None
    xi_v: float | None = None
    vacuum_endpoint: str = "none"
    decay_exponent_alpha: float = float("nan")
    xi_star: float | None = None
    far_endpoint: str | None = None
    info: dict = field(default_factory=dict)

    @property
    def derived(self) -> Derived:
        return derive(self.params)

    @property
    def xi_s(self) -> float | None:
        return None if self.jump is None else self.jump.xi_s

    @property
    def is_partial(self) -> bool:
        return self.regime.is_partial

    @property
    def jump_index(self) -> int | None:
        """Index of the first segment after the jump."""
        return self.info.get("jump_index")

    def boundary_gaps(self) -> list[float]:
        """Mismatch at each non-jump segment boundary.

        Ordinary joins are measured in the phase plane.  Joins through the
        point at infinity compare the coefficients ``K_V = lim xi V`` and
        ``K_C`` extrapolated from both sides (relative difference).
        """
        d = self.derived
        out = []
        for i in range(len(self.segments) - 1):
            if self.jump_index == i + 1:
                continue
            a, b = self.segments[i], self.segments[i + 1]
            if a.end_anchor == "infinity" and b.start_anchor == "infinity":
                ka = _k_estimate(a, d, -1)
                kb = _k_estimate(b, d, 0)
                out.append(max(abs(ka[0] - kb[0]) / abs(ka[0]), abs(ka[1] - kb[1]) / abs(ka[1])))
            else:
                out.append(math.hypot(a.V[-1] - b.V[0], a.C[-1] - b.C[0]))
        return out

    def to_dict(self, segment_files: list[str] | None = None) -> dict:
        d = self.derived
        out = {
            "params": {
                "gamma": self.params.gamma,
                "lambda": self.params.lam,
                "mach": self.params.mach,
                "a": self.params.a,
                "c_plus": self.params.c_plus,
                "u_plus": self.params.u_plus,
            },
            "ell": d.ell,
            "regime": self.regime.tag,
            "thresholds": {k: v for k, v in self.regime.thresholds_used},
            "vacuum_endpoint": self.vacuum_endpoint,
            "far_endpoint": self.far_endpoint,
            "decay_exponent_alpha": self.decay_exponent_alpha,
            "xi_v": self.xi_v,
            "xi_s": self.xi_s,
            "xi_star": self.xi_star,
            "jump": None,
            "segments": [
                {
                    "name": seg.info.get("name", f"segment_{i}"),
                    "start_anchor": seg.start_anchor,
                    "end_anchor": seg.end_anchor,
                    "xi_start": float(seg.xi[0]),
                    "xi_end": float(seg.xi[-1]),
                    "n_points": len(seg),
                    **({"file": segment_files[i]} if segment_files else {}),
                }
                for i, seg in enumerate(self.segments)
            ],
        }
        if self.jump is not None:
            r1, r2 = rh_residual_relative(self.jump.P_minus, self.jump.P_plus, d)
            out["jump"] = {
                "family": self.jump.family,
                "xi_s": self.jump.xi_s,
                "P_minus": list(self.jump.P_minus),
                "P_plus": list(self.jump.P_plus),
                "rh_residuals_relative": [r1, r2],
            }
        return out

    def write(self, outdir, stem: str = "solution") -> dict:
        """Write the JSON summary and one CSV per segment; returns the dict."""
        from pathlib import Path

        from ._io import write_json

        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        files = []
        for i, seg in enumerate(self.segments):
            name = f"{stem}_segment{i}_{seg.info.get('name', 'traj')}.csv"
            seg.to_csv(outdir / name, header=f"{seg.start_anchor} -> {seg.end_anchor}")
            files.append(name)
        data = self.to_dict(files)
        write_json(outdir / f"{stem}.json", data)
        return data


# ---------------------------------------------------------------------------
# helpers


def _k_estimate(traj: Trajectory, d: Derived, idx: int) -> tuple[float, float]:
    """``(K_V, K_C)`` extrapolated linearly in ``1/V`` from the two stored points at one end."""
    j = idx + 1 if idx >= 0 else idx - 1
    xi = traj.xi
    w = np.array([1.0 / traj.V[idx], 1.0 / traj.V[j]])
    kv = np.array([xi[idx] * traj.V[idx], xi[j] * traj.V[j]])
    kc = np.array([xi[idx] * traj.C[idx], xi[j] * traj.C[j]])
    t = w[0] / (w[0] - w[1])
    return float(kv[0] + t * (kv[1] - kv[0])), float(kc[0] + t * (kc[1] - kc[0]))


def _named(traj: Trajectory, name: str) -> Trajectory:
    return replace(traj, info={**traj.info, "name": name})


def _truncate(traj: Trajectory, u: float, keep: str) -> Trajectory:
    """Part of ``traj`` before or after parameter ``u`` with the exact end point."""
    V, C, s = traj.at(u)
    if keep == "before":
        m = traj.u < u
        sl = dict(s=np.r_[traj.s[m], s], V=np.r_[traj.V[m], V], C=np.r_[traj.C[m], C], u=np.r_[traj.u[m], u])
        return replace(traj, **sl, end_anchor="shock")
    m = traj.u > u
    sl = dict(s=np.r_[s, traj.s[m]], V=np.r_[V, traj.V[m]], C=np.r_[C, traj.C[m]], u=np.r_[u, traj.u[m]])
    return replace(traj, **sl, start_anchor="shock")


def _append_point(traj: Trajectory, P, s: float, at_start: bool, anchor: str) -> Trajectory:
    """Close a segment exactly at a critical point (used at triple points)."""
    if at_start:
        u0 = traj.u[0] - math.hypot(traj.V[0] - P[0], traj.C[0] - P[1])
        return replace(traj, s=np.r_[s, traj.s], V=np.r_[P[0], traj.V], C=np.r_[P[1], traj.C],
                       u=np.r_[u0, traj.u], start_anchor=anchor)
    u1 = traj.u[-1] + math.hypot(traj.V[-1] - P[0], traj.C[-1] - P[1])
    return replace(traj, s=np.r_[traj.s, s], V=np.r_[traj.V, P[0]], C=np.r_[traj.C, P[1]],
                   u=np.r_[traj.u, u1], end_anchor=anchor)


def _cp(d: Derived, name: str) -> PhasePoint:
    for c in critical_points(d):
        if c.id == name:
            return c.location
    raise BuildError(f"critical point {name} is absent")


def _far_events(d: Derived, exclude=()):
    return default_events(d, exclude) + [EventSpec("radius_exceeds", FAR_RADIUS)]


def _gamma0(params: Params, d: Derived) -> Trajectory:
    seed = launch_from_origin(params, d=d)
    tr = integrate(seed, d, _far_events(d, ("P0",)), record_radii=INFINITY_RADII)
    return _named(tr, "gamma0")


@lru_cache(maxsize=64)
def _sigma_prime(gamma: float, lam: float) -> Trajectory:
    """Upper separatrix of P1 integrated away from P1 (xi < 0, xi increasing, s = 0 at the seed)."""
    d = derive((gamma, lam))
    seed = seed_separatrix_P1(d)
    tr = integrate(seed, d, _far_events(d, ("P1",)), start_anchor="critical_point:P1", record_radii=INFINITY_RADII)
    return _named(tr, "sigma_prime")


@lru_cache(maxsize=64)
def _gamma6(gamma: float, lam: float) -> Trajectory:
    """Continuation of the separatrix through infinity into the fourth quadrant; ends at P6."""
    d = derive((gamma, lam))
    sig = _sigma_prime(gamma, lam)
    if sig.end_anchor != "infinity":
        raise BuildError(f"separatrix ends at {sig.end_anchor}, expected infinity", "sigma_prime")
    g6 = continue_through_infinity(sig, d, record_radii=())
    if g6.end_anchor != "critical_point:P6":
        raise BuildError(f"continuation ends at {g6.end_anchor}, expected P6", "gamma6")
    return _named(g6, "gamma6")


def _edge(mach: float, d: Derived) -> int:
    """+1 at Ma = ell, -1 at Ma = -ell, 0 otherwise."""
    if abs(mach - d.ell) <= MACH_TOL * max(1.0, d.ell):
        return 1
    if abs(mach + d.ell) <= MACH_TOL * max(1.0, d.ell):
        return -1
    return 0


def _line_data_end(params: Params, d: Derived, sign: int, V_end: float, end_anchor: str,
                   xi_sign: int = 1) -> Trajectory:
    """E+- segment from the data end to ``V_end`` (exact closed form)."""
    const = line_constant(d, params)
    sC = -1.0 if d.lam > 0 else 1.0
    V0 = sign * sC * d.ell * LINE_R0 / math.hypot(1.0, d.ell)
    orient = "xi_decreasing" if d.lam > 0 else "xi_increasing"
    tr = line_trajectory(d, sign, V0, V_end, const, xi_sign, orient, "origin", end_anchor)
    return _named(replace(tr, info={**tr.info, "line_const": const}), "line_E+" if sign > 0 else "line_E-")


# ---------------------------------------------------------------------------
# regime classification


def classify_regime(params: Params) -> Regime:
    """Regime predicted from the Mach-number thresholds."""
    d = derive(params)
    Ma = params.mach
    ell = d.ell
    edge = _edge(Ma, d)
    th = [("ell", ell)]
    if d.lam < 0:
        if Ma > ell or edge == 1:
            return Regime("continuous_stationary_C1", tuple(th))
        return Regime("partial_flow", tuple(th))
    th.append(("minus_ell", -ell))
    if edge == 1:
        return Regime("continuous_stationary_lipschitz_or_linear", tuple(th))
    if Ma > ell:
        return Regime("continuous_stationary_C1", tuple(th))
    if d.gamma <= 3.0 + GAMMA3_TOL:
        if Ma >= -ell or edge == -1:
            return Regime("continuous_accelerating_physical_singularity", tuple(th))
        return Regime("shock_plus_physical_singularity_left_moving_shock", tuple(th))
    if Ma >= -ell or edge == -1:
        return Regime("continuous_accelerating_physical_singularity", tuple(th))
    ma_star = critical_machs(d.gamma, d.lam)["Ma_star"]
    th.append(("Ma_star", ma_star))
    upper = -ell
    if d.lam < d.lambda_hat:
        upper = critical_machs(d.gamma, d.lam)["Ma_circ"]
        th.append(("Ma_circ", upper))
        if Ma >= upper:
            return Regime("continuous_accelerating_physical_singularity", tuple(th))
    if Ma > ma_star:
        return Regime("shock_plus_physical_singularity_right_moving_shock", tuple(th))
    return Regime("shock_plus_physical_singularity_left_moving_shock", tuple(th))


# ---------------------------------------------------------------------------
# critical Mach numbers (gamma > 3, 0 < lam < 1)


def _right_moving(gamma: float, lam: float, mach: float) -> bool:
    """True when the shock fitted for this Ma (if any) sits at xi_s > 0.

    Gamma0 ending on L- or at P6 lies above Ma*; when it runs off to infinity
    its slope is compared with the limiting slope of Hug(Gamma6), which is
    where the right-moving intersection leaves through infinity.
    """
    d = derive((gamma, lam))
    g0 = _gamma0(Params(gamma, lam, mach), d)
    if g0.end_anchor in ("critical_line_hit", "critical_point:P6"):
        return True
    if g0.end_anchor != "infinity":
        raise BuildError(f"unexpected end {g0.end_anchor}", "gamma0")
    # near Ma* the comparison is limited by the slope error bar, not by the bisection
    k, _ = slope_estimate(g0)
    return k < _hug6_slope(gamma, lam)


@lru_cache(maxsize=64)
def _hug6_slope(gamma: float, lam: float) -> float:
    d = derive((gamma, lam))
    k_sigma = fit_infinity(_sigma_prime(gamma, lam), d).k
    return asymptotic_hug_slope(k_sigma, d.gamma, d.ell)


def _reaches_P6(gamma: float, lam: float, mach: float) -> bool:
    d = derive((gamma, lam))
    return _gamma0(Params(gamma, lam, mach), d).end_anchor == "critical_point:P6"


def _bisect(pred, hi: float, lo: float, tol: float) -> float:
    """Boundary between ``pred(hi)`` true and ``pred(lo)`` false (``lo < hi``)."""
    if not pred(hi) or pred(lo):
        raise BracketError(f"bisection endpoints {lo}, {hi} do not produce opposite outcomes")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def find_critical_mach(params: Params, which: str, tol: float = CRITICAL_MACH_TOL) -> float:
    """Locate ``Ma_star`` (shock direction switch) or ``Ma_circ`` (onset of the shock)."""
    d = derive(params)
    if not d.gamma > 3.0 + GAMMA3_TOL or not 0.0 < d.lam < 1.0:
        raise ParameterError("critical Mach numbers exist only for gamma > 3 and 0 < lam < 1")
    g, lam, ell = d.gamma, d.lam, d.ell
    if which == "Ma_star":
        pred = lambda m: _right_moving(g, lam, m)
    elif which == "Ma_circ":
        if not lam < d.lambda_hat:
            raise ParameterError("Ma_circ exists only for lam < lambda_hat")
        pred = lambda m: _reaches_P6(g, lam, m)
    else:
        raise ValueError(f"unknown critical Mach number {which!r}")
    hi = -ell - 1e-3
    lo = -2.0 * ell - 1.0
    while pred(lo):
        hi, lo = lo, 4.0 * lo
        if lo < -1e9:
            raise BracketError(f"no sign change of the {which} predicate above Ma = -1e9")
    return _bisect(pred, hi, lo, tol)


@lru_cache(maxsize=64)
def critical_machs(gamma: float, lam: float) -> dict:
    d = derive((gamma, lam))
    out = {"Ma_star": find_critical_mach(Params(gamma, lam), "Ma_star")}
    if lam < d.lambda_hat:
        out["Ma_circ"] = find_critical_mach(Params(gamma, lam), "Ma_circ")
    return out


# trajectories depend on the active tolerances
_cache_clearers.extend(f.cache_clear for f in (_sigma_prime, _gamma6, _hug6_slope, critical_machs))


# ---------------------------------------------------------------------------
# build


def build(params: Params, check: bool = True) -> SimilaritySolution:
    """Construct the similarity solution selected by ``params``.

    With ``check=False`` the structural self-check is skipped so that callers
    can inspect and report on a defective chain themselves.
    """
    d = derive(params)
    regime = classify_regime(params)
    try:
        sol = _dispatch(params, d, regime)
    except BuildError:
        # weak shocks sit inside the capture disc around P5, where Hug(Sigma') is cut
        # off; one retry with a smaller disc, bounded by what the integrator resolves
        tol = active_tolerances()
        if not regime.has_shock or tol.triple_delta <= MIN_TRIPLE_DELTA:
            raise
        with numerics(replace(tol, triple_delta=max(1e-2 * tol.triple_delta, MIN_TRIPLE_DELTA))):
            sol = _dispatch(params, d, regime)
    if check:
        _check_solution(sol, d)
    return sol


def _dispatch(params: Params, d: Derived, regime: Regime) -> SimilaritySolution:
    if d.lam < 0:
        return _build_case_II(params, d, regime)
    if params.mach > d.ell or _edge(params.mach, d) == 1:
        return _build_stationary(params, d, regime)
    if d.gamma_is_3:
        return _build_gamma3(params, d, regime)
    if d.gamma < 3:
        return _build_case_I(params, d, regime)
    return _build_gamma_gt3(params, d, regime)


def _alpha(endpoint: str, d: Derived) -> float:
    if endpoint == "P1":
        return 0.5
    if endpoint == "P2":
        return 1.0 + classify_P2(d)[0]
    if endpoint == "P4":
        return 1.0
    if endpoint == "P0":
        return 1.0 - d.lam
    return float("nan")


def _build_case_II(params, d, regime):
    edge = _edge(params.mach, d)
    if edge == 1:
        P3 = _cp(d, "P3")
        V_end = P3.V * (1.0 - 1e-9)
        seg = _line_data_end(params, d, 1, V_end, "critical_point:P3")
        return SimilaritySolution(params, regime, (seg,), vacuum_endpoint="P0",
                                  decay_exponent_alpha=_alpha("P0", d), far_endpoint="P3")
    g0 = _gamma0(params, d)
    if params.mach > d.ell:
        if g0.end_anchor != "critical_point:P2":
            raise BuildError(f"expected P2, reached {g0.end_anchor}", "gamma0")
        return SimilaritySolution(params, regime, (g0,), vacuum_endpoint="P0",
                                  decay_exponent_alpha=_alpha("P0", d), far_endpoint="P2")
    if g0.end_anchor != "critical_line_hit":
        raise BuildError(f"expected an L+ hit, reached {g0.end_anchor}", "gamma0")
    xi_star = math.exp(g0.s[-1])
    return SimilaritySolution(params, regime, (g0,), vacuum_endpoint="none", xi_star=xi_star,
                              info={"partial_end": g0.end})


def _build_stationary(params, d, regime):
    if _edge(params.mach, d) == 1:
        P4 = _cp(d, "P4")
        seg = _line_data_end(params, d, 1, P4.V * (1.0 - 1e-9), "critical_point:P4")
        return SimilaritySolution(params, regime, (seg,), vacuum_endpoint="P4", xi_v=0.0,
                                  decay_exponent_alpha=_alpha("P4", d))
    g0 = _gamma0(params, d)
    if g0.end_anchor != "critical_point:P2":
        raise BuildError(f"expected P2, reached {g0.end_anchor}", "gamma0")
    return SimilaritySolution(params, regime, (g0,), vacuum_endpoint="P2", xi_v=0.0,
                              decay_exponent_alpha=_alpha("P2", d))


def _to_vacuum(sig_shifted: Trajectory, d: Derived, name: str = "sigma_prime") -> tuple[Trajectory, float]:
    """Orient a shifted separatrix piece towards P1 and read off xi_v."""
    xi_v, _ = xi_at_P1(sig_shifted, d)
    return _named(reversed_trajectory(sig_shifted), name), xi_v


def _through_infinity(g0: Trajectory, d: Derived) -> tuple[Trajectory, Trajectory]:
    """Gamma0 and its continuation entering from infinity in the second quadrant."""
    if g0.end_anchor != "infinity":
        raise BuildError(f"expected infinity, reached {g0.end_anchor}", "gamma0")
    delta = active_tolerances().triple_delta
    try:
        g0p = continue_through_infinity(g0, d, record_radii=())
        # for small lam the sonic-line hit creeps towards P5; shrink the capture radius
        # until the hit is resolved instead of being mistaken for an arrival at P5
        while g0p.end_anchor in ("critical_point:P5", "critical_point:P6") and delta > MIN_TRIPLE_DELTA:
            delta = max(1e-2 * delta, MIN_TRIPLE_DELTA)
            g0p = continue_through_infinity(g0, d, default_events(d, triple_delta=delta), record_radii=(),
                                            triple_delta=delta)
    except IntegrationError as exc:
        raise BuildError(str(exc), "gamma0_prime") from exc
    return g0, _named(g0p, "gamma0_prime")


def _line_through_infinity(params, d, V_far_end: float, end_anchor: str):
    """E- from the data end to infinity and back in from infinity to ``V_far_end``."""
    const = line_constant(d, params)
    V0 = d.ell * LINE_R0 / math.hypot(1.0, d.ell)
    a = _named(line_trajectory(d, -1, V0, FAR_RADIUS, const, 1, "xi_decreasing", "origin", "infinity"), "line_E-")
    b = _named(line_trajectory(d, -1, -FAR_RADIUS, V_far_end, const, -1, "xi_decreasing", "infinity", end_anchor),
               "line_E-_prime")
    k = -1.0 / d.ell
    K_V = math.exp(float(line_s(FAR_RADIUS, d, const))) * FAR_RADIUS
    a = replace(a, slope_at_infinity=k, K_V=K_V, K_C=k * K_V)
    b = replace(b, slope_at_infinity=k, K_V=K_V, K_C=k * K_V)
    return a, b


def _jump(traj: Trajectory, source: Trajectory, d: Derived, name_src: str):
    """Intersect ``traj`` with Hug(``source``); returns truncated pieces and the pair."""
    H = hugoniot_locus(source, d)
    try:
        I = intersect_locus(traj, H, d)
    except NoIntersectionError as exc:
        raise BuildError(str(exc), traj.info.get("name")) from exc
    before = _truncate(traj, I.u_traj, "before")
    src = source.shifted(I.s_traj - I.s_source)
    return before, src, I


def _build_case_I(params, d, regime):
    """1 < gamma < 3, 0 < lam < 1 and Ma < ell."""
    edge = _edge(params.mach, d)
    P5 = _cp(d, "P5")
    if edge == -1:
        g0, g0p = _line_through_infinity(params, d, P5.V, "critical_point:P5")
    else:
        g0, g0p = _through_infinity(_gamma0(params, d), d)
    sig = _sigma_prime(d.gamma, d.lam)
    if sig.end_anchor != "critical_point:P5":
        raise BuildError(f"separatrix ends at {sig.end_anchor}, expected P5", "sigma_prime")
    if not regime.has_shock:
        if g0p.end_anchor != "critical_point:P5":
            raise BuildError(f"expected P5, reached {g0p.end_anchor}", "gamma0_prime")
        if edge == -1:
            s5 = float(g0p.s[-1])
        else:
            s5 = s_at_point(g0p, P5, d, -1)
        s_exit = s_at_point(sig, P5, d, -1)
        sig_s = sig.shifted(s5 - s_exit)
        sig_s = _append_point(sig_s, P5, s5, False, "critical_point:P5")
        if edge != -1:
            g0p = _append_point(g0p, P5, s5, False, "critical_point:P5")
        tail, xi_v = _to_vacuum(sig_s, d)
        return SimilaritySolution(params, regime, (g0, g0p, tail), xi_v=xi_v, vacuum_endpoint="P1",
                                  decay_exponent_alpha=0.5, info={"xi_P5": -math.exp(s5)})
    if g0p.end_anchor != "critical_line_hit":
        raise BuildError(f"expected an L- hit, reached {g0p.end_anchor}", "gamma0_prime")
    before, sig_s, I = _jump(g0p, sig, d, "sigma_prime")
    piece = _truncate(sig_s, I.u_source, "before")
    tail, xi_v = _to_vacuum(piece, d)
    return SimilaritySolution(params, regime, (g0, before, tail), jump=I.pair, xi_v=xi_v,
                              vacuum_endpoint="P1", decay_exponent_alpha=0.5,
                              info={"jump_index": 2, "n_crossings": I.n_crossings})


def _riemann_c_minus(traj: Trajectory, lam: float, idx: int) -> float:
    """First integral ``s + ln|Y|/lam - (1-lam)/lam ln|Y+lam|`` of ``Y = V - C`` (gamma = 3)."""
    Y = traj.V[idx] - traj.C[idx]
    return float(traj.s[idx] - scalar_s(Y, 1.0, lam, 0.0))


def _build_gamma3(params, d, regime):
    edge = _edge(params.mach, d)
    sig = _sigma_prime(d.gamma, d.lam)
    if sig.end_anchor != "infinity":
        raise BuildError(f"separatrix ends at {sig.end_anchor}, expected infinity", "sigma_prime")
    if not regime.has_shock:
        if edge == -1:
            const = line_constant(d, params)
            V0 = LINE_R0 / math.sqrt(2.0)
            g0 = _named(line_trajectory(d, -1, V0, FAR_RADIUS, const, 1, "xi_decreasing", "origin", "infinity"),
                        "line_E-")
        else:
            g0 = _gamma0(params, d)
            if g0.end_anchor != "infinity":
                raise BuildError(f"expected infinity, reached {g0.end_anchor}", "gamma0")
        # Y- = V - C is finite through infinity along Gamma0 -> Sigma'; match its first integral
        c0 = _riemann_c_minus(g0, d.lam, len(g0) // 2)
        cs = _riemann_c_minus(sig, d.lam, len(sig) // 2)
        sig_s = sig.shifted(c0 - cs)
        tail, xi_v = _to_vacuum(sig_s, d)
        return SimilaritySolution(params, regime, (g0, tail), xi_v=xi_v, vacuum_endpoint="P1",
                                  decay_exponent_alpha=0.5,
                                  info={"c_minus": c0, "xi_v_closed_form": -math.exp(c0 + (1 - d.lam) / d.lam * math.log(1 - d.lam))})
    g0, g0p = _through_infinity(_gamma0(params, d), d)
    if g0p.end_anchor != "critical_line_hit":
        raise BuildError(f"expected an L- hit, reached {g0p.end_anchor}", "gamma0_prime")
    before, sig_s, I = _jump(g0p, sig, d, "sigma_prime")
    piece = _truncate(sig_s, I.u_source, "before")
    tail, xi_v = _to_vacuum(piece, d)
    return SimilaritySolution(params, regime, (g0, before, tail), jump=I.pair, xi_v=xi_v,
                              vacuum_endpoint="P1", decay_exponent_alpha=0.5,
                              info={"jump_index": 2, "n_crossings": I.n_crossings})


def _build_gamma_gt3(params, d, regime):
    """gamma > 3, 0 < lam < 1 and Ma < ell: chains through P6 or a 2-shock."""
    edge = _edge(params.mach, d)
    P6 = _cp(d, "P6")
    sig = _sigma_prime(d.gamma, d.lam)
    g6 = _gamma6(d.gamma, d.lam)
    if edge == -1:
        g0 = _line_data_end(params, d, -1, P6.V, "critical_point:P6")
    else:
        g0 = _gamma0(params, d)

    if regime.tag == "continuous_accelerating_physical_singularity":
        if g0.end_anchor != "critical_point:P6":
            raise BuildError(f"expected P6, reached {g0.end_anchor}", "gamma0")
        s6 = float(g0.s[-1]) if edge == -1 else s_at_point(g0, P6, d, -1)
        ds = s6 - s_at_point(g6, P6, d, -1)
        g6s = _append_point(g6.shifted(ds), P6, s6, False, "critical_point:P6")
        if edge != -1:
            g0 = _append_point(g0, P6, s6, False, "critical_point:P6")
        mid = _named(reversed_trajectory(g6s), "gamma6")
        tail, xi_v = _to_vacuum(sig.shifted(ds), d)
        return SimilaritySolution(params, regime, (g0, mid, tail), xi_v=xi_v, vacuum_endpoint="P1",
                                  decay_exponent_alpha=0.5, info={"xi_P6": math.exp(s6)})

    if regime.tag == "shock_plus_physical_singularity_right_moving_shock":
        before, g6s, I = _jump(g0, g6, d, "gamma6")
        ds = I.s_traj - I.s_source
        piece = _named(reversed_trajectory(_truncate(g6s, I.u_source, "before")), "gamma6")
        tail, xi_v = _to_vacuum(sig.shifted(ds), d)
        return SimilaritySolution(params, regime, (before, piece, tail), jump=I.pair, xi_v=xi_v,
                                  vacuum_endpoint="P1", decay_exponent_alpha=0.5,
                                  info={"jump_index": 1, "n_crossings": I.n_crossings})

    g0, g0p = _through_infinity(g0, d)
    if g0p.end_anchor != "critical_line_hit":
        raise BuildError(f"expected an L- hit, reached {g0p.end_anchor}", "gamma0_prime")
    before, sig_s, I = _jump(g0p, sig, d, "sigma_prime")
    piece = _truncate(sig_s, I.u_source, "before")
    tail, xi_v = _to_vacuum(piece, d)
    return SimilaritySolution(params, regime, (g0, before, tail), jump=I.pair, xi_v=xi_v,
                              vacuum_endpoint="P1", decay_exponent_alpha=0.5,
                              info={"jump_index": 2, "n_crossings": I.n_crossings})


def _check_solution(sol: SimilaritySolution, d: Derived) -> None:
    """Structural invariants: monotone xi, valid jump, consistent interface position."""
    xs = []
    want = -1 if d.lam > 0 else 1
    for seg in sol.segments:
        # checked in s = ln|xi|, which stays finite when |xi| overflows (lambda -> 0)
        step = seg.xi_sign * np.diff(seg.s)
        if np.any(step * want < 0):
            raise BuildError("xi is not monotone along the segment", seg.info.get("name"))
        s0, s1 = min(seg.s[0], 709.0), min(seg.s[-1], 709.0)
        xs.append((seg.xi_sign * math.exp(s0), seg.xi_sign * math.exp(s1)))
    for (a0, a1), (b0, b1) in zip(xs[:-1], xs[1:]):
        if (b0 - a1) * want < -1e-9 * abs(a1):
            raise BuildError("xi is not monotone across a segment boundary")
    if sol.jump is not None:
        xi_s = sol.jump.xi_s
        if not admissible(sol.jump, d.lam, xi_s, d):
            raise BuildError("fitted jump is not an admissible 2-shock")
        if sol.jump.family != "two_shock":
            raise BuildError("fitted jump is not a 2-shock")
    if sol.vacuum_endpoint == "P1" and not (sol.xi_v is not None and sol.xi_v < 0):
        raise BuildError("physical singularity with xi_v >= 0")
