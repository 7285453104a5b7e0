"""Physical fields from similarity solutions.

With ``xi = t^(-1/lam) x`` the ansatz reads::

    u = -(1/lam) (x/t) V(xi),    c = -(1/lam) (x/t) C(xi),

and ``x/t = xi t^(1/lam - 1)``, so the fields only need the products
``xi V`` and ``xi C``.  These stay finite through ``xi = 0``, where the
trajectory passes through the point at infinity of the phase plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .builder import SimilaritySolution
from .core import classify_P1, classify_P2, critical_points, eval_FGD

DENSIFY = 4
# exact slopes are replaced by monotone estimates where |D| is below this (relative)
SONIC_GUARD = 1e-3

DENSIFY = 4


class OutOfDomainError(ValueError):
    """Evaluation requested beyond the breakdown point of a partial flow."""


class IllConditionedFit(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowSample:
    """Fields on a grid at one time; ``u`` is NaN where the gas is absent."""

    t: float
    x_grid: np.ndarray
    u: np.ndarray
    c: np.ndarray
    rho: np.ndarray
    x_vacuum: float | None
    x_shock: float | None
    region: np.ndarray

    def to_csv(self, path, header: str = "") -> None:
        from ._io import write_csv

        rows = zip([self.t] * len(self.x_grid), self.x_grid, self.u, self.c, self.rho, self.region)
        write_csv(path, ["t", "x", "u", "c", "rho", "region"], rows, header)


class _Segment:
    """Cubic Hermite interpolation of ``V`` and ``C`` in ``s`` on one segment.

    Knot slopes come from the similarity ODEs, except close to the sonic
    lines where ``dV/ds`` blows up and a monotone estimate is used instead.
    """

    def __init__(self, traj, use_c2: bool, d):
        s, V, C = _dense(traj)
        order = np.argsort(s)
        s, V, C = s[order], V[order], C[order]
        keep = np.r_[True, np.diff(s) > 0]
        s, V, C = s[keep], V[keep], C[keep]
        self.traj = traj
        self.sign = traj.xi_sign
        self.c_sign = 1.0 if np.nanmean(C) > 0 else -1.0
        self.use_c2 = use_c2
        self.s_lo, self.s_hi = s[0], s[-1]
        Y = C * C if use_c2 else C
        if len(s) < 2:
            self.fV = self.fC = None
            self._const = (V[0], Y[0])
            return
        F, G, D = eval_FGD(V, C, d)
        ok = np.abs(D) > SONIC_GUARD * (1.0 + V * V + C * C)
        with np.errstate(divide="ignore", invalid="ignore"):
            dV, dC = G / D, F / D
        dY = 2.0 * C * dC if use_c2 else dC
        pV, pY = PchipInterpolator(s, V), PchipInterpolator(s, Y)
        dV = np.where(ok, dV, pV.derivative()(s))
        dY = np.where(ok, dY, pY.derivative()(s))
        self.fV = CubicHermiteSpline(s, V, dV)
        self.fC = CubicHermiteSpline(s, Y, dY)

    def contains(self, xi):
        with np.errstate(divide="ignore"):
            s = np.log(np.abs(xi))
        return (np.sign(xi) == self.sign) & (s >= self.s_lo) & (s <= self.s_hi)

    def __call__(self, xi):
        s = np.log(np.abs(xi))
        if self.fV is None:
            V, C = np.full(s.shape, self._const[0]), np.full(s.shape, self._const[1])
        else:
            V = self.fV(s)
            C = self.fC(s)
        if self.use_c2:
            C = self.c_sign * np.sqrt(np.maximum(C, 0.0))
        return V, C


def _dense(traj):
    """Stored points plus ``DENSIFY - 1`` dense-output points per step."""
    if not traj.pieces or DENSIFY <= 1:
        return np.array(traj.s), np.array(traj.V), np.array(traj.C)
    s, V, C = [traj.s[0]], [traj.V[0]], [traj.C[0]]
    for i in range(len(traj) - 1):
        u0, u1 = traj.u[i], traj.u[i + 1]
        for j in range(1, DENSIFY):
            Vj, Cj, sj = traj.at(u0 + (u1 - u0) * j / DENSIFY)
            s.append(sj)
            V.append(Vj)
            C.append(Cj)
        s.append(traj.s[i + 1])
        V.append(traj.V[i + 1])
        C.append(traj.C[i + 1])
    return np.array(s), np.array(V), np.array(C)


class FlowEvaluator:
    """Callable ``(t, x) -> (u, c, rho, region)`` for a similarity solution.

    Region codes: 0 vacuum, 1 fluid left of the shock (or no shock), 2 fluid
    right of the shock, -1 beyond the breakdown point of a partial flow.
    """

    def __init__(self, sol: SimilaritySolution):
        self.sol = sol
        d = self.d = sol.derived
        self.lam = d.lam
        self.p = sol.params
        self.segs = [_Segment(tr, (tr.end_anchor == "critical_point:P1"), d) for tr in sol.segments]
        first = sol.segments[0]
        self._data = (first.xi[0], first.V[0], first.C[0])
        last = sol.segments[-1]
        self._last = last
        self._inf = []
        for a, b in zip(sol.segments[:-1], sol.segments[1:]):
            if a.end_anchor == "infinity" and b.start_anchor == "infinity":
                xa, xb = a.xi[-1], b.xi[0]
                self._inf.append((xa, xb, (xa * a.V[-1], xa * a.C[-1]), (xb * b.V[0], xb * b.C[0])))
        if sol.vacuum_endpoint == "P1":
            self._sigma1 = classify_P1(d)[0]
            self._s_v = math.log(abs(sol.xi_v))
        end = last.end_anchor
        self._end_kind = end.split(":")[-1] if end.startswith("critical_point") else end
        if self._end_kind in ("P2", "P3", "P4"):
            cp = {c.id: c.location for c in critical_points(d)}[self._end_kind]
            self._end_cp = cp
            B = d.lam / (1.0 - d.lam)
            A = classify_P2(d)[0] if self._end_kind == "P2" else B
            self._end_exp = (A, B)

    # -- similarity profile -------------------------------------------------

    def xi_products(self, xi):
        """``(xi V, xi C, region)`` as arrays."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        XV = np.full(xi.shape, np.nan)
        XC = np.full(xi.shape, np.nan)
        reg = np.full(xi.shape, -2, dtype=int)
        sol = self.sol
        lam = self.lam
        jump_at = sol.jump_index
        for i, seg in enumerate(self.segs):
            m = (reg == -2) & seg.contains(xi)
            if np.any(m):
                V, C = seg(xi[m])
                XV[m], XC[m] = xi[m] * V, xi[m] * C
                reg[m] = 2 if (jump_at is not None and i < jump_at) else 1
        # data end: leading-order power law
        xi0, V0, C0 = self._data
        m = (reg == -2) & (np.sign(xi) == np.sign(xi0)) & ((xi > xi0) if lam > 0 else (xi < xi0))
        if np.any(m):
            f = (xi[m] / xi0) ** (-lam)
            XV[m], XC[m] = xi[m] * V0 * f, xi[m] * C0 * f
            reg[m] = 2 if jump_at is not None and jump_at > 0 else 1
        # passage through the point at infinity
        for xa, xb, pa, pb in self._inf:
            lo, hi = min(xa, xb), max(xa, xb)
            m = (reg == -2) & (xi >= lo) & (xi <= hi)
            if np.any(m):
                # xi V and xi C are smooth through xi = 0; the gap is ~1e-6 wide
                w = (xi[m] - xa) / (xb - xa)
                XV[m] = pa[0] + w * (pb[0] - pa[0])
                XC[m] = pa[1] + w * (pb[1] - pa[1])
                reg[m] = 1 if jump_at is None else (2 if self._segment_index_after(xa) < jump_at else 1)
        self._vacuum_end(xi, XV, XC, reg)
        return XV, XC, reg

    def _segment_index_after(self, xa):
        for i, seg in enumerate(self.sol.segments):
            if seg.xi[-1] == xa:
                return i + 1
        return len(self.sol.segments)

    def _vacuum_end(self, xi, XV, XC, reg):
        sol = self.sol
        lam = self.lam
        last = self._last
        xe, Ve, Ce = last.xi[-1], last.V[-1], last.C[-1]
        todo = reg == -2
        if sol.is_partial:
            m = todo & (xi > 0)
            reg[m] = -1
            reg[todo & (xi <= 0)] = 0
            return
        if sol.vacuum_endpoint == "P1":
            s_e = math.log(abs(xe))
            m = todo & (xi < 0) & (xi >= sol.xi_v) & (xi <= xe)
            if np.any(m):
                frac = (np.log(np.abs(xi[m])) - self._s_v) / (s_e - self._s_v)
                C2 = Ce * Ce * np.clip(frac, 0.0, None)
                XC[m] = xi[m] * np.sqrt(C2)
                XV[m] = xi[m] * (-1.0 + C2 / self._sigma1)
                reg[m] = 1
            reg[(reg == -2) & (xi < sol.xi_v)] = 0
            reg[(reg == -2) & (xi == 0)] = 0
            return
        if self._end_kind in ("P2", "P3", "P4"):
            A, B = self._end_exp
            V_cp = self._end_cp.V
            beyond = (xi > 0) & ((xi < xe) if lam > 0 else (xi > xe))
            m = todo & beyond
            if np.any(m):
                r = xi[m] / xe
                if self._end_kind == "P2":
                    C = Ce * r**A
                    V = V_cp + (Ve - V_cp) * r**B
                else:
                    V = V_cp + (Ve - V_cp) * r**B
                    C = Ce * V / Ve
                XV[m], XC[m] = xi[m] * V, xi[m] * C
                reg[m] = 1
        reg[(reg == -2) & (xi <= 0)] = 0
        reg[reg == -2] = 0

    # -- physical fields ------------------------------------------------------

    def __call__(self, t: float, x, strict: bool = True):
        if t <= 0:
            raise ValueError("t must be positive")
        lam = self.lam
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xi = x * t ** (-1.0 / lam)
        XV, XC, reg = self.xi_products(xi)
        if strict and np.any(reg == -1):
            raise OutOfDomainError("x lies beyond the breakdown point xi* of a partial flow")
        fac = -(1.0 / lam) * t ** (1.0 / lam - 1.0)
        u = fac * XV
        c = fac * XC
        fluid = reg > 0
        u = np.where(fluid, u, np.nan)
        c = np.where(fluid, np.maximum(c, 0.0), np.where(reg == 0, 0.0, np.nan))
        g = self.d.gamma
        rho = (c * c / (self.p.a**2 * g)) ** (1.0 / (g - 1.0))
        return u, c, rho, reg


def eval_flow(sol: SimilaritySolution, t: float, x, strict: bool = True):
    """``(u, c, rho)`` at time ``t``; ``u`` is NaN in vacuum."""
    u, c, rho, _ = FlowEvaluator(sol)(t, x, strict)
    return u, c, rho


def sample_flow(sol: SimilaritySolution, t: float, x, evaluator: FlowEvaluator | None = None) -> FlowSample:
    ev = evaluator or FlowEvaluator(sol)
    x = np.asarray(x, dtype=float)
    u, c, rho, reg = ev(t, x, strict=False)
    paths = interface_and_shock_paths(sol, [t])
    xs = paths["x_s"][0]
    return FlowSample(t, x, u, c, rho, paths["x_v"][0], None if np.isnan(xs) else xs, reg)


def interface_and_shock_paths(sol: SimilaritySolution, t_list) -> dict:
    """``x_v(t) = xi_v t^(1/lam)`` and ``x_s(t) = xi_s t^(1/lam)`` (NaN without a shock)."""
    t = np.asarray(t_list, dtype=float)
    if np.any(t <= 0):
        raise ValueError("times must be positive")
    scale = t ** (1.0 / sol.params.lam)
    xi_v = sol.xi_v if sol.xi_v is not None else 0.0
    xs = np.full(t.shape, np.nan) if sol.xi_s is None else sol.xi_s * scale
    x_v = np.full(t.shape, np.nan) if sol.is_partial else xi_v * scale
    return {"t": t, "x_v": x_v, "x_s": xs}


def write_paths_csv(path, paths: dict) -> None:
    from ._io import write_csv

    write_csv(path, ["t", "x_v", "x_s"], zip(paths["t"], paths["x_v"], paths["x_s"]))


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class DecayFit:
    alpha_hat: float
    n_samples: int
    c2x_limit: float | None = None
    c2x_predicted: float | None = None


def correction_exponent(sol: SimilaritySolution) -> float:
    """Exponent ``p`` of the leading relative correction ``(x - x_v)^p`` to the decay law.

    Near P2 the sound speed decays like ``xi^A`` and is corrected both by the
    second eigendirection, ``xi^B`` with ``B = lam/(1-lam)``, and by its own
    square feeding back into V, ``xi^(2A)``.  Along the line into P4 only
    ``xi^B`` appears.  For a fixed interface with ``lam < 0`` the data expansion proceeds in
    powers of ``xi^(-lam)``; at a physical singularity ``c^2`` is smooth in
    the distance, so ``p = 1``.
    """
    lam = sol.params.lam
    B = lam / (1.0 - lam)
    if sol.vacuum_endpoint == "P2":
        return min(B, 2.0 * classify_P2(sol.derived)[0])
    if sol.vacuum_endpoint == "P4":
        return B
    if sol.vacuum_endpoint == "P0":
        return -lam
    return 1.0


def fit_decay_exponent(sol: SimilaritySolution, t: float, window=(1e-6, 1e-3), n: int = 40,
                       evaluator: FlowEvaluator | None = None, corrected: bool = True) -> DecayFit:
    """Exponent ``alpha`` of ``c ~ (x - x_v)^alpha`` at the vacuum interface.

    Least squares of ``ln c`` on ``ln(x - x_v)`` and a constant over
    ``(x - x_v) in window * L`` with ``L = max(1, |xi_v|) t^(1/lam)``.  With
    ``corrected`` the leading correction ``(x - x_v)^p`` (see
    :func:`correction_exponent`) is a third regressor; without it slow
    corrections such as ``p = 1/9`` bias the plain slope by a few percent.
    Scaling the window by ``|xi_v|`` keeps ``x - x_v`` resolvable in double
    precision when the interface lies far from the origin.

    For a physical singularity the limit of ``(c^2)_x`` at the interface is
    returned alongside its closed form ``2 lam^-2 t^(1/lam-2) k0 xi_v``.
    """
    if sol.is_partial:
        raise ValueError("decay exponent is undefined for a partial flow")
    if n < 20:
        raise IllConditionedFit("the fitting window needs at least 20 samples")
    ev = evaluator or FlowEvaluator(sol)
    lam = sol.params.lam
    xi_v = sol.xi_v or 0.0
    x_v = xi_v * t ** (1.0 / lam)
    scale = max(1.0, abs(xi_v)) * t ** (1.0 / lam)
    z = np.geomspace(window[0], window[1], n)
    _, c, _, reg = ev(t, x_v + z * scale)
    ok = (reg > 0) & (c > 0)
    if ok.sum() < 20:
        raise IllConditionedFit(f"only {ok.sum()} usable samples in the fitting window")
    cols = [np.log(z[ok]), np.ones(ok.sum())]
    if corrected:
        cols.append(z[ok] ** correction_exponent(sol))
    alpha = np.linalg.lstsq(np.column_stack(cols), np.log(c[ok]), rcond=None)[0][0]
    c2x = pred = None
    if sol.vacuum_endpoint == "P1":
        d = sol.derived
        h = np.geomspace(window[0], 10 * window[0], 20) * scale
        _, ch, _, _ = ev(t, x_v + h)
        coef = np.polyfit(h / scale, ch * ch, 2)
        c2x = float(coef[1] / scale)
        pred = 2.0 / lam**2 * t ** (1.0 / lam - 2.0) * d.k0 * sol.xi_v
    return DecayFit(float(alpha), int(ok.sum()), c2x, pred)


def check_initial_data_recovery(sol: SimilaritySolution, x_fixed: float, t_sequence,
                                evaluator: FlowEvaluator | None = None) -> dict:
    """Relative deviation of ``u, c`` from ``u_plus x^(1-lam)``, ``c_plus x^(1-lam)`` as t decreases."""
    if x_fixed <= 0:
        raise ValueError("x_fixed must be positive")
    ev = evaluator or FlowEvaluator(sol)
    p = sol.params
    ref_u = p.u_plus * x_fixed ** (1.0 - p.lam)
    ref_c = p.c_plus * x_fixed ** (1.0 - p.lam)
    scale = max(abs(ref_u), ref_c)
    ru, rc = [], []
    for t in t_sequence:
        u, c, _, _ = ev(t, [x_fixed])
        ru.append(abs(u[0] - ref_u) / scale)
        rc.append(abs(c[0] - ref_c) / ref_c)
    ru, rc = np.array(ru), np.array(rc)
    return {"t": np.asarray(t_sequence, dtype=float), "res_u": ru, "res_c": rc,
            "final_u": float(ru[-1]), "final_c": float(rc[-1])}


def physical_jump_check(sol: SimilaritySolution, t: float) -> dict:
    """Physical jump conditions and 2-shock inequalities at ``x_s(t)``."""
    if sol.jump is None:
        raise ValueError("solution has no shock")
    lam = sol.params.lam
    g = sol.params.gamma
    a = sol.params.a
    x_s = sol.xi_s * t ** (1.0 / lam)
    speed = x_s / (lam * t)
    fac = -(1.0 / lam) * x_s / t

    def state(P):
        u, c = fac * P[0], fac * P[1]
        rho = (c * c / (a * a * g)) ** (1.0 / (g - 1.0))
        return u, c, rho

    um, cm, rm = state(sol.jump.P_minus)
    up, cp, rp = state(sol.jump.P_plus)
    mass = (speed * (rp - rm) - (rp * up - rm * um)) / max(abs(rm * um), abs(rp * up), rm * abs(speed), 1e-300)
    mom_m = rm * um * um + a * a * rm**g
    mom_p = rp * up * up + a * a * rp**g
    mom = (speed * (rp * up - rm * um) - (mom_p - mom_m)) / max(abs(mom_m), abs(mom_p), 1e-300)
    entropy = (um + cm > speed > up + cp)
    return {"x_s": x_s, "speed": speed, "res_mass": abs(mass), "res_momentum": abs(mom),
            "two_shock_entropy": bool(entropy), "left": (um, cm, rm), "right": (up, cp, rp)}


def pde_residual(sol: SimilaritySolution, t: float, x, h: float, evaluator: FlowEvaluator | None = None):
    """Forward-difference residuals of the smooth equations for ``u`` and ``c`` (first order in h)."""
    ev = evaluator or FlowEvaluator(sol)
    ell = sol.derived.ell
    x = np.asarray(x, dtype=float)
    u, c, _, _ = ev(t, x)
    ut1, ct1, _, _ = ev(t + h, x)
    ux1, cx1, _, _ = ev(t, x + h)
    ut, ct = (ut1 - u) / h, (ct1 - c) / h
    ux, cx = (ux1 - u) / h, (cx1 - c) / h
    r1 = ut + u * ux + ell * c * cx
    r2 = ct + u * cx + c * ux / ell
    return r1, r2
