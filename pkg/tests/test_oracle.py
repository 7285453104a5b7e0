import math

import numpy as np
import pytest

from ssvac.builder import build
from ssvac.core import Params
from ssvac.oracle import (
    CFLError,
    FVState,
    conserved_totals,
    cross_validate,
    default_domain,
    fv_advance,
    max_speed,
)

GAMMA = 1.75


def _state(rho, u, lo=-1.0, hi=1.0, t=0.0, cfl=0.45):
    n = len(rho)
    dx = (hi - lo) / n
    x = lo + dx * (np.arange(n) + 0.5)
    rho = np.asarray(rho, dtype=float)
    return FVState(x, rho, rho * np.asarray(u, dtype=float), t, GAMMA, 1.0, cfl)


def test_constant_state_is_preserved():
    st = _state(np.full(200, 1.3), np.full(200, 0.4))
    out = fv_advance(st, 0.5)
    assert out.t == pytest.approx(0.5)
    assert np.max(np.abs(out.rho - 1.3)) < 1e-13
    assert np.max(np.abs(out.velocity() - 0.4)) < 1e-13


@pytest.mark.parametrize("cfl", [0.0, 1.0])
def test_cfl_bounds(cfl):
    with pytest.raises(CFLError):
        fv_advance(_state(np.ones(10), np.zeros(10), cfl=cfl), 0.1)


def test_time_must_advance():
    with pytest.raises(ValueError):
        fv_advance(_state(np.ones(10), np.zeros(10), t=1.0), 0.5)


def test_conservation_of_compact_pulse():
    x = np.linspace(-1, 1, 400)
    rho = 1.0 + 0.5 * np.exp(-200 * x**2)
    st = _state(rho, 0.2 * np.exp(-200 * x**2))
    before = conserved_totals(st)
    after = conserved_totals(fv_advance(st, 0.1))
    assert after == pytest.approx(before, rel=1e-12)


def test_isolated_two_shock_speed():
    # right state at rest, left state on the 2-shock Hugoniot curve
    rho_r, rho_l = 1.0, 2.0
    p = lambda r: r**GAMMA
    u_l = math.sqrt((p(rho_l) - p(rho_r)) * (rho_l - rho_r) / (rho_l * rho_r))
    speed = rho_l * u_l / (rho_l - rho_r)
    n = 2000
    st = _state(np.where(np.arange(n) < n // 2, rho_l, rho_r), np.where(np.arange(n) < n // 2, u_l, 0.0))
    T = 0.3
    out = fv_advance(st, T)
    i = np.argmin(np.abs(out.rho - 0.5 * (rho_l + rho_r)))
    assert out.x[i] / T == pytest.approx(speed, rel=0.02)
    # 2-shock: the characteristic speed u + c drops across it
    c = lambda r: math.sqrt(GAMMA) * r ** ((GAMMA - 1) / 2)
    assert u_l + c(rho_l) > speed > c(rho_r)


def test_expansion_into_vacuum():
    n = 800
    rho = np.where(np.arange(n) < n // 2, 1.0, 0.0)
    st = _state(rho, np.zeros(n), lo=-2.0, hi=2.0)
    T = 0.2
    out = fv_advance(st, T)
    assert np.all(out.rho >= 0)
    assert conserved_totals(out)[0] == pytest.approx(conserved_totals(st)[0], rel=1e-12)
    # the front stays behind the escape speed 2 c0/(gamma - 1)
    front = out.x[out.rho > 1e-6].max()
    c0 = math.sqrt(GAMMA)
    assert 0.0 < front < 2 * c0 / (GAMMA - 1) * T + 4 * st.dx
    assert np.all(np.isnan(out.velocity()[out.rho == 0.0]))
    assert max_speed(out) > 0


def test_cross_validation_zero_advance():
    sol = build(Params(GAMMA, 0.7, 0.0))
    cv = cross_validate(sol, 1.0, 1.0, n_cells=100)
    assert cv.l1_rel_error_u == 0.0 and cv.l1_rel_error_c == 0.0


def test_cross_validation_rejects_partial_flow():
    with pytest.raises(ValueError):
        cross_validate(build(Params(2.5, -1.0, 0.5)), 1.0, 1.2)


def test_default_domain_covers_features():
    sol = build(Params(GAMMA, 0.7, -4.0))
    lo, hi = default_domain(sol, 1.0, 1.2)
    x_v = sol.xi_v * 1.2 ** (1 / 0.7)
    assert lo < x_v < sol.xi_s < hi


@pytest.mark.slow
def test_cross_validation_converges():
    sol = build(Params(GAMMA, 0.7, 0.0))
    dom = default_domain(sol, 1.0, 1.2)
    width = 3 * (dom[1] - dom[0]) / 1000
    errs = [cross_validate(sol, 1.0, 1.2, n, dom, collar_width=width) for n in (1000, 2000, 4000)]
    eu = [e.l1_rel_error_u for e in errs]
    ec = [e.l1_rel_error_c for e in errs]
    assert eu[0] > eu[1] > eu[2] and ec[0] > ec[1] > ec[2]
    assert eu[2] < 0.03 and ec[2] < 0.03
