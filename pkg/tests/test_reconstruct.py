import math

import numpy as np
import pytest

from ssvac.builder import build
from ssvac.core import Params, derive
from ssvac.reconstruct import (
    FlowEvaluator,
    IllConditionedFit,
    OutOfDomainError,
    check_initial_data_recovery,
    correction_exponent,
    eval_flow,
    fit_decay_exponent,
    interface_and_shock_paths,
    pde_residual,
    physical_jump_check,
    sample_flow,
)

ELL = derive((1.75, 0.7)).ell


@pytest.fixture(scope="module")
def sols():
    out = {m: build(Params(1.75, 0.7, m)) for m in (5.0, ELL, 0.0, -4.0)}
    out["II"] = build(Params(2.5, -1.0, 5.0))
    out["partial"] = build(Params(2.5, -1.0, 0.5))
    return out


def test_vacuum_side(sols):
    sol = sols[0.0]
    x = np.array([sol.xi_v - 1.0, sol.xi_v + 0.5, 1.0])
    u, c, rho, reg = FlowEvaluator(sol)(1.0, x)
    assert list(reg) == [0, 1, 1]
    assert np.isnan(u[0]) and c[0] == 0.0 and rho[0] == 0.0
    assert np.all(c[1:] > 0)


def test_regions_across_shock(sols):
    sol = sols[-4.0]
    x = np.array([sol.xi_s - 0.1, sol.xi_s + 0.1])
    _, _, _, reg = FlowEvaluator(sol)(1.0, x)
    assert list(reg) == [1, 2]


def test_partial_flow_domain(sols):
    sol = sols["partial"]
    beyond = 1.1 * sol.xi_star
    with pytest.raises(OutOfDomainError):
        eval_flow(sol, 1.0, [beyond])
    u, c, rho, reg = FlowEvaluator(sol)(1.0, [0.5 * sol.xi_star, beyond], strict=False)
    assert reg[0] == 1 and reg[1] == -1 and np.isnan(u[1])


def test_paths(sols):
    sol = sols[-4.0]
    p = interface_and_shock_paths(sol, [1.0, 2.0])
    assert p["x_v"] == pytest.approx(sol.xi_v * np.array([1.0, 2.0 ** (1 / 0.7)]), rel=1e-14)
    assert p["x_s"] == pytest.approx(sol.xi_s * np.array([1.0, 2.0 ** (1 / 0.7)]), rel=1e-14)
    assert np.isnan(interface_and_shock_paths(sols[0.0], [1.0])["x_s"][0])
    with pytest.raises(ValueError):
        interface_and_shock_paths(sol, [0.0])


def test_decay_exponents(sols):
    d = derive((1.75, 0.7))
    A = d.lam / d.ell / (1 - d.lam)
    assert fit_decay_exponent(sols[5.0], 1.0).alpha_hat == pytest.approx(1 + A, abs=0.02)
    assert fit_decay_exponent(sols[ELL], 1.0).alpha_hat == pytest.approx(1.0, abs=0.02)
    for m in (0.0, -4.0):
        fit = fit_decay_exponent(sols[m], 1.0)
        assert fit.alpha_hat == pytest.approx(0.5, abs=0.02)
        assert fit.c2x_limit == pytest.approx(fit.c2x_predicted, rel=0.01)
    assert fit_decay_exponent(sols["II"], 1.0).alpha_hat == pytest.approx(2.0, abs=0.02)
    with pytest.raises(IllConditionedFit):
        fit_decay_exponent(sols[0.0], 1.0, n=10)
    with pytest.raises(ValueError):
        fit_decay_exponent(sols["partial"], 1.0)


@pytest.mark.parametrize("gamma,lam", [(1.25, 0.5), (1.75, 0.1), (2.5, 0.1)])
def test_corrected_fit_removes_window_bias(gamma, lam):
    # c = K x^(1+A) (1 + O(x^p)) with p as small as 1/9: the plain slope is biased
    d = derive((gamma, lam))
    sol = build(Params(gamma, lam, d.ell + 1))
    want = 1 + lam / d.ell / (1 - lam)
    plain = fit_decay_exponent(sol, 1.0, corrected=False).alpha_hat
    fixed = fit_decay_exponent(sol, 1.0).alpha_hat
    assert abs(fixed - want) < 0.015 < abs(plain - want)


def test_correction_exponents(sols):
    # A = 0.875, B = 7/3 at (1.75, 0.7)
    assert correction_exponent(sols[5.0]) == pytest.approx(min(0.7 / 0.3, 2 * 0.875))
    assert correction_exponent(sols[ELL]) == pytest.approx(0.7 / 0.3)
    assert correction_exponent(sols[0.0]) == 1.0
    assert correction_exponent(sols["II"]) == 1.0


def test_c2x_limit_far_interface():
    # |xi_v| ~ 4e8: the fitting window follows the interface scale
    sol = build(Params(1.25, 0.1, -9.0))
    fit = fit_decay_exponent(sol, 1.0)
    assert fit.c2x_limit == pytest.approx(fit.c2x_predicted, rel=1e-3)
    assert fit.alpha_hat == pytest.approx(0.5, abs=0.02)


@pytest.mark.parametrize("key", [5.0, ELL, 0.0, -4.0, "II"])
def test_initial_data_recovery(sols, key):
    rec = check_initial_data_recovery(sols[key], 1.0, [1e-2, 1e-4, 1e-6])
    assert np.all(np.diff(rec["res_u"]) < 0) or rec["final_u"] < 1e-9
    assert rec["final_u"] < 1e-3 and rec["final_c"] < 1e-3


def test_c_plus_scaling():
    # (u, c)(t, x) -> k (u, c)(k t, x) maps solutions to solutions and scales the data by k
    k = 2.0
    a = build(Params(1.75, 0.7, 0.0, c_plus=1.0))
    b = build(Params(1.75, 0.7, 0.0, c_plus=k))
    x = np.linspace(a.xi_v * k ** (1 / 0.7) + 0.1, 3.0, 11)
    ua, ca, _ = eval_flow(a, k * 1.0, x)
    ub, cb, _ = eval_flow(b, 1.0, x)
    assert ub == pytest.approx(k * ua, rel=1e-6, abs=1e-9)
    assert cb == pytest.approx(k * ca, rel=1e-6, abs=1e-9)


def test_physical_jump(sols):
    res = physical_jump_check(sols[-4.0], 1.3)
    assert res["res_mass"] < 1e-6 and res["res_momentum"] < 1e-6
    assert res["two_shock_entropy"]
    with pytest.raises(ValueError):
        physical_jump_check(sols[0.0], 1.0)


@pytest.mark.parametrize("key", [5.0, ELL, 0.0, "II"])
def test_pde_residual_first_order(sols, key):
    sol = sols[key]
    lo = (sol.xi_v or 0.0) + 0.05
    x = np.linspace(lo, 2.0, 9)
    ev = FlowEvaluator(sol)
    errs = []
    for h in (1e-4, 1e-5):
        r1, r2 = pde_residual(sol, 1.0, x, h, ev)
        errs.append(np.max(np.abs(np.r_[r1, r2])))
    assert math.log10(errs[0] / errs[1]) >= 0.9


@pytest.mark.parametrize("key", [5.0, ELL, 0.0, -4.0, "II"])
def test_density_nonnegative(sols, key):
    sol = sols[key]
    u, c, rho = eval_flow(sol, 1.0, np.linspace(-8.0, 8.0, 801))
    assert np.all(rho >= 0) and np.all(c >= 0)


def test_sample_flow_csv(sols, tmp_path):
    sol = sols[-4.0]
    smp = sample_flow(sol, 1.0, np.linspace(-5, 2, 21))
    assert smp.x_shock == pytest.approx(sol.xi_s)
    smp.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,x,u,c,rho,region" and len(lines) == 22
