import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssvac.core import (
    REGIONS,
    ParameterError,
    Params,
    SignConditionError,
    classify_P1,
    classify_P2,
    classify_triple,
    critical_point,
    critical_points,
    derive,
    eval_FGD,
    g_curve,
    in_cone,
    p3_in_cone_predicted,
    p3_wronskian,
    region_of,
)

import oracles

gammas = st.floats(1.05, 8.0).filter(lambda g: abs(g - 3.0) > 1e-3)
lams = st.one_of(st.floats(0.02, 0.98), st.floats(-5.0, -0.02))
coords = st.floats(-5.0, 5.0)


# ---------------------------------------------------------------------------
# derived constants


def test_derive_matches_closed_forms():
    d = derive((1.75, 0.7))
    assert d.ell == pytest.approx(8.0 / 3.0, rel=1e-15)
    assert d.V_star == pytest.approx(0.8, rel=1e-15)
    assert d.k1 == pytest.approx(0.1875, rel=1e-14)
    assert d.k0 == pytest.approx(-0.1125, rel=1e-14)


def test_derive_gamma3_and_lambda_hat():
    d = derive((3.0, 0.5))
    assert d.ell == 1.0 and d.k1 == 0.0 and d.gamma_is_3
    assert derive((6.0, 0.5)).lambda_hat == pytest.approx(3.0 / 13.0, rel=1e-15)


@pytest.mark.parametrize("gamma,lam", [(0.9, 0.5), (1.0, 0.5), (2.0, 0.0), (2.0, 1.0), (2.0, 1.5)])
def test_params_rejects_invalid(gamma, lam):
    with pytest.raises(ParameterError):
        Params(gamma, lam)


def test_params_u_plus():
    p = Params(2.0, 0.5, mach=-1.5, c_plus=2.0)
    assert p.u_plus == -3.0
    assert p.with_mach(2.0).u_plus == 4.0


@given(gammas, lams)
def test_derived_agree_with_high_precision(gamma, lam):
    d = derive((gamma, lam))
    ref = oracles.consts(gamma, lam)
    for key in ("ell", "V_star", "k1", "k0"):
        assert getattr(d, key) == pytest.approx(float(ref[key]), rel=1e-13, abs=1e-15)
    assert d.V_star == d.ell * (1.0 - lam)
    if lam < 1:
        assert d.k0 < 0


# ---------------------------------------------------------------------------
# F, G, D


def test_eval_fgd_examples():
    d = derive((1.75, 0.7))
    F, G, D = eval_FGD(0.0, 0.0, d)
    assert (F, G, D) == (0.0, 0.0, 1.0)
    F, G, D = eval_FGD(-1.0, 1.0, d)
    assert G == pytest.approx(-1.8, abs=1e-15)
    assert D == -1.0
    assert eval_FGD(0.37, 0.0, d)[0] == 0.0


@given(gammas, lams, coords, coords)
def test_fgd_matches_high_precision(gamma, lam, V, C):
    d = derive((gamma, lam))
    ref = oracles.FGD(V, C, gamma, lam)
    got = eval_FGD(V, C, d)
    scale = 1.0 + abs(V) ** 3 + abs(C) ** 3 + d.V_star * C * C
    for a, b in zip(got, ref):
        assert abs(a - float(b)) <= 1e-13 * scale


@given(gammas, lams, coords, coords)
def test_symmetry_in_c(gamma, lam, V, C):
    d = derive((gamma, lam))
    F1, G1, _ = eval_FGD(V, C, d)
    F2, G2, _ = eval_FGD(V, -C, d)
    assert G1 == G2
    assert F1 == -F2


@given(gammas, lams, coords, st.sampled_from([1.0, -1.0]))
def test_critical_line_proportionality(gamma, lam, V, sgn):
    d = derive((gamma, lam))
    C = sgn * (1.0 + V)
    F, G, D = eval_FGD(V, C, d)
    scale = 1.0 + abs(V) ** 3 * (1.0 + d.ell)
    assert D == 0.0
    assert abs(F + sgn / d.ell * G) <= 1e-12 * scale


@given(gammas, lams, coords, st.sampled_from([1.0, -1.0]))
def test_invariant_lines(gamma, lam, V, sgn):
    d = derive((gamma, lam))
    k = sgn / d.ell
    F, G, _ = eval_FGD(V, k * V, d)
    scale = 1.0 + abs(V) ** 3 * (1.0 + d.ell + d.V_star)
    assert abs(F - k * G) <= 1e-12 * scale


# ---------------------------------------------------------------------------
# critical points


def test_critical_points_gamma_175():
    pts = {cp.id: cp for cp in critical_points(derive((1.75, 0.7)))}
    assert list(pts) == ["P0", "P1", "P2", "P3", "P4", "P5", "P6"]
    ref3 = oracles.critical_point_off_axis(1.75, 0.7, (-0.5, 0.19))
    ref5 = oracles.critical_point_off_axis(1.75, 0.7, (-1.6, 0.6))
    assert pts["P3"].location == pytest.approx(ref3, abs=1e-14)
    assert pts["P3"].location == pytest.approx((-0.509091, 0.190909), abs=1e-6)
    assert pts["P5"].location == pytest.approx((-1.6, 0.6), abs=1e-14)
    assert pts["P5"].location == pytest.approx(ref5, abs=1e-14)
    assert pts["P0"].kind == "star" and pts["P1"].kind == "saddle" and pts["P2"].kind == "node"


def test_critical_points_gamma3():
    pts = critical_points(derive((3.0, 0.5)))
    assert len(pts) == 5
    p3 = [cp for cp in pts if cp.id == "P3"][0]
    assert p3.location.V == pytest.approx(-0.25, abs=1e-15)
    assert [cp for cp in pts if cp.id == "P2"][0].kind == "star"
    with pytest.raises(ParameterError):
        critical_point(derive((3.0, 0.5)), "P5")


def test_p3_saddle_gamma2():
    d = derive((2.0, 0.5))
    p3 = critical_point(d, "P3")
    assert p3.location == pytest.approx((-1.0 / 3.0, 1.0 / 6.0), abs=1e-15)
    assert p3_wronskian(d) == pytest.approx(-0.069444, abs=1e-6)
    assert p3.kind == "saddle"


@settings(max_examples=200)
@given(gammas, lams)
def test_critical_point_residuals(gamma, lam):
    d = derive((gamma, lam))
    for cp in critical_points(d):
        V, C = cp.location
        # cubic polynomials: residuals scale with the cube of the coordinates
        scale = (1.0 + abs(V) + abs(C)) ** 3
        F, G, D = eval_FGD(V, C, d)
        assert max(abs(F), abs(G)) < 1e-12 * scale
        if cp.id in ("P5", "P6"):
            assert abs(D) < 1e-12 * scale


@given(gammas, lams)
def test_off_axis_points_on_invariant_lines(gamma, lam):
    d = derive((gamma, lam))
    pts = {cp.id: cp.location for cp in critical_points(d)}
    for name in ("P3", "P4", "P5", "P6"):
        V, C = pts[name]
        assert abs(abs(C) - abs(V) / d.ell) < 1e-13 * (1 + abs(V))
    # P3 on E- iff lam > 0, P5 on E- iff gamma < 3
    V3, C3 = pts["P3"]
    assert (C3 * V3 < 0) == (lam > 0)
    V5, C5 = pts["P5"]
    assert (C5 * V5 < 0) == (gamma < 3)


@given(gammas, lams)
def test_cone_membership_of_p3(gamma, lam):
    d = derive((gamma, lam))
    V3, C3 = critical_point(d, "P3").location
    margin = abs(abs(C3) - abs(1 + V3))
    if margin > 1e-12:
        assert in_cone(V3, C3) == p3_in_cone_predicted(d)


@given(gammas, lams)
def test_g_curve_values(gamma, lam):
    d = derive((gamma, lam))
    V3, C3 = critical_point(d, "P3").location
    V5, C5 = critical_point(d, "P5").location
    assert g_curve(V3, d) == pytest.approx(lam**2 / (d.ell + 1) ** 2, rel=1e-12)
    assert g_curve(V3, d) == pytest.approx(C3 * C3, rel=1e-12)
    assert g_curve(V5, d) == pytest.approx(1.0 / (d.ell - 1) ** 2, rel=1e-10)


# ---------------------------------------------------------------------------
# classification


def test_classify_p1():
    s, kind = classify_P1(derive((1.75, 0.7)))
    assert kind == "saddle"
    assert s == pytest.approx(-0.2916667, abs=1e-7)
    assert s == pytest.approx(float(oracles.sigma1(1.75, 0.7)), rel=1e-14)
    assert classify_P1(derive((2.0, 0.5)))[0] == pytest.approx(-0.5, rel=1e-15)


@given(gammas, lams)
def test_sigma1_negative(gamma, lam):
    assert classify_P1(derive((gamma, lam)))[0] < 0


def test_classify_p2():
    A, kind = classify_P2(derive((1.75, 0.7)))
    assert A == pytest.approx(0.875, rel=1e-14) and kind == "node"
    assert classify_P2(derive((3.0, 0.4)))[1] == "star"
    assert classify_P2(derive((2.0, -0.5)))[0] < 0


def test_classify_triple_p5():
    L1, L2, W, R2 = classify_triple(derive((1.75, 0.7)), "P5")
    assert L1 == pytest.approx(-37.0 / 48.0, abs=1e-12)
    assert L2 == pytest.approx(-0.375, abs=1e-12)
    assert -1.0 < L1 < L2
    assert W > 0


def test_classify_triple_degenerate_at_lambda_hat():
    d = derive((6.0, 3.0 / 13.0))
    L1, L2, W, R2 = classify_triple(d, "P6")
    assert R2 == pytest.approx(0.0, abs=1e-10)
    assert L1 == L2 == pytest.approx(-1.0 / d.ell, rel=1e-9) or L1 == pytest.approx(1.0 / d.ell, rel=1e-9)
    assert critical_point(d, "P6").kind == "degenerate_node"


@given(st.floats(1.05, 2.95), st.floats(0.02, 0.98))
def test_triple_r2_formula(gamma, lam):
    d = derive((gamma, lam))
    _, _, W, R2 = classify_triple(d, "P5")
    C5 = critical_point(d, "P5").location.C
    assert W > 0
    # C5 = 1/|ell-1| grows near gamma = 3 and the discriminant loses digits
    assert R2 == pytest.approx((C5 * (2 + (d.ell - 3) * (1 - lam))) ** 2, rel=1e-7, abs=1e-12)


def test_classify_triple_absent_for_gamma3():
    with pytest.raises(ParameterError):
        classify_triple(derive((3.0, 0.5)), "P5")


# ---------------------------------------------------------------------------
# regions


def test_region_examples():
    assert region_of((-2.0, -0.5), 1) == "S1m"
    assert region_of((-1.5, 0.8), -1) == "T2m"
    assert region_of((0.5, 0.2), -1) == "T1m"
    assert region_of((-2.0, 1.0), -1) == "on_critical_line"


def test_region_sign_condition():
    with pytest.raises(SignConditionError):
        region_of((-2.0, 0.5), 1)
    with pytest.raises(SignConditionError):
        region_of((-2.0, -0.5), -1)


@given(coords, st.floats(0.01, 5.0), st.sampled_from([1, -1]))
def test_regions_cover_the_half_plane(V, absC, sgn):
    C = -absC if sgn > 0 else absC
    if abs(1.0 + V) < 1e-6 or abs(abs(C) - abs(1 + V)) < 1e-6:
        return
    tag = region_of((V, C), sgn)
    assert tag in REGIONS
    assert tag.startswith("S") == (sgn > 0)
    assert tag[1] == ("1" if (1 + V) * C > 0 else "2")
