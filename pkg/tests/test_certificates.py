import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mftorus.certificates import (
    HExpansion,
    build_test_function,
    c_star,
    cap_constant,
    critical_energy,
    cutoff_eta,
    fit_h_expansion,
    lower_bound,
    maximizer,
    perturbation_study,
    r_rule,
    robin_profile,
    test_energy_asymptotic as energy_asymptotic,
    test_energy_numeric as energy_numeric,
    thm2_certificate,
    thm3_certificate,
)
from mftorus.errors import ConfigurationError, PreconditionError, ResolutionError
from mftorus.spectral import GridField, trig_field
from mftorus.torus import TorusLattice, TranslationGroup, is_invariant

A_P = -5.2421317036460381
A_TILDE_P = -5.9352788842059834
LB_HALF_SHIFT = 6.5225684190642828
LB_IDENTITY = 11.97162857074655
COND_RHS = -0.12976237569364621


def flat(n=64):
    return GridField.constant(1.0, n)


def test_lower_bound_examples(half_shift):
    assert lower_bound(flat(), half_shift) == pytest.approx(LB_HALF_SHIFT, abs=1e-12)
    assert LB_HALF_SHIFT == pytest.approx(-8 * math.pi * (2 * math.log(2 * math.pi) + A_TILDE_P) - 16 * math.pi,
                                          abs=1e-12)
    assert lower_bound(flat(), TranslationGroup.identity()) == pytest.approx(LB_IDENTITY, abs=1e-12)


@pytest.mark.parametrize("t", [0.5, 2.0, 7.3])
def test_lower_bound_scaling(half_shift, t):
    h = trig_field(1.0, [(2, 0, 0.1, 0.0)], 64)
    A = robin_profile(h, half_shift)
    diff = lower_bound(h * t, half_shift, A) - lower_bound(h, half_shift, A)
    assert diff == pytest.approx(-16 * math.pi * math.log(t), abs=1e-12)


def test_robin_profile_constant(half_shift, skew):
    assert robin_profile(flat(), half_shift) == pytest.approx(A_TILDE_P, abs=1e-13)
    robin_profile(GridField.constant(1.0, 16, lattice=skew), TranslationGroup.cyclic(4, "a"))


def test_maximizer_tie_break(half_shift):
    p, m = maximizer(flat(), half_shift)
    assert p.coords == (0.0, 0.0)
    assert m == pytest.approx(2 * math.log(2 * math.pi) + A_TILDE_P, abs=1e-13)


def test_cond_certificate_examples(half_shift):
    rep = thm2_certificate(flat(), half_shift)
    assert rep.cond_lhs == pytest.approx(0.0, abs=1e-15)
    assert rep.cond_rhs == pytest.approx(COND_RHS, abs=1e-13)
    assert rep.cond_holds and rep.cond_margin > 0
    bad = thm2_certificate(flat(), half_shift, A_tilde=0.0)
    assert bad.cond_rhs == pytest.approx(1 + math.log(2 * math.pi), abs=1e-14)
    assert not bad.cond_holds


def test_cond_certificate_rejects_bad_h(half_shift):
    with pytest.raises(PreconditionError):
        thm2_certificate(trig_field(1.0, [(1, 0, 0.1, 0.0)], 32), half_shift)


@given(a=st.floats(-0.4, 0.4), b=st.floats(-0.4, 0.4), scale=st.floats(0.1, 10.0))
def test_cond_implies_energy_below_bound(a, b, scale):
    G = TranslationGroup.cyclic(2, "a")
    h = trig_field(scale, [(2, 0, a * scale, 0.0), (0, 1, 0.0, b * scale)], 32)
    rep = thm2_certificate(h, G, A_tilde=A_TILDE_P)
    assert rep.cond_holds == (rep.cond_lhs > rep.cond_rhs)
    if rep.cond_holds:
        J0 = -16 * math.pi * rep.cond_lhs
        assert J0 < rep.lower_bound_value


def test_critical_certificate_constant_h(half_shift):
    rep = thm3_certificate(flat(), half_shift)
    assert rep.hy2_value == pytest.approx(16 * math.pi, abs=1e-5)
    assert rep.hy2_holds
    assert rep.inputs["frame"].startswith("lattice")
    forced = thm3_certificate(flat(), half_shift, b=(0.0, 0.0),
                              expansion=HExpansion(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0))
    assert forced.hy2_value == 16 * math.pi


def test_critical_certificate_cosine_h(half_shift):
    h = trig_field(1.0, [(2, 0, 0.01, 0.0)], 256)
    rep = thm3_certificate(h, half_shift)
    expected = 16 * math.pi - 0.02 * 8 * math.pi ** 2 / 1.01
    assert rep.hy2_value == pytest.approx(expected, abs=1e-4)
    assert rep.hy2_holds
    assert rep.inputs["laplacian_h_p"] == pytest.approx(0.16 * math.pi ** 2, rel=1e-4)
    assert rep.inputs["p"] == [0.0, 0.0]


def test_critical_certificate_rejects_non_maximizer(half_shift):
    h = trig_field(1.0, [(2, 0, 0.01, 0.0)], 64)
    with pytest.raises(PreconditionError):
        thm3_certificate(h, half_shift, p=(0.25, 0.0))


def test_h_expansion_fit_quadratic():
    h = GridField.from_function(lambda x, y: 2 + 0.01 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)
                                + 0.003 * np.sin(2 * np.pi * x), 256, cartesian=True)
    hx = fit_h_expansion(h, (0.0, 0.0))
    assert hx.k1 == pytest.approx(0.003 * 2 * math.pi, rel=1e-4)
    assert abs(hx.k2) < 1e-10 and abs(hx.k4) < 1e-8
    assert hx.k3 == pytest.approx(-0.01 * 2 * math.pi ** 2, rel=1e-3)
    assert hx.laplacian == pytest.approx(0.01 * 8 * math.pi ** 2, rel=1e-3)


def test_direct_formulas():
    assert cap_constant(2.0, 0.1) == pytest.approx(2 * math.log(1.5) - 4 * math.log(0.2), abs=1e-14)
    assert cap_constant(2.0, 0.1) == pytest.approx(7.2487, abs=1e-4)
    assert r_rule(0.01) == pytest.approx(8.996, abs=1e-3)
    for bad in (0.0, 0.5, 1.0):
        with pytest.raises(ConfigurationError):
            r_rule(bad)


def test_cutoff_shape():
    Re = 0.1
    r = np.linspace(0, 0.3, 30001)
    eta = cutoff_eta(r, Re)
    assert np.all(eta[r <= Re] == 1.0) and np.all(eta[r >= 2 * Re] == 0.0)
    slope = np.max(np.abs(np.diff(eta) / np.diff(r)))
    assert slope <= 4 / Re
    assert slope == pytest.approx(1.875 / Re, rel=1e-3)


@pytest.fixture(scope="module")
def tf512():
    G = TranslationGroup.cyclic(2, "a")
    return build_test_function(0.005, GridField.constant(1.0, 512), G), G


def test_test_function_continuity_and_invariance(tf512):
    tf, G = tf512
    assert tf.interface_jump < 1e-8
    assert is_invariant(tf.field, G)
    assert tf.A_tilde == pytest.approx(A_TILDE_P, abs=1e-12)
    assert tf.c == pytest.approx(cap_constant(r_rule(0.005), 0.005), abs=1e-14)
    # cap value at the pole
    assert tf.field.values[0, 0] == pytest.approx(tf.c + A_TILDE_P, abs=1e-9)


def test_test_function_preconditions(half_shift):
    with pytest.raises(ConfigurationError):
        build_test_function(0.02, flat(512), half_shift)
    with pytest.raises(ResolutionError):
        build_test_function(0.003, flat(128), half_shift)


def test_energy_numeric_sign_and_scaling(half_shift):
    h = flat(512)
    rows = energy_numeric([0.005, 0.004], h, half_shift)
    for row in rows:
        assert row["gap_numeric"] < 0
        assert row["gap_asymptotic"] < 0
        assert row["C_star"] == pytest.approx(LB_HALF_SHIFT, abs=1e-10)
    t = 3.0
    scaled = energy_numeric([0.005], h * t, half_shift)[0]
    shift = -16 * math.pi * math.log(t)
    assert scaled["J_numeric"] - rows[0]["J_numeric"] == pytest.approx(shift, abs=1e-8)
    assert scaled["C_star"] - rows[0]["C_star"] == pytest.approx(shift, abs=1e-10)
    assert scaled["gap_numeric"] == pytest.approx(rows[0]["gap_numeric"], abs=1e-8)


def test_energy_numeric_skips_infeasible(half_shift):
    rows = energy_numeric([0.05], flat(64), half_shift, skip_infeasible=True)
    assert math.isnan(rows[0]["J_numeric"]) and "error" in rows[0]
    with pytest.raises(ConfigurationError):
        energy_numeric([0.05], flat(64), half_shift)


def test_energy_asymptotic_examples(half_shift):
    h = flat(64)
    cs = c_star(h, half_shift)
    assert cs == pytest.approx(LB_HALF_SHIFT, abs=1e-10)
    gap = energy_asymptotic(0.05, h, half_shift) - cs
    assert gap == pytest.approx(-64 * math.pi * 16 * math.pi * 0.05 ** 2 * math.log(20), rel=1e-6)
    assert gap == pytest.approx(-75.6907326, abs=1e-6)
    gaps = [energy_asymptotic(e, h, half_shift) - cs for e in (1e-2, 1e-4, 1e-8)]
    assert all(g < 0 for g in gaps)
    assert abs(gaps[-1]) < 1e-10


def test_critical_energy_zero_field():
    h = flat(64)
    assert critical_energy(GridField.constant(3.0, 64), h, 2) == pytest.approx(0.0, abs=1e-12)


def test_perturbation_study(half_shift):
    rows = perturbation_study(1.0, [(2, 0, 1.0, 0.0), (0, 1, 0.0, 1.0)], [0.0, 0.001, 0.01, 0.05], half_shift)
    assert rows[0]["margin"] == pytest.approx(-COND_RHS, abs=1e-12)
    assert all(r["holds"] for r in rows[:3])
    margins = [r["margin"] for r in rows]
    assert abs(margins[1] - margins[0]) < 0.01
    with pytest.raises(ConfigurationError):
        perturbation_study(1.0, [(1, 0, 1.0, 0.0)], [0.01], half_shift)
