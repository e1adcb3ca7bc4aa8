import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mftorus.blowup import (
    bubble_fd_residual,
    bubble_mass,
    bubble_mass_quadrature,
    bubble_profile,
    bubble_radial,
    diagnose,
    mass_fractions,
    r_epsilon,
    rescaled_equation_residual,
    rescaled_profile,
)
from mftorus.errors import ConfigurationError, ResolutionError
from mftorus.solver import ProblemSpec, random_invariant_field, state_from_field
from mftorus.spectral import GridField
from mftorus.torus import TorusLattice, TranslationGroup, min_image


def test_bubble_closed_forms():
    assert bubble_profile(np.zeros(2)) == 0.0
    assert float(bubble_radial(2.0)) == pytest.approx(-2 * math.log(1.5), abs=1e-15)
    y = np.random.default_rng(0).uniform(-6, 6, size=(200, 2))
    assert np.max(np.abs(bubble_fd_residual(y))) < 1e-8
    for R in (0.5, 2.0, 10.0, 100.0):
        assert bubble_mass(R) == pytest.approx(bubble_mass_quadrature(R), rel=1e-12)
    assert bubble_mass(math.inf) == 8 * math.pi
    assert bubble_mass(1e6) == pytest.approx(8 * math.pi, rel=1e-11)


def flat_spec(n, eps=0.3, ell=2):
    return ProblemSpec(h=GridField.constant(1.0, n), group=TranslationGroup.cyclic(ell, "a"), epsilon=eps)


def test_r_epsilon_example():
    spec = flat_spec(64)
    s = state_from_field(GridField.constant(0.0, 64), spec)
    r = r_epsilon(s, spec)
    assert r == pytest.approx(1 / math.sqrt(16 * math.pi * 0.7), rel=1e-14)
    assert r == pytest.approx(0.1686, abs=1e-4)


@pytest.mark.parametrize("kappa", [0.5, 2.0, -3.25, 17.0])
def test_r_epsilon_shift_invariance_exact(kappa):
    spec = flat_spec(32)
    # dyadic values keep u + kappa - max(u + kappa) exact
    rng = np.random.default_rng(5)
    base = rng.integers(-8, 8, size=(16, 32)) / 8.0
    u = GridField(np.concatenate([base, base], axis=0))
    s0 = state_from_field(u, spec)
    s1 = state_from_field(u.with_values(u.values + kappa), spec)
    assert s1.c_eps == s0.c_eps + kappa
    assert r_epsilon(s1, spec) == r_epsilon(s0, spec)


def injected_bubbles(n, scale, eps=0.01, p=(0.3125, 0.40625), ell=2, c=5.0):
    """``log sum_i exp(phi((x - sigma_i p) / scale)) + c``: one exact bubble per orbit point.

    The default ``p`` is a grid node for every power-of-two grid used here.
    """
    G = TranslationGroup.cyclic(ell, "a")
    spec = ProblemSpec(h=GridField.constant(1.0, n), group=G, epsilon=eps)
    s, t = np.meshgrid(np.arange(n) / n, np.arange(n) / n, indexing="ij")
    st_ = np.stack([s, t], axis=-1)
    terms = []
    for k in range(ell):
        d = min_image(st_ - np.array([p[0] + k / ell, p[1]]), spec.lattice) / scale
        terms.append(bubble_profile(d))
    u = np.logaddexp.reduce(np.stack(terms), axis=0) + c
    return spec, state_from_field(GridField(u), spec)


def test_profile_recovers_injected_bubble():
    spec, s = injected_bubbles(512, 0.01)
    prof = rescaled_profile(s, spec, R=4.0)
    assert prof.sup_error < 0.05
    assert prof.phi_eps[0] == pytest.approx(0.0, abs=1e-12)
    assert prof.is_monotone(0.05)
    assert prof.r_eps == pytest.approx(0.01 / math.sqrt(0.99), rel=0.02)
    rows = list(prof.rows())
    assert len(rows) == 65 and rows[0][0] == 0.0


def test_rescaled_residual_on_injected_bubble():
    spec, s = injected_bubbles(1024, 0.01)
    assert rescaled_equation_residual(s, spec, R=4.0) < 0.05


def test_fractions_injected_bubble():
    spec, s = injected_bubbles(512, 0.005)
    d = diagnose(s, spec, R=20.0)
    assert d.mass_fractions[0] == pytest.approx(d.mass_fractions[1], abs=1e-10)
    for f in d.mass_fractions:
        assert abs(f - 0.5) < 0.05
    assert d.fraction_sum <= 1 + 1e-8
    assert d.limit_sum(2) == 1.0
    assert set(d.to_dict()) >= {"r_eps", "profile_error", "mass_fractions", "R_used", "lemma42_ratio"}


def test_fractions_uniform_density_are_area():
    spec = flat_spec(64)
    s = state_from_field(GridField.constant(0.0, 64), spec)
    r = r_epsilon(s, spec)
    fr = mass_fractions(s, spec, R=1.0)
    for f in fr:
        assert f == pytest.approx(math.pi * r * r, abs=1e-10)


def test_fractions_uniform_density_skew():
    L = TorusLattice((1.0, 0.0), (0.3, 1.2))
    spec = ProblemSpec(h=GridField.constant(1.0, 64, lattice=L), group=TranslationGroup.cyclic(2, "a"),
                       epsilon=0.3)
    s = state_from_field(GridField.constant(0.0, 64, lattice=L), spec)
    r = r_epsilon(s, spec)
    for f in mass_fractions(s, spec, R=1.0):
        assert f == pytest.approx(math.pi * r * r / 1.2, rel=1e-3)


@given(seed=st.integers(0, 10_000), ell=st.sampled_from([2, 4]))
def test_fractions_orbit_equal_and_bounded(seed, ell):
    spec = flat_spec(128, ell=ell)
    u = random_invariant_field(spec, seed=seed, amplitude=2.0)
    s = state_from_field(u, spec)
    fr = mass_fractions(s, spec, R=0.2 / ell / r_epsilon(s, spec))
    assert max(fr) - min(fr) < 1e-10
    assert all(0.0 <= f <= 1.0 for f in fr)
    assert sum(fr) <= 1 + 1e-8


def test_overlap_and_resolution_errors():
    spec, s = injected_bubbles(256, 0.01)
    with pytest.raises(ConfigurationError):
        mass_fractions(s, spec, R=40.0)
    with pytest.raises(ResolutionError):
        rescaled_profile(s, spec, R=0.5)


def test_rescaled_residual_needs_rectangular():
    L = TorusLattice((1.0, 0.0), (0.3, 1.2))
    spec = ProblemSpec(h=GridField.constant(1.0, 64, lattice=L), group=TranslationGroup.identity(),
                       epsilon=0.3)
    s = state_from_field(GridField.constant(0.0, 64, lattice=L), spec)
    with pytest.raises(ConfigurationError):
        rescaled_equation_residual(s, spec, R=0.5)
