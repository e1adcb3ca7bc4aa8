import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import band_limited
from mftorus.errors import ConfigurationError, PreconditionError
from mftorus.spectral import (
    GridField,
    bilinear_sample,
    chen_diagnostic,
    dirichlet_energy,
    fd_dirichlet_energy,
    grid_csv_text,
    grid_from_bytes,
    grid_to_bytes,
    gradient,
    inner,
    integrate,
    integrate_weighted,
    inverse_laplacian,
    laplacian,
    mode_is_invariant,
    trig_field,
)
from mftorus.torus import TorusLattice, TranslationGroup, symmetrize

FOUR_PI2 = 4 * math.pi ** 2


def cos1(n=64):
    return GridField.from_function(lambda s, t: np.cos(2 * np.pi * s), n)


def test_laplacian_of_constant_is_zero():
    assert np.max(np.abs(laplacian(GridField.constant(2.5, 32)).values)) < 1e-13


def test_laplacian_sign_convention():
    u = cos1()
    assert np.max(np.abs(laplacian(u).values - FOUR_PI2 * u.values)) < 1e-10


def test_laplacian_two_modes():
    u = GridField.from_function(lambda s, t: np.cos(2 * np.pi * s) + np.cos(2 * np.pi * t), 64)
    assert np.max(np.abs(laplacian(u).values - FOUR_PI2 * u.values)) < 1e-10


def test_laplacian_skew_plane_wave(skew):
    # e^{2 pi i (m s + n t)} has wavevector 2 pi B^{-T} (m, n)
    m, n = 2, -1
    k = 2 * np.pi * np.linalg.inv(skew.matrix).T @ np.array([m, n])
    u = GridField.from_function(lambda s, t: np.cos(2 * np.pi * (m * s + n * t)), 64, lattice=skew)
    assert np.max(np.abs(laplacian(u).values - (k @ k) * u.values)) < 1e-9


def test_inverse_laplacian_examples():
    z = GridField.constant(0.0, 32)
    assert np.all(inverse_laplacian(z).values == 0.0)
    f = GridField.from_function(lambda s, t: FOUR_PI2 * np.cos(2 * np.pi * s), 64)
    assert np.max(np.abs(inverse_laplacian(f).values - cos1().values)) < 1e-12


def test_inverse_laplacian_rejects_mean():
    with pytest.raises(PreconditionError):
        inverse_laplacian(GridField.constant(1.0, 16))


def test_energy_examples():
    assert dirichlet_energy(GridField.constant(4.0, 32)) == pytest.approx(0.0, abs=1e-20)
    assert dirichlet_energy(cos1()) == pytest.approx(2 * math.pi ** 2, rel=1e-13)
    v = GridField.from_function(lambda s, t: np.sin(6 * np.pi * t), 64)
    assert dirichlet_energy(cos1() + v) == pytest.approx(dirichlet_energy(cos1()) + dirichlet_energy(v), rel=1e-13)


def test_integration_examples():
    one = GridField.constant(1.0, 32)
    assert integrate(one) == pytest.approx(1.0, abs=1e-15)
    assert integrate_weighted(one, GridField.constant(0.0, 32)) == pytest.approx(1.0, abs=1e-15)
    two = GridField.constant(2.0, 32)
    assert integrate_weighted(two, GridField.constant(math.log(3.0), 32)) == pytest.approx(6.0, rel=1e-14)


def test_cell_area_skew(skew):
    assert GridField.constant(1.0, 16, lattice=skew).cell_area == pytest.approx(1.2 / 256)


def test_chen_diagnostic():
    u = GridField.from_function(lambda s, t: np.cos(4 * np.pi * s), 64)
    val = chen_diagnostic(u, 2)
    assert math.isfinite(val) and val >= 1.0
    assert chen_diagnostic(u * 2.0, 2) == val
    with pytest.raises(PreconditionError):
        chen_diagnostic(GridField.constant(1.0, 16), 2)


def test_fd_energy_converges_for_smooth_fields():
    errs = [abs(fd_dirichlet_energy(cos1(n)) - 2 * math.pi ** 2) for n in (128, 256)]
    assert errs[1] < 70.0 / 256 ** 2
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.01)


def test_fd_energy_skew(skew):
    u = GridField.from_function(lambda s, t: np.cos(2 * np.pi * (s + t)), 512, lattice=skew)
    assert fd_dirichlet_energy(u) == pytest.approx(dirichlet_energy(u), rel=1e-3)


def test_gradient_matches_analytic():
    u = GridField.from_function(lambda x, y: np.sin(2 * np.pi * x) * np.cos(4 * np.pi * y), 64, cartesian=True)
    gx, gy = gradient(u)
    s = np.arange(64)[:, None] / 64
    t = np.arange(64)[None, :] / 64
    assert np.max(np.abs(gx.values - 2 * np.pi * np.cos(2 * np.pi * s) * np.cos(4 * np.pi * t))) < 1e-10
    assert np.max(np.abs(gy.values + 4 * np.pi * np.sin(2 * np.pi * s) * np.sin(4 * np.pi * t))) < 1e-10


@given(seed=st.integers(0, 2**31))
def test_integration_by_parts(seed):
    rng = np.random.default_rng(seed)
    for L in (None, TorusLattice((1.0, 0.0), (0.3, 1.2))):
        kw = {} if L is None else {"lattice": L}
        u, v = band_limited(rng, 48, **kw), band_limited(rng, 48, **kw)
        gu, gv = gradient(u), gradient(v)
        lhs = inner(gu[0], gv[0]) + inner(gu[1], gv[1])
        rhs = inner(laplacian(u), v)
        scale = math.sqrt(dirichlet_energy(u) * dirichlet_energy(v))
        assert abs(lhs - rhs) < 1e-9 * scale


@given(seed=st.integers(0, 2**31))
def test_inverse_forward_round_trip(seed):
    u = band_limited(np.random.default_rng(seed), 64)
    back = inverse_laplacian(laplacian(u), rtol=1e-8)
    assert np.max(np.abs(back.values - u.values)) < 1e-10 * np.max(np.abs(u.values))


@given(seed=st.integers(0, 2**31))
def test_energy_nonnegative(seed):
    u = band_limited(np.random.default_rng(seed), 32, mean_zero=False)
    assert dirichlet_energy(u) > 0
    assert dirichlet_energy(GridField.constant(float(u.mean()), 32)) < 1e-24


@given(seed=st.integers(0, 2**31))
def test_laplacian_commutes_with_symmetrize(seed):
    u = band_limited(np.random.default_rng(seed), 64, mean_zero=False)
    G = TranslationGroup.cyclic(4)
    d = laplacian(symmetrize(u, G)).values - symmetrize(laplacian(u), G).values
    assert np.max(np.abs(d)) < 1e-12 * np.max(np.abs(laplacian(u).values))


def test_bilinear_sample_exact_at_nodes_and_linear():
    u = GridField(np.random.default_rng(1).normal(size=(16, 16)))
    assert bilinear_sample(u, np.array([3 / 16, 5 / 16])) == u.values[3, 5]
    lin = GridField.from_function(lambda s, t: s + 2 * t, 16)
    # linear inside the cell away from the periodic seam
    assert float(bilinear_sample(lin, np.array([0.3, 0.2]))) == pytest.approx(0.7, abs=1e-14)


def test_binary_round_trip(skew):
    u = GridField(np.random.default_rng(2).normal(size=(8, 12)), skew)
    data = grid_to_bytes(u)
    assert data[:8] == b"MFTGRID\x00"
    assert len(data) == 8 + 4 * 3 + 8 * 4 + 8 * 96
    back = grid_from_bytes(data)
    assert np.array_equal(back.values, u.values) and back.lattice == skew
    with pytest.raises(ConfigurationError):
        grid_from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ConfigurationError):
        grid_from_bytes(data[:-8])


def test_csv_header_and_rows():
    text = grid_csv_text(GridField.constant(1.5, 4))
    lines = text.splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 17
    assert lines[1] == "0.0,0.0,1.5"


def test_field_validation():
    with pytest.raises(ConfigurationError):
        GridField(np.full((4, 4), np.nan))
    with pytest.raises(ConfigurationError):
        GridField(np.zeros((5, 4)))
    u = GridField.constant(1.0, 4)
    with pytest.raises(ValueError):
        u.values[0, 0] = 2.0


def test_argmax_smallest_row_major():
    v = np.zeros((8, 8))
    v[5, 1] = v[2, 7] = v[2, 3] = 1.0
    assert GridField(v).argmax() == (2, 3)


def test_trig_field_and_mode_invariance():
    G = TranslationGroup.cyclic(2)
    assert mode_is_invariant(2, 0, G) and mode_is_invariant(0, 1, G)
    assert not mode_is_invariant(1, 0, G)
    h = trig_field(1.0, [(2, 0, 0.1, 0.0)], 32)
    ref = GridField.from_function(lambda s, t: 1 + 0.1 * np.cos(4 * np.pi * s), 32)
    assert np.max(np.abs(h.values - ref.values)) < 1e-15
