"""Periodic grid fields and Fourier differential operators.

The Laplacian is the nonnegative one, ``Delta = -div grad``, so
``Delta cos(2 pi x1) = 4 pi^2 cos(2 pi x1)`` on the unit torus.
"""
from __future__ import annotations

import functools
import io
import math
import struct
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, PreconditionError
from .torus import UNIT_SQUARE, TorusLattice, check_grid, grid_points

__all__ = [
    "GridField",
    "SpectralPlan",
    "plan_for",
    "laplacian",
    "inverse_laplacian",
    "dirichlet_energy",
    "fd_dirichlet_energy",
    "gradient",
    "integrate",
    "integrate_weighted",
    "inner",
    "chen_diagnostic",
    "bilinear_sample",
    "write_grid_binary",
    "read_grid_binary",
    "write_grid_csv",
    "mode_is_invariant",
    "trig_field",
]


@dataclass(frozen=True, eq=False)
class GridField:
    """Samples of a real function at the nodes ``(i/n1, j/n2)`` in lattice coordinates.

    ``values[i, j]`` is the sample at ``i/n1 * a + j/n2 * b``.
    """

    values: np.ndarray
    lattice: TorusLattice = UNIT_SQUARE

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 2:
            raise ConfigurationError("grid field values must be a 2-D array")
        check_grid(*v.shape)
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("grid field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fn: Callable, n1: int, n2: int | None = None,
                      lattice: TorusLattice = UNIT_SQUARE, cartesian: bool = False) -> "GridField":
        """Sample ``fn(s, t)`` (lattice coordinates) or ``fn(x, y)`` if ``cartesian``."""
        n2 = n1 if n2 is None else n2
        s, t = grid_points(n1, n2)
        if cartesian:
            xy = lattice.to_cartesian(np.stack([s, t], axis=-1))
            vals = fn(xy[..., 0], xy[..., 1])
        else:
            vals = fn(s, t)
        return cls(np.broadcast_to(np.asarray(vals, dtype=float), (n1, n2)), lattice)

    @classmethod
    def constant(cls, c: float, n1: int, n2: int | None = None,
                 lattice: TorusLattice = UNIT_SQUARE) -> "GridField":
        n2 = n1 if n2 is None else n2
        return cls(np.full((n1, n2), float(c)), lattice)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n1(self) -> int:
        return self.values.shape[0]

    @property
    def n2(self) -> int:
        return self.values.shape[1]

    @property
    def cell_area(self) -> float:
        return self.lattice.volume / (self.n1 * self.n2)

    @property
    def spacing(self) -> float:
        """Smallest Cartesian node spacing."""
        a = np.hypot(*self.lattice.basis_a) / self.n1
        b = np.hypot(*self.lattice.basis_b) / self.n2
        return float(min(a, b))

    def with_values(self, values) -> "GridField":
        return GridField(values, self.lattice)

    def mean(self) -> float:
        return float(self.values.mean())

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())

    def argmax(self) -> tuple[int, int]:
        """Smallest row-major index attaining the maximum."""
        k = int(np.argmax(self.values))
        return divmod(k, self.n2)

    def cartesian_nodes(self) -> np.ndarray:
        s, t = grid_points(self.n1, self.n2)
        return self.lattice.to_cartesian(np.stack([s, t], axis=-1))

    def __add__(self, other):
        o = other.values if isinstance(other, GridField) else other
        return self.with_values(self.values + o)

    def __sub__(self, other):
        o = other.values if isinstance(other, GridField) else other
        return self.with_values(self.values - o)

    def __mul__(self, other):
        o = other.values if isinstance(other, GridField) else other
        return self.with_values(self.values * o)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


class SpectralPlan:
    """Wavevectors and the symbol of ``-div grad`` for one grid and lattice."""

    def __init__(self, n1: int, n2: int, lattice: TorusLattice):
        self.n1, self.n2, self.lattice = n1, n2, lattice
        m = sfft.fftfreq(n1, 1.0 / n1)
        n = sfft.rfftfreq(n2, 1.0 / n2)
        M, N = np.meshgrid(m, n, indexing="ij")
        # e^{2 pi i (m s + n t)} = e^{2 pi i k.x} with k = B^{-T} (m, n)
        binv_t = np.linalg.inv(lattice.matrix).T
        kx = 2 * np.pi * (binv_t[0, 0] * M + binv_t[0, 1] * N)
        ky = 2 * np.pi * (binv_t[1, 0] * M + binv_t[1, 1] * N)
        self.kx, self.ky = kx, ky
        self.symbol = kx * kx + ky * ky
        self.symbol.setflags(write=False)
        inv = np.zeros_like(self.symbol)
        nz = self.symbol > 0
        inv[nz] = 1.0 / self.symbol[nz]
        self.inv_symbol = inv
        # rfft halves the last axis; interior columns stand for two conjugate modes
        w = np.full(n.shape, 2.0)
        w[0] = 1.0
        if n2 % 2 == 0:
            w[-1] = 1.0
        self.parseval_weight = np.broadcast_to(w, self.symbol.shape)

    def forward(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfft2(values)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfft2(coeffs, s=(self.n1, self.n2))


_plan_lock = threading.Lock()


@functools.lru_cache(maxsize=32)
def _cached_plan(n1, n2, lattice):
    return SpectralPlan(n1, n2, lattice)


def plan_for(u: GridField) -> SpectralPlan:
    with _plan_lock:
        return _cached_plan(u.n1, u.n2, u.lattice)


def laplacian(u: GridField) -> GridField:
    """``Delta u = -div grad u`` by spectral differentiation."""
    p = plan_for(u)
    return u.with_values(p.inverse(p.symbol * p.forward(u.values)))


def inverse_laplacian(f: GridField, rtol: float = 1e-10) -> GridField:
    """The mean-zero solution of ``Delta u = f``.

    Raises
    ------
    PreconditionError
        If ``f`` has a nonzero mean relative to its magnitude.
    """
    mean = f.mean()
    scale = max(float(np.max(np.abs(f.values))), 1e-300)
    if abs(mean) > rtol * scale and abs(mean) > 1e-300:
        raise PreconditionError(f"inverse_laplacian needs a mean-zero source, got mean {mean:.3e}")
    p = plan_for(f)
    return f.with_values(p.inverse(p.inv_symbol * p.forward(f.values)))


def gradient(u: GridField) -> tuple[GridField, GridField]:
    """Cartesian gradient components by spectral differentiation."""
    p = plan_for(u)
    c = p.forward(u.values)
    # odd derivative of the Nyquist mode is not representable; drop it
    kx, ky = p.kx.copy(), p.ky.copy()
    if u.n1 % 2 == 0:
        kx[u.n1 // 2, :] = 0.0
        ky[u.n1 // 2, :] = 0.0
    if u.n2 % 2 == 0:
        kx[:, -1] = 0.0
        ky[:, -1] = 0.0
    gx = p.inverse(1j * kx * c)
    gy = p.inverse(1j * ky * c)
    return u.with_values(gx), u.with_values(gy)


def dirichlet_energy(u: GridField) -> float:
    """``int |grad u|^2`` via Parseval."""
    p = plan_for(u)
    c = p.forward(u.values) / (u.n1 * u.n2)
    e = u.lattice.volume * np.sum(p.parseval_weight * p.symbol * np.abs(c) ** 2)
    return float(e)


def fd_dirichlet_energy(u: GridField) -> float:
    """``int |grad u|^2`` from forward differences.

    Meant for continuous, piecewise smooth fields with gradient kinks, where
    spectral differentiation would alias.  Differences along the two lattice
    directions are combined with the inverse metric; the mixed term (only
    present for skew lattices) uses cell-centred averages.
    """
    v = u.values
    ds = (np.roll(v, -1, axis=0) - v) * u.n1
    dt = (np.roll(v, -1, axis=1) - v) * u.n2
    ginv = np.linalg.inv(u.lattice.metric)
    dens = ginv[0, 0] * ds * ds + ginv[1, 1] * dt * dt
    if ginv[0, 1] != 0.0:
        ds_c = 0.5 * (ds + np.roll(ds, -1, axis=1))
        dt_c = 0.5 * (dt + np.roll(dt, -1, axis=0))
        dens = dens + 2.0 * ginv[0, 1] * ds_c * dt_c
    return float(np.sum(dens) * u.cell_area)


def integrate(u: GridField) -> float:
    """Periodic rectangle rule."""
    return float(np.sum(u.values) * u.cell_area)


def integrate_weighted(h: GridField, u: GridField) -> float:
    """``int h e^u``."""
    return float(np.sum(h.values * np.exp(u.values)) * u.cell_area)


def inner(u: GridField, v: GridField) -> float:
    return float(np.sum(u.values * v.values) * u.cell_area)


def chen_diagnostic(u: GridField, ell: int) -> float:
    """``int exp(4 pi ell u^2 / ||grad u||^2)``: the integrand of the symmetric
    Moser-Trudinger bound, normalised to unit Dirichlet energy."""
    e = dirichlet_energy(u)
    if not e > 0.0:
        raise PreconditionError("chen_diagnostic needs a field with positive Dirichlet energy")
    return float(np.sum(np.exp(4.0 * math.pi * ell * u.values**2 / e)) * u.cell_area)


def bilinear_sample(u: GridField, st: np.ndarray) -> np.ndarray:
    """Periodic bilinear interpolation at lattice coordinates ``st[..., 2]``."""
    st = np.asarray(st, dtype=float)
    x = np.mod(st[..., 0], 1.0) * u.n1
    y = np.mod(st[..., 1], 1.0) * u.n2
    i0 = np.floor(x).astype(int)
    j0 = np.floor(y).astype(int)
    fx, fy = x - i0, y - j0
    i0 %= u.n1
    j0 %= u.n2
    i1 = (i0 + 1) % u.n1
    j1 = (j0 + 1) % u.n2
    v = u.values
    return ((1 - fx) * (1 - fy) * v[i0, j0] + fx * (1 - fy) * v[i1, j0]
            + (1 - fx) * fy * v[i0, j1] + fx * fy * v[i1, j1])


# -- serialisation -----------------------------------------------------------
#
# Binary layout (little endian):
#   magic   8 bytes  b"MFTGRID\x00"
#   version uint32   (1)
#   n1, n2  uint32 x2
#   basis   float64 x4   a_x, a_y, b_x, b_y
#   values  float64 x n1*n2, row-major (index i over basis a varies slowest)

_MAGIC = b"MFTGRID\x00"
_HEADER = struct.Struct("<8sIII4d")


def grid_to_bytes(u: GridField) -> bytes:
    a, b = u.lattice.basis_a, u.lattice.basis_b
    head = _HEADER.pack(_MAGIC, 1, u.n1, u.n2, a[0], a[1], b[0], b[1])
    return head + np.ascontiguousarray(u.values, dtype="<f8").tobytes()


def grid_from_bytes(data: bytes) -> GridField:
    if len(data) < _HEADER.size:
        raise ConfigurationError("truncated grid file")
    magic, version, n1, n2, ax, ay, bx, by = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != 1:
        raise ConfigurationError("not a grid file (bad magic or version)")
    body = data[_HEADER.size:]
    if len(body) != 8 * n1 * n2:
        raise ConfigurationError("grid file size does not match its header")
    vals = np.frombuffer(body, dtype="<f8").reshape(n1, n2)
    return GridField(vals, TorusLattice((ax, ay), (bx, by)))


def write_grid_binary(u: GridField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(u))


def read_grid_binary(path) -> GridField:
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())


def grid_csv_text(u: GridField, stride: int = 1) -> str:
    """CSV with header ``x1,x2,value`` (Cartesian node coordinates)."""
    xy = u.cartesian_nodes()[::stride, ::stride]
    vals = u.values[::stride, ::stride]
    buf = io.StringIO()
    buf.write("x1,x2,value\n")
    for (x, y), v in zip(xy.reshape(-1, 2), vals.reshape(-1)):
        buf.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")
    return buf.getvalue()


def write_grid_csv(u: GridField, path, stride: int = 1) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(grid_csv_text(u, stride))


# -- trigonometric fields ------------------------------------------------------


def mode_is_invariant(m: int, n: int, G) -> bool:
    """Whether ``e^{2 pi i (m s + n t)}`` is fixed by every shift of ``G``."""
    return all((m * q1 + n * q2).denominator == 1 for q1, q2 in G.shifts)


def trig_field(constant: float, modes, n1: int, n2: int | None = None,
               lattice: TorusLattice = UNIT_SQUARE) -> GridField:
    """``constant + sum a cos(2 pi (m s + n t)) + b sin(2 pi (m s + n t))``.

    ``modes`` is an iterable of ``(m, n, a, b)`` tuples in lattice coordinates.
    """
    n2 = n1 if n2 is None else n2
    s, t = grid_points(n1, n2)
    vals = np.full(s.shape, float(constant))
    for m, n, a, b in modes:
        ph = 2.0 * np.pi * (int(m) * s + int(n) * t)
        if a:
            vals = vals + float(a) * np.cos(ph)
        if b:
            vals = vals + float(b) * np.sin(ph)
    return GridField(vals, lattice)
