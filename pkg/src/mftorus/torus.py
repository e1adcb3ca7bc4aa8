"""Flat tori, finite translation groups and orbit averaging.

Points are stored in lattice coordinates ``(s, t)`` reduced to ``[0, 1)^2``;
the Cartesian position is ``s * basis_a + t * basis_b``.  Group elements are
translations by rational lattice fractions, so on a compatible grid the group
acts by exact integer index shifts.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "TorusLattice",
    "TranslationGroup",
    "Point",
    "UNIT_SQUARE",
    "orbit",
    "geodesic_distance",
    "min_image",
    "symmetrize",
    "project_H_G",
    "is_invariant",
]


@dataclass(frozen=True)
class TorusLattice:
    """The torus R^2 / (Z a + Z b) with the flat metric."""

    basis_a: tuple[float, float] = (1.0, 0.0)
    basis_b: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        a = tuple(float(v) for v in self.basis_a)
        b = tuple(float(v) for v in self.basis_b)
        object.__setattr__(self, "basis_a", a)
        object.__setattr__(self, "basis_b", b)
        if not all(math.isfinite(v) for v in a + b):
            raise ConfigurationError("lattice basis must be finite")
        if abs(a[0] * b[1] - a[1] * b[0]) <= 1e-14:
            raise ConfigurationError("lattice basis vectors are linearly dependent")

    @property
    def matrix(self) -> np.ndarray:
        """2x2 matrix with the basis vectors as columns."""
        return np.array([[self.basis_a[0], self.basis_b[0]], [self.basis_a[1], self.basis_b[1]]])

    @property
    def volume(self) -> float:
        a, b = self.basis_a, self.basis_b
        return abs(a[0] * b[1] - a[1] * b[0])

    @property
    def metric(self) -> np.ndarray:
        """Gram matrix of the basis (metric tensor in lattice coordinates)."""
        m = self.matrix
        return m.T @ m

    def to_cartesian(self, st) -> np.ndarray:
        st = np.asarray(st, dtype=float)
        return np.tensordot(st, self.matrix.T, axes=([-1], [0]))

    def to_lattice(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.tensordot(xy, np.linalg.inv(self.matrix).T, axes=([-1], [0]))

    def shortest_vector(self) -> float:
        """Length of the shortest nonzero lattice vector."""
        m = self.matrix
        best = math.inf
        for i, j in itertools.product(range(-3, 4), repeat=2):
            if i or j:
                best = min(best, float(np.hypot(*(m @ (i, j)))))
        return best

    def injectivity_radius(self) -> float:
        return 0.5 * self.shortest_vector()

    def is_unit_square(self) -> bool:
        return self.basis_a == (1.0, 0.0) and self.basis_b == (0.0, 1.0)


UNIT_SQUARE = TorusLattice()


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**6)
    return Fraction(v)


@dataclass(frozen=True)
class TranslationGroup:
    """A finite group of translations by lattice fractions.

    ``shifts`` are exact :class:`~fractions.Fraction` pairs in lattice
    coordinates reduced to ``[0, 1)``; the first one is the identity.
    """

    shifts: tuple[tuple[Fraction, Fraction], ...] = ((Fraction(0), Fraction(0)),)

    def __post_init__(self):
        reduced = []
        for s in self.shifts:
            if len(s) != 2:
                raise ConfigurationError(f"shift {s!r} is not a 2-vector")
            reduced.append((_frac(s[0]) % 1, _frac(s[1]) % 1))
        if not reduced or reduced[0] != (0, 0):
            raise ConfigurationError("the first shift must be the zero shift (identity)")
        if len(set(reduced)) != len(reduced):
            raise ConfigurationError("duplicate shifts modulo the lattice")
        as_set = set(reduced)
        for u, v in itertools.product(reduced, repeat=2):
            w = ((u[0] + v[0]) % 1, (u[1] + v[1]) % 1)
            if w not in as_set:
                raise ConfigurationError(
                    f"shift set is not closed: {_fmt(u)} + {_fmt(v)} = {_fmt(w)} is missing"
                )
        object.__setattr__(self, "shifts", tuple(reduced))

    @classmethod
    def identity(cls) -> "TranslationGroup":
        return cls()

    @classmethod
    def generated(cls, *generators) -> "TranslationGroup":
        """Smallest translation group containing ``generators``."""
        elems = [(Fraction(0), Fraction(0))]
        seen = set(elems)
        frontier = list(elems)
        gens = [(_frac(g[0]) % 1, _frac(g[1]) % 1) for g in generators]
        while frontier:
            nxt = []
            for e in frontier:
                for g in gens:
                    w = ((e[0] + g[0]) % 1, (e[1] + g[1]) % 1)
                    if w not in seen:
                        seen.add(w)
                        elems.append(w)
                        nxt.append(w)
                        if len(elems) > 10**5:
                            raise ConfigurationError("generated group is too large")
            frontier = nxt
        return cls(tuple(elems))

    @classmethod
    def cyclic(cls, ell: int, direction: str = "a") -> "TranslationGroup":
        """``{0, a/ell, 2a/ell, ...}`` (or along ``b``)."""
        if ell < 1:
            raise ConfigurationError("group order must be positive")
        step = (Fraction(1, ell), Fraction(0)) if direction == "a" else (Fraction(0), Fraction(1, ell))
        return cls(tuple((k * step[0] % 1, k * step[1] % 1) for k in range(ell)))

    @property
    def order(self) -> int:
        return len(self.shifts)

    @property
    def ell(self) -> int:
        """Minimal orbit size; translations act freely so this is the order."""
        return self.order

    def float_shifts(self) -> np.ndarray:
        return np.array([[float(s[0]), float(s[1])] for s in self.shifts])

    def denominators(self) -> tuple[int, int]:
        d1 = math.lcm(*(s[0].denominator for s in self.shifts))
        d2 = math.lcm(*(s[1].denominator for s in self.shifts))
        return d1, d2

    def index_shifts(self, n1: int, n2: int) -> list[tuple[int, int]]:
        """Shifts as integer grid offsets; raises if the grid is incompatible."""
        out = []
        for s in self.shifts:
            k1, k2 = s[0] * n1, s[1] * n2
            if k1.denominator != 1 or k2.denominator != 1:
                raise ConfigurationError(
                    f"grid {n1}x{n2} is incompatible with shift {_fmt(s)}: "
                    "it does not map grid nodes to grid nodes"
                )
            out.append((int(k1), int(k2)))
        return out

    def describe(self) -> list[list[str]]:
        return [[str(s[0]), str(s[1])] for s in self.shifts]


def _fmt(s) -> str:
    return f"({s[0]}, {s[1]})"


@dataclass(frozen=True)
class Point:
    """A torus point in lattice coordinates, reduced to ``[0, 1)^2``."""

    coords: tuple[float, float] = field(default=(0.0, 0.0))

    def __post_init__(self):
        c = tuple(float(v) % 1.0 for v in self.coords)
        # x % 1.0 can return 1.0 for tiny negative x
        c = tuple(0.0 if v >= 1.0 else v for v in c)
        object.__setattr__(self, "coords", c)

    def __iter__(self):
        return iter(self.coords)

    def __getitem__(self, i):
        return self.coords[i]

    def shifted(self, shift) -> "Point":
        return Point((self.coords[0] + float(shift[0]), self.coords[1] + float(shift[1])))

    def as_array(self) -> np.ndarray:
        return np.array(self.coords)


def as_point(x) -> Point:
    return x if isinstance(x, Point) else Point(tuple(x))


def orbit(x, G: TranslationGroup, L: TorusLattice = UNIT_SQUARE) -> list[Point]:
    """The points ``sigma_1(x), ..., sigma_N(x)``; the first one is ``x``."""
    x = as_point(x)
    return [x.shifted(s) for s in G.shifts]


def min_image(d, L: TorusLattice = UNIT_SQUARE) -> np.ndarray:
    """Shortest Cartesian representative of lattice-coordinate displacement(s) ``d``."""
    d = np.asarray(d, dtype=float)
    d = d - np.round(d)
    best = None
    best_n2 = None
    m = L.matrix
    for i, j in itertools.product((-1, 0, 1), repeat=2):
        v = np.tensordot(d + np.array([i, j], dtype=float), m.T, axes=([-1], [0]))
        n2 = np.sum(v * v, axis=-1)
        if best is None:
            best, best_n2 = v, n2
        else:
            take = n2 < best_n2
            best = np.where(take[..., None], v, best)
            best_n2 = np.where(take, n2, best_n2)
    return best


def geodesic_distance(x, y, L: TorusLattice = UNIT_SQUARE) -> float:
    """Flat-torus distance: minimum over lattice translates."""
    d = np.asarray(tuple(as_point(y)), dtype=float) - np.asarray(tuple(as_point(x)), dtype=float)
    v = min_image(d, L)
    return float(np.hypot(v[0], v[1]))


def min_orbit_separation(x, G: TranslationGroup, L: TorusLattice = UNIT_SQUARE) -> float:
    """Minimal distance between distinct orbit points (inf for the trivial group)."""
    pts = orbit(x, G, L)
    best = math.inf
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            best = min(best, geodesic_distance(pts[i], pts[j], L))
    return best


def _orbit_stack(values: np.ndarray, G: TranslationGroup) -> np.ndarray:
    n1, n2 = values.shape
    offs = G.index_shifts(n1, n2)
    # u(x + t) sampled at x is a roll by -t
    return np.stack([np.roll(values, (-k1, -k2), axis=(0, 1)) for k1, k2 in offs])


def symmetrize_values(values: np.ndarray, G: TranslationGroup) -> np.ndarray:
    """Orbit average of a sampled array; exact invariance and idempotence.

    Orbit samples are sorted before summation so every node of an orbit adds
    the same numbers in the same order, and an already constant orbit is
    returned unchanged.
    """
    if G.order == 1:
        G.index_shifts(*values.shape)
        return np.array(values, dtype=float, copy=True)
    stack = np.sort(_orbit_stack(np.asarray(values, dtype=float), G), axis=0)
    lo = stack[0]
    avg = lo + np.sum(stack - lo, axis=0) / G.order
    return np.where(stack[-1] == lo, lo, avg)


def symmetrize(u, G: TranslationGroup):
    """Orthogonal projection onto G-invariant fields (orbit averaging)."""
    return u.with_values(symmetrize_values(u.values, G))


def project_H_G(u, G: TranslationGroup):
    """Projection onto invariant mean-zero fields."""
    v = symmetrize_values(u.values, G)
    return u.with_values(v - v.mean())


def is_invariant(u, G: TranslationGroup, atol: float = 0.0) -> bool:
    stack = _orbit_stack(u.values, G)
    return bool(np.max(np.abs(stack - stack[0])) <= atol)


def grid_points(n1: int, n2: int) -> tuple[np.ndarray, np.ndarray]:
    """Lattice coordinates of the nodes of an ``n1 x n2`` grid (ij indexing)."""
    s = np.arange(n1) / n1
    t = np.arange(n2) / n2
    return np.meshgrid(s, t, indexing="ij")


def check_grid(n1: int, n2: int, G: TranslationGroup | None = None) -> None:
    if n1 <= 0 or n2 <= 0 or n1 % 2 or n2 % 2:
        raise ConfigurationError(f"grid dimensions must be even positive integers, got {n1}x{n2}")
    if G is not None:
        G.index_shifts(n1, n2)


def point_from_index(i: int, j: int, n1: int, n2: int) -> Point:
    return Point((i / n1, j / n2))


def parse_shifts(items: Iterable[Sequence]) -> list[tuple[Fraction, Fraction]]:
    """Parse shifts given as numbers or strings like ``"1/2"``."""
    out = []
    for it in items:
        if len(it) != 2:
            raise ConfigurationError(f"shift {it!r} must have two components")
        out.append((Fraction(str(it[0])), Fraction(str(it[1]))))
    return out
