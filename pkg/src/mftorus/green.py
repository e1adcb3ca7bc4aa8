"""Green functions of flat tori and their symmetrised multi-pole sums.

Normalisation: ``Delta_y G(x, y) = 8 pi delta_x - 8 pi / V`` with zero mean, so
``G(x, y) = -4 log r + A + O(r^2)`` near the diagonal.

On a torus with basis ``a, b`` write a displacement as ``s a + t b`` and
``tau = b / a`` (as complex numbers, oriented so ``Im tau > 0``).  The Green
function is the theta-product series

    G = 4 pi T (t^2 - t + 1/6)
        - 2 log|1 - e^{2 pi i w}|^2
        - 2 sum_{n>=1} log|1 - e^{2 pi i (n tau + w)}|^2 |1 - e^{2 pi i (n tau - w)}|^2

with ``w = s + t tau`` and ``T = Im tau``.  On the unit square torus this is
the classical ``lambda`` function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as sint

from .errors import ConfigurationError, PreconditionError, SingularityError
from .spectral import GridField
from .torus import (
    UNIT_SQUARE,
    Point,
    TorusLattice,
    TranslationGroup,
    as_point,
    grid_points,
    min_image,
    min_orbit_separation,
    orbit,
)

__all__ = [
    "LambdaSeries",
    "lambda_eval",
    "lattice_green",
    "robin_constant",
    "robin_constant_AP",
    "green_pair",
    "SymmetrizedGreen",
    "symmetrized_green",
    "tilde_robin",
    "GreenExpansion",
    "fit_expansion",
    "delta_radius",
    "singular_integral",
    "approx1_chain",
    "approx2_chain",
    "half_shift_constants",
]

N_MAX_DEFAULT = 24


def _tau(L: TorusLattice) -> complex:
    a = complex(*L.basis_a)
    b = complex(*L.basis_b)
    tau = b / a
    if tau.imag < 0:
        # mirror image: an isometry, and it keeps (s, t) coordinates
        tau = tau.conjugate()
    return tau


def _n_terms(T: float, n_max: int) -> int:
    # slowest decaying term is exp(-2 pi T (n - 1/2)); push it below 1e-20
    need = math.ceil(0.5 + 46.06 / (2 * math.pi * T)) + 1
    return max(n_max, need)


def _log_factor(rho, theta):
    """``log((1 - rho)^2 + 4 rho sin^2(theta/2))`` accurate for small ``rho``."""
    return np.log1p(rho * (rho - 2.0 * np.cos(theta)))


def lattice_green(s, t, L: TorusLattice = UNIT_SQUARE, n_max: int = N_MAX_DEFAULT):
    """``G(0, s a + t b)`` for lattice-coordinate displacements ``(s, t)``.

    Arguments are reduced by periodicity and ``G(-y) = G(y)`` to
    ``|s| <= 1/2``, ``0 <= t <= 1/2`` so that every exponential decays.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    s, t = np.broadcast_arrays(s - np.round(s), t - np.round(t))
    flip = t < 0
    s = np.where(flip, -s, s)
    t = np.where(flip, -t, t)
    s = s - np.round(s)
    if np.any((s == 0.0) & (t == 0.0)):
        raise SingularityError("Green function evaluated at its singular point (a lattice point)")
    tau = _tau(L)
    T, Rt = tau.imag, tau.real
    rew = s + t * Rt
    out = 4.0 * math.pi * T * (t * t - t + 1.0 / 6.0)
    e1 = np.exp(-2.0 * math.pi * t * T)
    first = np.expm1(-2.0 * math.pi * t * T) ** 2 + 4.0 * e1 * np.sin(math.pi * rew) ** 2
    out = out - 2.0 * np.log(first)
    for n in range(1, _n_terms(T, n_max) + 1):
        rp = np.exp(-2.0 * math.pi * T * (n + t))
        rm = np.exp(-2.0 * math.pi * T * (n - t))
        out = out - 2.0 * (_log_factor(rp, 2 * math.pi * (n * Rt + rew))
                           + _log_factor(rm, 2 * math.pi * (n * Rt - rew)))
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class LambdaSeries:
    """The unit-square Green function ``lambda`` truncated at ``n_max`` terms."""

    n_max: int = N_MAX_DEFAULT

    def __call__(self, x1, x2):
        return lattice_green(x1, x2, UNIT_SQUARE, self.n_max)

    def tail_bound(self) -> float:
        """Bound on the dropped terms for reduced arguments ``|x2| <= 1/2``."""
        q = math.exp(-2.0 * math.pi * (self.n_max + 0.5))
        # |log(1 + z)| <= 2|z| for |z| <= 1/2 and |z| <= 3 rho; geometric tail
        return 4.0 * 2.0 * 3.0 * q / (1.0 - math.exp(-2.0 * math.pi))


def lambda_eval(x, n_max: int = N_MAX_DEFAULT):
    """``lambda(x)``: Green function of the unit square torus with pole at 0.

    ``x`` is a 2-vector (or array with a trailing axis of length 2).
    """
    x = np.asarray(x, dtype=float)
    return lattice_green(x[..., 0], x[..., 1], UNIT_SQUARE, n_max)


def robin_constant(L: TorusLattice = UNIT_SQUARE, n_max: int = N_MAX_DEFAULT) -> float:
    """``A = lim_{r->0} G(x, y) + 4 log r`` (independent of ``x``)."""
    tau = _tau(L)
    T = tau.imag
    acc = 0.0
    for n in range(1, _n_terms(T, n_max) + 1):
        z = np.exp(2j * math.pi * n * tau)
        acc += math.log(abs(1.0 - z))
    alen = math.hypot(*L.basis_a)
    return -4.0 * math.log(2.0 * math.pi) + 4.0 * math.log(alen) + 2.0 * math.pi * T / 3.0 - 8.0 * acc


def robin_constant_AP() -> float:
    """``A_P = -4 log(2 pi) + 2 pi / 3 - 8 sum log(1 - e^{-2 pi n})`` (unit square)."""
    return robin_constant(UNIT_SQUARE)


def green_pair(P, Q, L: TorusLattice = UNIT_SQUARE) -> float:
    """``G(P, Q)``; symmetric and translation invariant."""
    P, Q = as_point(P), as_point(Q)
    d = np.array(Q.coords) - np.array(P.coords)
    return float(lattice_green(d[0], d[1], L))


def tilde_robin(x, G: TranslationGroup, L: TorusLattice = UNIT_SQUARE) -> float:
    """``A~_x = A + sum_{k>=2} G(x, sigma_k x)``, the finite part of the orbit sum at ``x``."""
    pts = orbit(x, G, L)
    corr = math.fsum(green_pair(pts[0], q, L) for q in pts[1:])
    return robin_constant(L) + corr


class SymmetrizedGreen:
    """``G~_x(y) = sum_i G(sigma_i x, y)``, poles of weight ``8 pi`` on the orbit of ``x``."""

    def __init__(self, x, G: TranslationGroup, L: TorusLattice = UNIT_SQUARE):
        self.x = as_point(x)
        self.group = G
        self.lattice = L
        self.poles = orbit(self.x, G, L)

    @property
    def ell(self) -> int:
        return self.group.order

    def __call__(self, s, t):
        """Evaluate at lattice coordinates (arrays allowed)."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        terms = [lattice_green(s - p[0], t - p[1], self.lattice) for p in self.poles]
        if len(terms) == 1:
            return terms[0]
        # sorted summation keeps the value identical on every orbit point
        return np.sum(np.sort(np.stack(np.broadcast_arrays(*terms)), axis=0), axis=0)

    def at(self, y) -> float:
        y = as_point(y)
        return float(self(y[0], y[1]))

    def robin(self) -> float:
        return tilde_robin(self.x, self.group, self.lattice)

    def sample(self, n1: int, n2: int | None = None) -> GridField:
        """Grid sampling; fails if a pole sits on a node."""
        n2 = n1 if n2 is None else n2
        s, t = grid_points(n1, n2)
        return GridField(self(s, t), self.lattice)

    def mean(self, n: int = 512) -> float:
        """``(1/V) int G~`` by singularity-aware quadrature."""
        val = singular_integral(self, self.poles, [self.robin()] * len(self.poles),
                                n, n, self.lattice)
        return val / self.lattice.volume


def symmetrized_green(x, G: TranslationGroup, L: TorusLattice = UNIT_SQUARE) -> SymmetrizedGreen:
    return SymmetrizedGreen(x, G, L)


def _cutoff(x):
    """C-infinity step: 1 for x <= 0, 0 for x >= 1, flat at both ends."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f1 = np.where(x < 1.0, np.exp(-1.0 / np.maximum(1.0 - x, 1e-300)), 0.0)
        f0 = np.where(x > 0.0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)
    return f1 / (f1 + f0)


def singular_integral(f: Callable, poles: Sequence, limits: Sequence[float], n1: int, n2: int,
                      L: TorusLattice = UNIT_SQUARE, weight: float = 4.0,
                      radius: float | None = None) -> float:
    """``int f`` for ``f`` with ``-weight * log r`` singularities at ``poles``.

    The singular part ``-weight * chi(r) log r`` (``chi`` a smooth radial cutoff
    of radius ``radius``) is integrated in closed radial form and the smooth
    remainder by the rectangle rule, which is spectrally accurate for it.
    ``limits[i]`` is ``lim f + weight log r`` at pole ``i``, used at a node
    that coincides with the pole.
    """
    if radius is None:
        radius = 0.4 * L.shortest_vector()
    if not 0 < radius < 0.5 * L.shortest_vector():
        raise ConfigurationError("cutoff radius must be below the injectivity radius")
    s, t = grid_points(n1, n2)
    st = np.stack([s, t], axis=-1)
    poles = [as_point(p) for p in poles]
    dists = []
    for p in poles:
        v = min_image(st - np.array(p.coords), L)
        dists.append(np.hypot(v[..., 0], v[..., 1]))
    on_pole = np.zeros(s.shape, dtype=bool)
    for r in dists:
        on_pole |= r == 0.0
    vals = np.empty(s.shape)
    vals[~on_pole] = f(s[~on_pole], t[~on_pole])
    for r, lim in zip(dists, limits):
        hit = r == 0.0
        vals[hit] = lim
    for r in dists:
        ok = r > 0.0
        vals[ok] += weight * _cutoff(r[ok] / radius) * np.log(r[ok])
    # at a pole node the other poles' cutoff terms still apply (handled above)
    smooth = np.sum(vals) * L.volume / (n1 * n2)
    radial, _ = sint.quad(lambda r: r * math.log(r) * float(_cutoff(r / radius)), 0.0, radius,
                          epsabs=1e-15, epsrel=1e-13, limit=200)
    return float(smooth - weight * 2.0 * math.pi * radial * len(poles))


def delta_radius(x, G: TranslationGroup, L: TorusLattice = UNIT_SQUARE) -> float:
    """``delta = 1/4 min(inj, min_{i<j} d(sigma_i x, sigma_j x))``."""
    return 0.25 * min(L.injectivity_radius(), min_orbit_separation(x, G, L))


@dataclass(frozen=True)
class GreenExpansion:
    """Local data of ``G~`` at ``center``:
    ``G~(center + y) = -4 log|y| + A_tilde + b1 y1 + b2 y2 + c1 y1^2 + 2 c2 y1 y2 + c3 y2^2 + O(|y|^3)``
    in Cartesian coordinates aligned with the lattice frame."""

    center: Point
    A_tilde: float
    b1: float
    b2: float
    c1: float
    c2: float
    c3: float
    fit_residual: float
    annulus: tuple[float, float]
    usable: bool

    def to_dict(self) -> dict:
        return {
            "center": list(self.center.coords),
            "A_tilde": self.A_tilde,
            "b1": self.b1, "b2": self.b2,
            "c1": self.c1, "c2": self.c2, "c3": self.c3,
            "fit_residual": self.fit_residual,
            "annulus": list(self.annulus),
            "usable": self.usable,
        }


def fit_expansion(x, G: TranslationGroup, annulus: tuple[float, float] | None = None,
                  L: TorusLattice = UNIT_SQUARE, n_radii: int = 24, n_angles: int = 64,
                  fit_tol: float = 5e-3) -> GreenExpansion:
    """Least-squares fit of ``G~_x(x + y) + 4 log|y|`` by a quadratic on an annulus.

    Raises
    ------
    ConfigurationError
        If the annulus does not satisfy ``0 < r_in < r_out < delta``.
    """
    x = as_point(x)
    delta = delta_radius(x, G, L)
    if annulus is None:
        annulus = (0.1 * delta, 0.6 * delta)
    r_in, r_out = map(float, annulus)
    if not (0.0 < r_in < r_out < delta):
        raise ConfigurationError(
            f"annulus ({r_in}, {r_out}) must satisfy 0 < r_in < r_out < delta = {delta:.6g}")
    gt = SymmetrizedGreen(x, G, L)
    r = np.linspace(r_in, r_out, n_radii)
    th = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    R, TH = np.meshgrid(r, th, indexing="ij")
    y1, y2 = (R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()
    st = L.to_lattice(np.stack([y1, y2], axis=-1))
    vals = gt(x[0] + st[:, 0], x[1] + st[:, 1]) + 4.0 * np.log(np.hypot(y1, y2))
    A = np.stack([np.ones_like(y1), y1, y2, y1 * y1, y1 * y2, y2 * y2], axis=1)
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - vals) ** 2)))
    return GreenExpansion(
        center=x, A_tilde=float(coef[0]), b1=float(coef[1]), b2=float(coef[2]),
        c1=float(coef[3]), c2=float(0.5 * coef[4]), c3=float(coef[5]),
        fit_residual=resid, annulus=(r_in, r_out), usable=resid < fit_tol,
    )


# -- closed-form bounds on the unit square torus --

def approx1_chain() -> float:
    """Upper bound for ``A_P + 2 + 2 log pi`` from ``log(1+t) >= t/(t+1)``:
    ``2 - 4 log 2 - 2 log pi + 2 pi/3 + 8 e^{-2pi} / (1 - e^{-2pi})^2``."""
    q = math.exp(-2 * math.pi)
    return 2 - 4 * math.log(2) - 2 * math.log(math.pi) + 2 * math.pi / 3 + 8 * q / (1 - q) ** 2


def approx2_chain() -> float:
    """Upper bound for ``lambda(1/2, 0) + 2 log 2``:
    ``2 pi/3 - 2 log 2 - 8 e^{-2pi} / (1 - e^{-4pi})``."""
    q = math.exp(-2 * math.pi)
    return 2 * math.pi / 3 - 2 * math.log(2) - 8 * q / (1 - q * q)


BOUND_APPROX1_PRINTED = -0.9752
BOUND_APPROX2_PRINTED = 0.6932


def half_shift_constants() -> dict:
    """Unit square torus with the half-shift group ``{0, (1/2, 0)}``."""
    A_P = robin_constant_AP()
    lam_half = float(lambda_eval((0.5, 0.0)))
    A_tilde = A_P + lam_half
    threshold = -2 - 2 * math.log(math.pi) - 2 * math.log(2)
    return {
        "A_P": A_P,
        "lambda_half": lam_half,
        "A_tilde": A_tilde,
        "maxim_threshold": threshold,
        "maxim_margin": threshold - A_tilde,
        "AP_plus_2_plus_2logpi": A_P + 2 + 2 * math.log(math.pi),
        "lambda_half_plus_2log2": lam_half + 2 * math.log(2),
        "approx1_chain": approx1_chain(),
        "approx2_chain": approx2_chain(),
        "bound_approx1": BOUND_APPROX1_PRINTED,
        "bound_approx2": BOUND_APPROX2_PRINTED,
    }
