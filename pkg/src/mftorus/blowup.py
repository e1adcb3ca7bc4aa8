"""Blow-up diagnostics: the entire bubble, rescaled profiles and concentration masses."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sint

from .errors import ConfigurationError, ResolutionError
from .spectral import GridField, bilinear_sample
from .torus import Point, min_image, min_orbit_separation, orbit

__all__ = [
    "bubble_profile",
    "bubble_radial",
    "bubble_mass",
    "bubble_mass_quadrature",
    "bubble_fd_residual",
    "r_epsilon",
    "RadialProfile",
    "rescaled_profile",
    "mass_fractions",
    "rescaled_equation_residual",
    "BubbleDiagnostics",
    "diagnose",
]

BUBBLE_TOTAL_MASS = 8.0 * math.pi


def bubble_radial(r):
    """``-2 log(1 + r^2/8)``."""
    r = np.asarray(r, dtype=float)
    return -2.0 * np.log1p(r * r / 8.0)


def bubble_profile(y):
    """``phi(y) = -2 log(1 + |y|^2 / 8)`` for ``y`` of shape ``(..., 2)``."""
    y = np.asarray(y, dtype=float)
    return -2.0 * np.log1p(np.sum(y * y, axis=-1) / 8.0)


def bubble_mass(R: float) -> float:
    """``int_{B_R} e^phi = 8 pi R^2 / (R^2 + 8)`` (closed form)."""
    if math.isinf(R):
        return BUBBLE_TOTAL_MASS
    return 8.0 * math.pi * R * R / (R * R + 8.0)


def bubble_mass_quadrature(R: float) -> float:
    """Same mass by adaptive radial quadrature (``R = inf`` allowed)."""
    val, _ = sint.quad(lambda r: 2.0 * math.pi * r / (1.0 + r * r / 8.0) ** 2, 0.0, R,
                       epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def _bubble_step(y1, y2, d1, d2):
    """``phi(y + d) - phi(y)`` without cancellation."""
    q = 8.0 + y1 * y1 + y2 * y2
    return -2.0 * np.log1p((2.0 * (y1 * d1 + y2 * d2) + d1 * d1 + d2 * d2) / q)


def bubble_fd_residual(y, step: float = 1e-4):
    """Five-point ``-Delta phi - e^phi`` at points ``y[..., 2]``.

    Neighbour differences are formed analytically, so the only error left is
    the ``O(step^2)`` truncation.
    """
    y = np.asarray(y, dtype=float)
    y1, y2 = y[..., 0], y[..., 1]
    lap = (_bubble_step(y1, y2, step, 0.0) + _bubble_step(y1, y2, -step, 0.0)
           + _bubble_step(y1, y2, 0.0, step) + _bubble_step(y1, y2, 0.0, -step)) / step ** 2
    return -lap - np.exp(bubble_profile(y))


# -- state level diagnostics ----------------------------------------------------


def _h_at(spec, x: Point) -> float:
    return float(bilinear_sample(spec.h, np.array(x.coords)))


def r_epsilon(state, spec) -> float:
    """``r_eps = sqrt(lambda_eps / (rho h(x_eps))) e^{-c_eps/2}``.

    Evaluated as ``sqrt(int h e^{u - c_eps} / (rho h(x_eps)))`` from the state's
    field, so adding a constant to ``u`` leaves it unchanged.
    """
    u = state.u
    c = u.max()
    mass = float(np.sum(spec.h.values * np.exp(u.values - c))) * u.cell_area
    if not mass > 0:
        raise ConfigurationError("lambda_eps must be positive")
    return math.sqrt(mass / (spec.rho * _h_at(spec, state.x_eps)))


def _ball_guard(state, spec, radius: float, what: str) -> None:
    sep = min_orbit_separation(state.x_eps, spec.group, spec.lattice)
    limit = min(0.5 * sep, spec.lattice.injectivity_radius())
    if radius >= limit:
        raise ConfigurationError(
            f"{what}: radius {radius:.4g} is not below half the orbit separation "
            f"({limit:.4g}); balls would overlap")
    h = state.u.spacing
    if radius < 4.0 * h:
        raise ResolutionError(
            f"{what}: radius {radius:.4g} spans fewer than 4 grid cells (spacing {h:.4g})")


@dataclass
class RadialProfile:
    """Angularly resolved samples of ``phi_eps`` on ``|y| <= R``.

    ``phi_eps`` holds the angular mean per radius; ``sup_error`` is the max
    over every sampled ``(r, theta)`` of ``|phi_eps - phi|``.
    """

    radii: np.ndarray
    phi_eps: np.ndarray
    phi: np.ndarray
    sup_error: float
    r_eps: float
    R: float

    def rows(self):
        for r, a, b in zip(self.radii, self.phi_eps, self.phi):
            yield float(r), float(a), float(b), float(a - b)

    def is_monotone(self, tol: float = 0.05) -> bool:
        return bool(np.all(np.diff(self.phi_eps) <= tol))


def rescaled_profile(state, spec, R: float = 4.0, n_radii: int = 65,
                     n_angles: int = 32) -> RadialProfile:
    """Sample ``phi_eps(y) = u(x_eps + r_eps y) - c_eps`` by bilinear interpolation."""
    r = r_epsilon(state, spec)
    _ball_guard(state, spec, R * r, "rescaled_profile")
    radii = np.linspace(0.0, R, n_radii)
    th = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    RR, TH = np.meshgrid(radii, th, indexing="ij")
    y = np.stack([RR * np.cos(TH), RR * np.sin(TH)], axis=-1)
    st = np.asarray(state.x_eps.coords) + spec.lattice.to_lattice(r * y)
    vals = bilinear_sample(state.u, st) - state.u.max()
    exact = bubble_radial(RR)
    return RadialProfile(
        radii=radii,
        phi_eps=vals.mean(axis=1),
        phi=bubble_radial(radii),
        sup_error=float(np.max(np.abs(vals - exact))),
        r_eps=r,
        R=R,
    )


def _disk_cell_area(x0, x1, y0, y1, rad):
    """Area of ``[x0,x1] x [y0,y1]`` intersected with the disk of radius ``rad`` at 0."""
    a, b = max(x0, -rad), min(x1, rad)
    if a >= b:
        return 0.0

    def chord(x):
        s = math.sqrt(max(rad * rad - x * x, 0.0))
        return max(0.0, min(y1, s) - max(y0, -s))

    pts = []
    for yy in (y0, y1):
        if abs(yy) < rad:
            xx = math.sqrt(rad * rad - yy * yy)
            pts += [p for p in (-xx, xx) if a < p < b]
    val, _ = sint.quad(chord, a, b, points=sorted(pts) or None, epsabs=1e-16, epsrel=1e-13,
                       limit=100)
    return val


def _coverage_weights(frac: np.ndarray, rad: float, spec, grid: GridField):
    """Cell-coverage weights of a disk around a point at fractional offset ``frac``
    from its base node, on a stencil of node offsets.

    Cells are the node-centred rectangles of a rectangular lattice; other
    lattices fall back to 16x16 supersampling of each cell.
    """
    L = spec.lattice
    n1, n2 = grid.shape
    m = L.matrix
    ext = int(math.ceil(rad / grid.spacing)) + 2
    di, dj = np.meshgrid(np.arange(-ext, ext + 1), np.arange(-ext, ext + 1), indexing="ij")
    w = np.zeros(di.shape)
    rect = abs(m[0, 1]) < 1e-15 and abs(m[1, 0]) < 1e-15
    if rect:
        hx, hy = m[0, 0] / n1, m[1, 1] / n2
        cx = (di - frac[0]) * hx
        cy = (dj - frac[1]) * hy
        for idx in np.ndindex(di.shape):
            x, y = cx[idx], cy[idx]
            near = math.hypot(abs(x) - 0.5 * hx if abs(x) > 0.5 * hx else 0.0,
                              abs(y) - 0.5 * hy if abs(y) > 0.5 * hy else 0.0)
            if near >= rad:
                continue
            far = math.hypot(abs(x) + 0.5 * hx, abs(y) + 0.5 * hy)
            if far <= rad:
                w[idx] = hx * hy
            else:
                w[idx] = _disk_cell_area(x - 0.5 * hx, x + 0.5 * hx, y - 0.5 * hy, y + 0.5 * hy, rad)
    else:
        k = 16
        sub = (np.arange(k) + 0.5) / k - 0.5
        a, b = np.meshgrid(sub, sub, indexing="ij")
        for idx in np.ndindex(di.shape):
            st = np.stack([(di[idx] - frac[0] + a) / n1, (dj[idx] - frac[1] + b) / n2], axis=-1)
            xy = st @ m.T
            w[idx] = np.mean(np.hypot(xy[..., 0], xy[..., 1]) < rad) * grid.cell_area
    return di, dj, w


def mass_fractions(state, spec, R: float = 20.0) -> list[float]:
    """``lambda^{-1} int_{B_{R r_eps}(sigma_i x_eps)} h e^u`` for each orbit point.

    Every orbit ball uses the same coverage stencil shifted by whole grid
    indices, so invariant fields give identical fractions.
    """
    u = state.u
    r = r_epsilon(state, spec)
    rad = R * r
    _ball_guard(state, spec, rad, "mass_fractions")
    n1, n2 = u.shape
    x = np.asarray(state.x_eps.coords)
    base = np.floor(x * np.array([n1, n2]) + 1e-9).astype(int)
    frac = x * np.array([n1, n2]) - base
    di, dj, w = _coverage_weights(frac, rad, spec, u)
    c = u.max()
    dens = spec.h.values * np.exp(u.values - c)
    total = float(np.sum(dens)) * u.cell_area
    out = []
    for k1, k2 in spec.group.index_shifts(n1, n2):
        ii = (base[0] + k1 + di) % n1
        jj = (base[1] + k2 + dj) % n2
        out.append(float(np.sum(w * dens[ii, jj])) / total)
    return out


def rescaled_equation_residual(state, spec, R: float = 4.0) -> float:
    """Sup over grid nodes with ``|y| <= R`` of
    ``|Delta phi_eps - (h/h(x_eps)) e^{phi_eps} + rho r_eps^2 / V|``.

    ``Delta`` is the positive flat Laplacian in ``y``, discretised by the
    five-point stencil (rectangular lattices only).
    """
    L = spec.lattice
    m = L.matrix
    if abs(m[0, 1]) > 1e-15 or abs(m[1, 0]) > 1e-15:
        raise ConfigurationError("rescaled_equation_residual needs a rectangular lattice")
    u = state.u
    r = r_epsilon(state, spec)
    _ball_guard(state, spec, R * r, "rescaled_equation_residual")
    n1, n2 = u.shape
    hx, hy = m[0, 0] / n1, m[1, 1] / n2
    v = u.values
    lap = -((np.roll(v, -1, 0) - 2 * v + np.roll(v, 1, 0)) / hx ** 2
            + (np.roll(v, -1, 1) - 2 * v + np.roll(v, 1, 1)) / hy ** 2)
    s, t = np.meshgrid(np.arange(n1) / n1, np.arange(n2) / n2, indexing="ij")
    d = min_image(np.stack([s, t], axis=-1) - np.asarray(state.x_eps.coords), L)
    mask = np.hypot(d[..., 0], d[..., 1]) <= R * r
    hx0 = _h_at(spec, state.x_eps)
    res = (r * r * lap - spec.h.values / hx0 * np.exp(v - u.max())
           + spec.rho * r * r / L.volume)
    return float(np.max(np.abs(res[mask])))


@dataclass
class BubbleDiagnostics:
    r_eps: float
    profile_samples: RadialProfile
    profile_error: float
    mass_fractions: list = field(default_factory=list)
    R_used: float = 20.0
    lemma42_ratio: float = float("nan")
    fraction_sum: float = float("nan")

    def limit_sum(self, ell: int) -> float:
        """Mass the fractions would carry in the limit if each orbit point had ``1/ell``."""
        return len(self.mass_fractions) / ell

    def to_dict(self) -> dict:
        return {
            "r_eps": self.r_eps,
            "profile_error": self.profile_error,
            "mass_fractions": list(self.mass_fractions),
            "fraction_sum": self.fraction_sum,
            "R_used": self.R_used,
            "profile_R": self.profile_samples.R,
            "lemma42_ratio": self.lemma42_ratio,
        }


def diagnose(state, spec, R: float = 20.0, profile_R: float = 4.0) -> BubbleDiagnostics:
    """Profile on ``|y| <= profile_R`` and mass fractions on ``B_{R r_eps}``."""
    prof = rescaled_profile(state, spec, profile_R)
    fr = mass_fractions(state, spec, R)
    r = prof.r_eps
    return BubbleDiagnostics(
        r_eps=r,
        profile_samples=prof,
        profile_error=prof.sup_error,
        mass_fractions=fr,
        R_used=R,
        lemma42_ratio=r * r * math.exp(0.5 * state.u.max()),
        fraction_sum=float(sum(fr)),
    )


def orbit_points(state, spec) -> list[Point]:
    return orbit(state.x_eps, spec.group, spec.lattice)
