"""Sufficient conditions for solvability at the critical parameter ``rho = 8 pi ell``
and the glued bubble/Green test functions behind them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, PreconditionError, ResolutionError
from .green import SymmetrizedGreen, delta_radius, fit_expansion, tilde_robin
from .spectral import GridField, bilinear_sample, fd_dirichlet_energy, integrate, trig_field
from .torus import (
    Point,
    TranslationGroup,
    as_point,
    grid_points,
    min_image,
    orbit,
    point_from_index,
    symmetrize,
)

__all__ = [
    "CertificateReport",
    "HExpansion",
    "robin_profile",
    "maximizer",
    "lower_bound",
    "thm2_certificate",
    "thm3_certificate",
    "fit_h_expansion",
    "r_rule",
    "cap_constant",
    "cutoff_eta",
    "build_test_function",
    "test_energy_numeric",
    "test_energy_asymptotic",
    "c_star",
    "perturbation_study",
]


def robin_profile(h: GridField, G: TranslationGroup, n_check: int = 4, tol: float = 1e-10) -> float:
    """``A~_x`` for translation groups, checked to be independent of ``x``
    on an ``n_check x n_check`` set of sample points."""
    L = h.lattice
    vals = []
    for i in range(n_check):
        for j in range(n_check):
            x = Point(((0.1 + 0.23 * i) % 1.0, (0.17 + 0.31 * j) % 1.0))
            vals.append(tilde_robin(x, G, L))
    spread = max(vals) - min(vals)
    if spread > tol:
        raise PreconditionError(f"A~ varies by {spread:.3e} over the torus")
    return vals[0]


def maximizer(h: GridField, G: TranslationGroup, A_tilde: float | None = None) -> tuple[Point, float]:
    """Grid maximiser of ``2 log(pi ell h) + A~`` and the maximum (smallest row-major index)."""
    A = robin_profile(h, G) if A_tilde is None else A_tilde
    vals = 2.0 * np.log(math.pi * G.order * h.values) + A
    k = int(np.argmax(vals))
    i, j = divmod(k, h.n2)
    return point_from_index(i, j, h.n1, h.n2), float(vals[i, j])


def _check_h(h: GridField, G: TranslationGroup) -> None:
    if not h.min() > 0:
        raise PreconditionError("h must be positive")
    hs = symmetrize(h, G)
    if np.max(np.abs(hs.values - h.values)) > 1e-12 * np.max(np.abs(h.values)):
        raise PreconditionError("h is not G-invariant")


def lower_bound(h: GridField, G: TranslationGroup, A_tilde: float | None = None) -> float:
    """``-4 pi ell max_x (2 log(pi ell h(x)) + A~_x) - 8 pi ell``."""
    _check_h(h, G)
    ell = G.order
    _, m = maximizer(h, G, A_tilde)
    return -4.0 * math.pi * ell * m - 8.0 * math.pi * ell


@dataclass
class CertificateReport:
    lower_bound_value: float
    cond_lhs: float
    cond_rhs: float
    cond_holds: bool
    hy2_value: float | None = None
    hy2_holds: bool | None = None
    inputs: dict = field(default_factory=dict)

    @property
    def cond_margin(self) -> float:
        return self.cond_lhs - self.cond_rhs

    def to_dict(self) -> dict:
        return {
            "lower_bound_value": self.lower_bound_value,
            "cond_lhs": self.cond_lhs,
            "cond_rhs": self.cond_rhs,
            "cond_margin": self.cond_margin,
            "cond_holds": self.cond_holds,
            "hy2_value": self.hy2_value,
            "hy2_holds": self.hy2_holds,
            "inputs": self.inputs,
        }


def _base_inputs(h: GridField, G: TranslationGroup, A: float, p: Point) -> dict:
    return {
        "ell": G.order,
        "volume": h.lattice.volume,
        "K": 0.0,
        "h": {"min": h.min(), "max": h.max(), "mean": h.mean(), "grid": list(h.shape)},
        "A_tilde": A,
        "p": list(p.coords),
        "frame": "lattice (Cartesian axes of the basis)",
    }


def thm2_certificate(h: GridField, G: TranslationGroup, A_tilde: float | None = None) -> CertificateReport:
    """``log int h > 1 + 1/2 max_x (2 log(pi ell h(x)) + A~_x)``.

    ``A_tilde`` overrides the computed Robin constant (diagnostics only).
    """
    _check_h(h, G)
    A = robin_profile(h, G) if A_tilde is None else A_tilde
    p, m = maximizer(h, G, A)
    lhs = math.log(integrate(h))
    rhs = 1.0 + 0.5 * m
    ell = G.order
    return CertificateReport(
        lower_bound_value=-4.0 * math.pi * ell * m - 8.0 * math.pi * ell,
        cond_lhs=lhs,
        cond_rhs=rhs,
        cond_holds=bool(lhs > rhs),
        inputs=_base_inputs(h, G, A, p),
    )


@dataclass(frozen=True)
class HExpansion:
    """``h(p + y) - h(p) = k1 y1 + k2 y2 + k3 y1^2 + 2 k4 y1 y2 + k5 y2^2 + O(|y|^3)``."""

    h_p: float
    k1: float
    k2: float
    k3: float
    k4: float
    k5: float
    fit_residual: float

    @property
    def laplacian(self) -> float:
        """``Delta h(p) = -2 (k3 + k5)`` for the nonnegative Laplacian."""
        return -2.0 * (self.k3 + self.k5)


def fit_h_expansion(h: GridField, p, cells: int = 5) -> HExpansion:
    """Least-squares quartic fit of ``h`` on the grid nodes within ``cells`` spacings of ``p``.

    The cubic and quartic terms absorb the ``O(|y|^3)`` remainder; only the linear and
    quadratic coefficients are reported.  A constant field returns zeros.
    """
    p = as_point(p)
    h_p = float(bilinear_sample(h, np.array(p.coords)))
    if h.max() == h.min():
        return HExpansion(h_p, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    L = h.lattice
    s, t = grid_points(h.n1, h.n2)
    d = min_image(np.stack([s, t], axis=-1) - np.array(p.coords), L)
    r = np.hypot(d[..., 0], d[..., 1])
    mask = r <= cells * h.spacing * 1.0000001
    y1, y2 = d[mask][:, 0], d[mask][:, 1]
    v = h.values[mask] - h_p
    sc = cells * h.spacing
    z1, z2 = y1 / sc, y2 / sc
    A = np.stack([np.ones_like(z1), z1, z2, z1 * z1, z1 * z2, z2 * z2,
                  z1 ** 3, z1 * z1 * z2, z1 * z2 * z2, z2 ** 3,
                  z1 ** 4, z1 ** 3 * z2, z1 * z1 * z2 * z2, z1 * z2 ** 3, z2 ** 4], axis=1)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - v) ** 2)))
    return HExpansion(
        h_p=h_p,
        k1=float(coef[1] / sc), k2=float(coef[2] / sc),
        k3=float(coef[3] / sc ** 2), k4=float(0.5 * coef[4] / sc ** 2), k5=float(coef[5] / sc ** 2),
        fit_residual=resid,
    )


def hy2_formula(ell: int, V: float, K: float, b1: float, b2: float, hx: HExpansion) -> float:
    """``8 pi ell/V - 2K + b1^2 + b2^2 - Delta h(p)/h(p) + 2 (k1 b1 + k2 b2)/h(p)``."""
    return (8.0 * math.pi * ell / V - 2.0 * K + b1 * b1 + b2 * b2
            - hx.laplacian / hx.h_p + 2.0 * (hx.k1 * b1 + hx.k2 * b2) / hx.h_p)


def thm3_certificate(h: GridField, G: TranslationGroup, p=None, tol: float = 1e-8,
                     b: tuple[float, float] | None = None,
                     expansion: HExpansion | None = None) -> CertificateReport:
    """Evaluate the quantity whose positivity gives existence at ``8 pi ell``.

    ``p`` defaults to the grid maximiser; a supplied ``p`` must attain the
    maximum of ``2 log(pi ell h) + A~`` within ``tol``.  ``b`` and
    ``expansion`` override the fitted Green and ``h`` coefficients.
    """
    _check_h(h, G)
    A = robin_profile(h, G)
    p_star, m = maximizer(h, G, A)
    if p is None:
        p = p_star
    p = as_point(p)
    hp = float(bilinear_sample(h, np.array(p.coords)))
    val = 2.0 * math.log(math.pi * G.order * hp) + A
    if val < m - tol:
        raise PreconditionError(
            f"p = {p.coords} is not a maximiser: value {val:.12g} < max {m:.12g}")
    L = h.lattice
    if b is None:
        ex = fit_expansion(p, G, L=L)
        b1, b2 = ex.b1, ex.b2
    else:
        b1, b2 = map(float, b)
    hx = fit_h_expansion(h, p) if expansion is None else expansion
    ell = G.order
    V = L.volume
    hy2 = hy2_formula(ell, V, 0.0, b1, b2, hx)
    lhs = math.log(integrate(h))
    rhs = 1.0 + 0.5 * m
    inputs = _base_inputs(h, G, A, p)
    inputs.update({"b1": b1, "b2": b2, "k1": hx.k1, "k2": hx.k2, "k3": hx.k3, "k4": hx.k4,
                   "k5": hx.k5, "h_p": hx.h_p, "laplacian_h_p": hx.laplacian})
    return CertificateReport(
        lower_bound_value=-4.0 * math.pi * ell * m - 8.0 * math.pi * ell,
        cond_lhs=lhs,
        cond_rhs=rhs,
        cond_holds=bool(lhs > rhs),
        hy2_value=hy2,
        hy2_holds=bool(hy2 > 0),
        inputs=inputs,
    )


# -- test functions ------------------------------------------------------------


def r_rule(eps: float) -> float:
    """``R`` with ``R^4 eps^2 = 1 / log(-log eps)``; needs ``eps < 1/e``."""
    if not 0 < eps < math.exp(-1):
        raise ConfigurationError(f"eps must lie in (0, 1/e), got {eps}")
    return (1.0 / (eps * eps * math.log(-math.log(eps)))) ** 0.25


def cap_constant(R: float, eps: float) -> float:
    """``c = 2 log(1 + R^2/8) - 4 log(R eps)``: matches the cap to ``G~`` at ``r = R eps``."""
    return 2.0 * math.log1p(R * R / 8.0) - 4.0 * math.log(R * eps)


def cutoff_eta(r, R_eps: float):
    """Quintic cutoff: 1 on ``r <= R eps``, 0 on ``r >= 2 R eps``, ``|eta'| <= 1.875/(R eps)``."""
    t = np.clip((np.asarray(r, dtype=float) - R_eps) / R_eps, 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass
class TestFunction:
    eps: float
    R: float
    c: float
    p: Point
    A_tilde: float
    b: tuple[float, float]
    field: GridField
    interface_jump: float

    __test__ = False  # not a pytest class


def build_test_function(eps: float, h: GridField, G: TranslationGroup, n1: int | None = None,
                        n2: int | None = None, p=None, min_cells: float = 8.0) -> TestFunction:
    """Glue ``c - 2 log(1 + r^2/(8 eps^2)) + A~ + alpha`` caps into ``G~_p``.

    Outside the caps the field is ``G~_p - sum_i eta_i beta_i`` with the exact
    remainder ``beta_i = G~_p + 4 log r_i - A~ - alpha_i``.  Requires
    ``2 R eps < delta`` and ``R eps`` spanning ``min_cells`` grid cells.
    """
    n1 = h.n1 if n1 is None else n1
    n2 = n1 if n2 is None else n2
    L = h.lattice
    if (n1, n2) != h.shape:
        raise ConfigurationError("grid dims must match the grid of h")
    A = robin_profile(h, G)
    if p is None:
        p, _ = maximizer(h, G, A)
    p = as_point(p)
    R = r_rule(eps)
    Re = R * eps
    delta = delta_radius(p, G, L)
    if not 2.0 * Re < delta:
        raise ConfigurationError(
            f"eps = {eps}: 2 R eps = {2 * Re:.4g} is not below delta = {delta:.4g}")
    spacing = min(np.hypot(*L.basis_a) / n1, np.hypot(*L.basis_b) / n2)
    if Re < min_cells * spacing:
        raise ResolutionError(f"eps = {eps}: R eps = {Re:.4g} spans fewer than {min_cells} cells")
    ex = fit_expansion(p, G, L=L)
    b1, b2 = ex.b1, ex.b2
    c = cap_constant(R, eps)

    s, t = grid_points(n1, n2)
    st = np.stack([s, t], axis=-1)
    pts = orbit(p, G, L)
    disp = [min_image(st - np.array(q.coords), L) for q in pts]
    rad = [np.hypot(d[..., 0], d[..., 1]) for d in disp]
    in_cap = [r < Re for r in rad]
    any_cap = np.zeros(s.shape, dtype=bool)
    for m in in_cap:
        any_cap |= m
    gt = SymmetrizedGreen(p, G, L)
    vals = np.zeros(s.shape)
    out = ~any_cap
    vals[out] = gt(s[out], t[out])
    for d, r, m in zip(disp, rad, in_cap):
        alpha = b1 * d[..., 0] + b2 * d[..., 1]
        vals[m] = c - 2.0 * np.log1p(r[m] ** 2 / (8.0 * eps * eps)) + A + alpha[m]
    for j, (d, r) in enumerate(zip(disp, rad)):
        ann = (r >= Re) & (r < 2.0 * Re)
        if not np.any(ann):
            continue
        alpha = b1 * d[..., 0][ann] + b2 * d[..., 1][ann]
        beta = gt(s[ann], t[ann]) + 4.0 * np.log(r[ann]) - A - alpha
        vals[ann] -= cutoff_eta(r[ann], Re) * beta
    phi = symmetrize(GridField(vals, L), G)

    # continuity: both formulas evaluated on the circle r = R eps around p
    th = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    yc = np.stack([Re * np.cos(th), Re * np.sin(th)], axis=-1)
    sc = np.array(p.coords) + L.to_lattice(yc)
    alpha_c = b1 * yc[:, 0] + b2 * yc[:, 1]
    g_c = gt(sc[:, 0], sc[:, 1])
    inner = c - 2.0 * np.log1p(Re * Re / (8.0 * eps * eps)) + A + alpha_c
    outer = g_c - cutoff_eta(np.full(th.shape, Re), Re) * (g_c + 4.0 * math.log(Re) - A - alpha_c)
    jump = float(np.max(np.abs(inner - outer)))
    return TestFunction(eps=eps, R=R, c=c, p=p, A_tilde=A, b=(b1, b2), field=phi,
                        interface_jump=jump)


def c_star(h: GridField, G: TranslationGroup, p=None, A_tilde: float | None = None) -> float:
    """``-8 pi ell - 4 pi ell A~_p - 8 pi ell log(pi ell h(p))``."""
    A = robin_profile(h, G) if A_tilde is None else A_tilde
    if p is None:
        p, _ = maximizer(h, G, A)
    hp = float(bilinear_sample(h, np.array(as_point(p).coords)))
    ell = G.order
    return -8.0 * math.pi * ell - 4.0 * math.pi * ell * A - 8.0 * math.pi * ell * math.log(math.pi * ell * hp)


def critical_energy(phi: GridField, h: GridField, ell: int) -> float:
    """``J_{8 pi ell}(phi - mean)`` with the finite-difference Dirichlet energy."""
    u = phi.values - phi.mean()
    m = u.max()
    logint = m + math.log(float(np.sum(h.values * np.exp(u - m))) * phi.cell_area)
    return 0.5 * fd_dirichlet_energy(phi) - 8.0 * math.pi * ell * logint


def test_energy_asymptotic(eps: float, h: GridField, G: TranslationGroup,
                           report: CertificateReport | None = None) -> float:
    """``C* - 32 pi ell hy2 eps^2 log(1/eps)`` (flat case)."""
    rep = thm3_certificate(h, G) if report is None else report
    ell = G.order
    cs = c_star(h, G, rep.inputs["p"], rep.inputs["A_tilde"])
    return cs - 32.0 * math.pi * ell * rep.hy2_value * eps * eps * math.log(1.0 / eps)


test_energy_asymptotic.__test__ = False


def test_energy_numeric(eps_list: Sequence[float], h: GridField, G: TranslationGroup,
                        skip_infeasible: bool = False) -> list[dict]:
    """Rows ``eps, R, J_numeric, C_star, gap_numeric, gap_asymptotic`` per ``eps``.

    With ``skip_infeasible`` a geometry or resolution failure gives a row with
    NaN values and an ``error`` entry instead of raising.
    """
    rep = thm3_certificate(h, G)
    p = rep.inputs["p"]
    cs = c_star(h, G, p, rep.inputs["A_tilde"])
    rows = []
    for eps in eps_list:
        try:
            tf = build_test_function(eps, h, G, p=p)
        except ConfigurationError as exc:
            if not skip_infeasible:
                raise
            rows.append({"eps": eps, "R": r_rule(eps), "J_numeric": math.nan, "C_star": cs,
                         "gap_numeric": math.nan,
                         "gap_asymptotic": test_energy_asymptotic(eps, h, G, rep) - cs,
                         "error": str(exc)})
            continue
        J = critical_energy(tf.field, h, G.order)
        rows.append({"eps": eps, "R": tf.R, "J_numeric": J, "C_star": cs, "gap_numeric": J - cs,
                     "gap_asymptotic": test_energy_asymptotic(eps, h, G, rep) - cs})
    return rows


test_energy_numeric.__test__ = False


def perturbation_study(c: float, modes, eps_values: Sequence[float], G: TranslationGroup,
                       n: int = 128, lattice=None) -> list[dict]:
    """Lower-bound certificate margin for ``h = c + eps * phi`` with ``phi`` an invariant trigonometric sum."""
    from .spectral import mode_is_invariant
    from .torus import UNIT_SQUARE

    L = UNIT_SQUARE if lattice is None else lattice
    for m, k, *_ in modes:
        if not mode_is_invariant(m, k, G):
            raise ConfigurationError(f"mode ({m}, {k}) is not invariant under the group")
    phi = trig_field(0.0, modes, n, n, L)
    A = None
    out = []
    for e in eps_values:
        h = GridField(c + e * phi.values, L)
        if A is None:
            A = robin_profile(h, G)
        rep = thm2_certificate(h, G, A_tilde=A)
        out.append({"eps": e, "lhs": rep.cond_lhs, "rhs": rep.cond_rhs,
                    "margin": rep.cond_margin, "holds": rep.cond_holds})
    return out
