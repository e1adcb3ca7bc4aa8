"""Minimisation of ``J_rho(u) = 1/2 int |grad u|^2 - rho log int h e^u`` over
G-invariant mean-zero fields, by projected Sobolev-gradient descent."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .spectral import (
    GridField,
    dirichlet_energy,
    integrate,
    inverse_laplacian,
    laplacian,
    plan_for,
)
from .torus import Point, TranslationGroup, is_invariant, point_from_index, project_H_G, symmetrize

log = logging.getLogger(__name__)

__all__ = [
    "ProblemSpec",
    "MinimizerState",
    "functional_J",
    "el_residual",
    "sobolev_gradient",
    "minimize",
    "continuation",
    "state_from_field",
    "random_invariant_field",
]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Data of the mean field problem ``Delta u = rho (h e^u / int h e^u - 1/V)``.

    Give either ``rho`` or ``epsilon``; the latter means ``rho = 8 pi ell (1 - epsilon)``.
    """

    h: GridField
    group: TranslationGroup = field(default_factory=TranslationGroup.identity)
    rho: float | None = None
    epsilon: float | None = None
    tol: float = 1e-6
    max_iter: int = 5000
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    max_step: float = 50.0

    def __post_init__(self):
        h = self.h
        self.group.index_shifts(h.n1, h.n2)
        if not h.min() > 0.0:
            raise ConfigurationError(f"h must be positive, min(h) = {h.min():.6g}")
        hs = symmetrize(h, self.group)
        if np.max(np.abs(hs.values - h.values)) > 1e-12 * max(1.0, np.max(np.abs(h.values))):
            raise ConfigurationError("h is not invariant under the group")
        if self.epsilon is not None:
            if not 0.0 < self.epsilon < 1.0:
                raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
            rho = 8.0 * math.pi * self.ell * (1.0 - self.epsilon)
            if self.rho is not None and not math.isclose(rho, self.rho, rel_tol=1e-12):
                raise ConfigurationError("rho and epsilon are inconsistent")
            object.__setattr__(self, "rho", rho)
        elif self.rho is None:
            raise ConfigurationError("give rho or epsilon")

    @property
    def lattice(self):
        return self.h.lattice

    @property
    def ell(self) -> int:
        return self.group.order

    @property
    def volume(self) -> float:
        return self.lattice.volume

    @property
    def critical_rho(self) -> float:
        return 8.0 * math.pi * self.ell

    def with_epsilon(self, eps: float) -> "ProblemSpec":
        return replace(self, epsilon=eps, rho=None)


@dataclass(eq=False)
class MinimizerState:
    u: GridField
    J_value: float
    grad_norm: float
    el_residual: float
    lambda_eps: float
    c_eps: float
    x_eps: Point
    iterations: int = 0
    converged: bool = False
    message: str = ""
    feasibility_drift: float = 0.0
    history: list = field(default_factory=list)
    epsilon: float | None = None
    blowup: bool = False
    under_resolved: bool = False
    r_eps: float | None = None
    lemma42_ratio: float | None = None

    def summary(self) -> dict:
        return {
            "J": self.J_value,
            "grad_norm": self.grad_norm,
            "el_residual": self.el_residual,
            "lambda_eps": self.lambda_eps,
            "c_eps": self.c_eps,
            "x_eps": list(self.x_eps.coords),
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "feasibility_drift": self.feasibility_drift,
            "epsilon": self.epsilon,
            "blowup": self.blowup,
            "under_resolved": self.under_resolved,
            "r_eps": self.r_eps,
            "lemma42_ratio": self.lemma42_ratio,
        }


def _log_weighted(h: GridField, u: GridField) -> float:
    """``log int h e^u`` without overflow."""
    m = u.max()
    return m + math.log(float(np.sum(h.values * np.exp(u.values - m))) * u.cell_area)


def _check_feasible(u: GridField, spec: ProblemSpec) -> None:
    if u.shape != spec.h.shape or u.lattice != spec.lattice:
        raise PreconditionError("u and h live on different grids")
    p = project_H_G(u, spec.group)
    drift = float(np.max(np.abs(p.values - u.values)))
    if drift > 1e-10 * max(1.0, float(np.max(np.abs(u.values)))):
        raise PreconditionError(f"u is not in H_G (projection residual {drift:.3e})")


def functional_J(u: GridField, spec: ProblemSpec, check: bool = True) -> float:
    """``1/2 int |grad u|^2 - rho log int h e^u``."""
    if check:
        _check_feasible(u, spec)
    return 0.5 * dirichlet_energy(u) - spec.rho * _log_weighted(spec.h, u)


def _delta_J(u: GridField, cand: GridField, spec: ProblemSpec, loglam: float) -> float:
    """``J(cand) - J(u)`` without the cancellation of two O(1) values."""
    d = cand.values - u.values
    de = 0.5 * float(np.sum(laplacian(cand.with_values(d)).values * (cand.values + u.values))) * u.cell_area
    w = spec.h.values * np.exp(u.values - loglam)
    ratio = float(np.sum(w * np.expm1(d))) * u.cell_area
    if ratio <= -1.0:
        return math.inf
    return de - spec.rho * math.log1p(ratio)


def _residual_field(u: GridField, spec: ProblemSpec) -> tuple[np.ndarray, float]:
    loglam = _log_weighted(spec.h, u)
    dens = spec.h.values * np.exp(u.values - loglam)
    r = laplacian(u).values - spec.rho * (dens - 1.0 / spec.volume)
    return r, math.exp(loglam)


def el_residual(u: GridField, spec: ProblemSpec, check: bool = True) -> float:
    """L2 norm of ``Delta u - rho (h e^u / lambda - 1/V)``."""
    if check:
        _check_feasible(u, spec)
    r, _ = _residual_field(u, spec)
    return float(math.sqrt(np.sum(r * r) * u.cell_area))


def sobolev_gradient(u: GridField, spec: ProblemSpec) -> tuple[GridField, float]:
    """H^1 gradient of J on H_G and its H^1 norm.

    ``g = Delta^{-1} P(Delta u - rho h e^u / lambda)`` with ``P`` the projection
    onto invariant mean-zero fields, so ``int grad g . grad v = dJ(u)[v]``.
    """
    r, lam = _residual_field(u, spec)
    pr = project_H_G(u.with_values(r), spec.group)
    g = inverse_laplacian(pr, rtol=1e-8)
    norm2 = float(np.sum(g.values * pr.values) * u.cell_area)
    return g, math.sqrt(max(norm2, 0.0))


def state_from_field(u: GridField, spec: ProblemSpec, check: bool = False, **extra) -> MinimizerState:
    """Diagnostics of an arbitrary field (used to inject synthetic states)."""
    if check:
        _check_feasible(u, spec)
    i, j = u.argmax()
    g, gn = sobolev_gradient(u, spec)
    loglam = _log_weighted(spec.h, u)
    return MinimizerState(
        u=u,
        J_value=functional_J(u, spec, check=False),
        grad_norm=gn,
        el_residual=el_residual(u, spec, check=False),
        lambda_eps=math.exp(loglam),
        c_eps=u.max(),
        x_eps=point_from_index(i, j, u.n1, u.n2),
        epsilon=spec.epsilon,
        **extra,
    )


def random_invariant_field(spec: ProblemSpec, seed: int = 0, amplitude: float = 0.5,
                           modes: int = 4) -> GridField:
    """Band-limited random field projected onto H_G, scaled to max abs ``amplitude``."""
    rng = np.random.default_rng(seed)
    n1, n2 = spec.h.shape
    coeffs = np.zeros((n1, n2 // 2 + 1), dtype=complex)
    for m in range(-modes, modes + 1):
        for n in range(0, modes + 1):
            if m == 0 and n == 0:
                continue
            coeffs[m % n1, n] = rng.normal() + 1j * rng.normal()
    vals = np.fft.irfft2(coeffs, s=(n1, n2))
    u = project_H_G(spec.h.with_values(vals), spec.group)
    scale = float(np.max(np.abs(u.values)))
    if scale == 0.0:
        # the group killed every sampled mode
        return u
    return u.with_values(u.values * (amplitude / scale))


def minimize(spec: ProblemSpec, u0: GridField | None = None, force: bool = False,
             compare_zero: bool = True, record_history: bool = True) -> MinimizerState:
    """Projected Sobolev-gradient descent with Armijo backtracking.

    Trial steps come from a Barzilai-Borwein estimate in the H^1 metric;
    accepted steps always satisfy the Armijo condition, so ``J`` decreases
    monotonically.  Stops once both the gradient norm and the
    Euler-Lagrange residual are below ``spec.tol``.

    With ``compare_zero`` the final value is compared with ``J(0)``; if the
    zero field is better the descent is restarted from it and the better of
    the two states is returned.
    """
    if spec.rho >= spec.critical_rho and not force:
        raise PreconditionError(
            f"rho = {spec.rho:.6g} is not subcritical (8 pi ell = {spec.critical_rho:.6g}); "
            "pass force=True to proceed")
    if u0 is None:
        u0 = spec.h.with_values(np.zeros(spec.h.shape))
    u = project_H_G(u0, spec.group)
    state = _descend(spec, u, record_history)
    if compare_zero and np.any(u0.values != 0.0):
        zero = spec.h.with_values(np.zeros(spec.h.shape))
        if functional_J(zero, spec, check=False) < state.J_value:
            alt = _descend(spec, zero, record_history)
            if alt.J_value <= state.J_value:
                alt.message = (alt.message + "; restarted from u = 0").lstrip("; ")
                alt.iterations += state.iterations
                return alt
    return state


def _descend(spec: ProblemSpec, u: GridField, record_history: bool) -> MinimizerState:
    J = functional_J(u, spec, check=False)
    g, gn = sobolev_gradient(u, spec)
    res = el_residual(u, spec, check=False)
    history = []
    drift = 0.0
    t_prev = 1.0
    prev = None
    message = "max_iter reached"
    converged = False
    it = 0

    def record():
        if record_history:
            loglam = _log_weighted(spec.h, u)
            history.append({"iter": it, "J": J, "grad_norm": gn, "residual": res,
                            "c_eps": u.max(), "lambda_eps": math.exp(loglam)})

    record()
    while True:
        if gn < spec.tol and res < spec.tol:
            converged = True
            message = "converged"
            break
        if it >= spec.max_iter:
            break
        if prev is not None:
            s = u.values - prev[0].values
            y = g.values - prev[1].values
            # H^1 inner products via the L2 pairing with Delta
            ly = laplacian(u.with_values(y)).values
            sy = float(np.sum(s * ly))
            ss = float(np.sum(s * laplacian(u.with_values(s)).values))
            t = ss / sy if sy > 0 else 2.0 * t_prev
        else:
            t = 1.0
        t = min(max(t, 1e-3), spec.max_step)
        slope = gn * gn
        loglam = _log_weighted(spec.h, u)
        for _ in range(spec.max_backtracks + 1):
            cand = project_H_G(u - t * g, spec.group)
            dJ = _delta_J(u, cand, spec, loglam)
            if dJ <= -spec.armijo_c * t * slope and dJ < 0.0:
                break
            t *= spec.shrink
        else:
            message = "line search failed"
            break
        prev = (u, g)
        drift = max(drift, float(np.max(np.abs(project_H_G(cand, spec.group).values - cand.values))))
        # J is carried by exact decrements so the recorded sequence stays monotone
        u, J, t_prev = cand, J + dJ, t
        g, gn = sobolev_gradient(u, spec)
        res = el_residual(u, spec, check=False)
        it += 1
        record()

    i, j = u.argmax()
    loglam = _log_weighted(spec.h, u)
    return MinimizerState(
        u=u, J_value=J, grad_norm=gn, el_residual=res, lambda_eps=math.exp(loglam),
        c_eps=u.max(), x_eps=point_from_index(i, j, u.n1, u.n2), iterations=it,
        converged=converged, message=message, feasibility_drift=drift, history=history,
        epsilon=spec.epsilon,
    )


def assess_blowup(state: MinimizerState, spec: ProblemSpec, threshold: float = 12.0,
                  prev: MinimizerState | None = None, growth_jump: float = 4.0,
                  min_cells: float = 4.0) -> MinimizerState:
    """Set the blow-up / under-resolved flags and the concentration ratio ``r^2 e^{c/2}`` on ``state``."""
    from .blowup import r_epsilon

    r = r_epsilon(state, spec)
    state.r_eps = r
    state.lemma42_ratio = r * r * math.exp(0.5 * state.c_eps)
    tripped = state.c_eps > threshold
    if prev is not None and state.c_eps - prev.c_eps > growth_jump:
        tripped = True
    if tripped:
        if r < min_cells * spec.h.spacing:
            state.under_resolved = True
            state.blowup = False
        else:
            state.blowup = True
    return state


def continuation(spec: ProblemSpec, eps_schedule, threshold: float = 12.0,
                 u0: GridField | None = None) -> list[MinimizerState]:
    """Warm-started minimisation along a strictly decreasing epsilon schedule."""
    eps = [float(e) for e in eps_schedule]
    if not eps:
        raise ConfigurationError("empty epsilon schedule")
    if any(not 0.0 < e < 1.0 for e in eps):
        raise ConfigurationError("schedule values must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigurationError("epsilon schedule must be strictly decreasing")
    states: list[MinimizerState] = []
    last_good = u0
    prev = None
    for e in eps:
        stage = spec.with_epsilon(e)
        try:
            st = minimize(stage, last_good, compare_zero=False)
        except Exception as exc:  # noqa: BLE001 - recorded per stage
            log.warning("stage epsilon=%g failed: %s", e, exc)
            continue
        assess_blowup(st, stage, threshold, prev)
        states.append(st)
        if st.converged:
            last_good = st.u
            prev = st
    return states
