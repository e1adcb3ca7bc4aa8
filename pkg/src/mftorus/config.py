"""Run configuration files (TOML).

Example::

    [lattice]
    basis_a = [1.0, 0.0]
    basis_b = [0.0, 1.0]

    [group]
    shifts = [["0", "0"], ["1/2", "0"]]

    [h]
    constant = 1.0
    modes = [[2, 0, 0.1, 0.0]]     # (m, n, cos coeff, sin coeff)

    [solver]
    grid = 256
    epsilon = 0.3

Defaults: grid 256, tol 1e-6, seed 0.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path


if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigurationError
from .spectral import GridField, mode_is_invariant, trig_field
from .torus import TorusLattice, TranslationGroup, check_grid, parse_shifts

__all__ = ["RunConfig", "load_config", "parse_config", "config_digest", "input_hash"]

_SECTIONS = {
    "lattice": {"basis_a", "basis_b"},
    "group": {"shifts", "generators", "cyclic", "direction"},
    "h": {"constant", "modes"},
    "solver": {"grid", "epsilon", "rho", "tol", "seed", "max_iter", "perturbation", "force"},
    "schedule": {"eps", "threshold"},
    "bubble": {"source", "eps", "field", "R", "profile_R"},
    "testfn": {"eps"},
    "output": {"dir"},
}


@dataclass
class RunConfig:
    basis_a: tuple[float, float] = (1.0, 0.0)
    basis_b: tuple[float, float] = (0.0, 1.0)
    shifts: list = field(default_factory=lambda: [("0", "0")])
    h_constant: float = 1.0
    h_modes: list = field(default_factory=list)
    grid: int = 256
    epsilon: float | None = None
    rho: float | None = None
    tol: float = 1e-6
    seed: int = 0
    max_iter: int = 5000
    perturbation: float = 0.0
    force: bool = False
    schedule: list = field(default_factory=list)
    threshold: float = 12.0
    bubble_source: str = "synthetic"
    bubble_eps: float = 0.004
    bubble_field: str | None = None
    bubble_R: float = 20.0
    bubble_profile_R: float = 4.0
    testfn_eps: list = field(default_factory=lambda: [0.005, 0.004, 0.003])
    out_dir: str | None = None

    @property
    def lattice(self) -> TorusLattice:
        return TorusLattice(tuple(self.basis_a), tuple(self.basis_b))

    @property
    def group(self) -> TranslationGroup:
        return TranslationGroup(tuple(parse_shifts(self.shifts)))

    def h_field(self, n: int | None = None) -> GridField:
        n = self.grid if n is None else n
        return trig_field(self.h_constant, self.h_modes, n, n, self.lattice)

    def problem_spec(self, epsilon: float | None = None):
        from .solver import ProblemSpec

        eps = self.epsilon if epsilon is None else epsilon
        rho = None if epsilon is not None else self.rho
        if eps is None and rho is None:
            raise ConfigurationError("solver: give epsilon or rho")
        return ProblemSpec(h=self.h_field(), group=self.group, rho=rho, epsilon=eps,
                           tol=self.tol, max_iter=self.max_iter)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["basis_a"] = list(self.basis_a)
        d["basis_b"] = list(self.basis_b)
        d["shifts"] = [[str(a), str(b)] for a, b in self.shifts]
        d["h_modes"] = [list(m) for m in self.h_modes]
        return d


def _num(v, path: str, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"{path}: expected a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigurationError(f"{path}: expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _vec2(v, path: str) -> tuple[float, float]:
    if not isinstance(v, list) or len(v) != 2:
        raise ConfigurationError(f"{path}: expected a 2-vector")
    return (_num(v[0], f"{path}[0]"), _num(v[1], f"{path}[1]"))


def parse_config(data: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a parsed TOML mapping; ``overrides`` holds CLI values (grid, eps, seed, out)."""
    for key, val in data.items():
        if key not in _SECTIONS:
            raise ConfigurationError(f"{key}: unknown section")
        if not isinstance(val, dict):
            raise ConfigurationError(f"{key}: expected a table")
        for sub in val:
            if sub not in _SECTIONS[key]:
                raise ConfigurationError(f"{key}.{sub}: unknown key")
    cfg = RunConfig()
    lat = data.get("lattice", {})
    if "basis_a" in lat:
        cfg.basis_a = _vec2(lat["basis_a"], "lattice.basis_a")
    if "basis_b" in lat:
        cfg.basis_b = _vec2(lat["basis_b"], "lattice.basis_b")
    try:
        cfg.lattice
    except ConfigurationError as exc:
        raise ConfigurationError(f"lattice: {exc}") from None

    grp = data.get("group", {})
    given = [k for k in ("shifts", "generators", "cyclic") if k in grp]
    if len(given) > 1:
        raise ConfigurationError(f"group: give only one of shifts/generators/cyclic, got {given}")
    try:
        if "shifts" in grp:
            G = TranslationGroup(tuple(parse_shifts(grp["shifts"])))
        elif "generators" in grp:
            G = TranslationGroup.generated(*parse_shifts(grp["generators"]))
        elif "cyclic" in grp:
            G = TranslationGroup.cyclic(_num(grp["cyclic"], "group.cyclic", int),
                                        grp.get("direction", "a"))
        else:
            G = TranslationGroup.identity()
    except (ConfigurationError, ValueError, ZeroDivisionError, TypeError) as exc:
        raise ConfigurationError(f"group.{given[0] if given else 'shifts'}: {exc}") from None
    cfg.shifts = [(str(a), str(b)) for a, b in G.shifts]

    hb = data.get("h", {})
    if "constant" in hb:
        cfg.h_constant = _num(hb["constant"], "h.constant")
    modes = []
    for i, m in enumerate(hb.get("modes", [])):
        path = f"h.modes[{i}]"
        if not isinstance(m, list) or len(m) != 4:
            raise ConfigurationError(f"{path}: expected [m, n, a_cos, b_sin]")
        mm, nn = _num(m[0], path + "[0]", int), _num(m[1], path + "[1]", int)
        a, b = _num(m[2], path + "[2]"), _num(m[3], path + "[3]")
        if (mm, nn) == (0, 0):
            raise ConfigurationError(f"{path}: the (0, 0) mode belongs in h.constant")
        if not mode_is_invariant(mm, nn, G):
            raise ConfigurationError(
                f"{path}: mode ({mm}, {nn}) is not invariant under the group "
                f"(shifts {G.describe()})")
        modes.append((mm, nn, a, b))
    cfg.h_modes = modes

    sv = data.get("solver", {})
    if "grid" in sv:
        cfg.grid = _num(sv["grid"], "solver.grid", int)
    for key, kind in (("tol", float), ("seed", int), ("max_iter", int), ("perturbation", float)):
        if key in sv:
            setattr(cfg, key, _num(sv[key], f"solver.{key}", kind))
    if "epsilon" in sv:
        cfg.epsilon = _num(sv["epsilon"], "solver.epsilon")
    if "rho" in sv:
        cfg.rho = _num(sv["rho"], "solver.rho")
    if "force" in sv:
        if not isinstance(sv["force"], bool):
            raise ConfigurationError("solver.force: expected true/false")
        cfg.force = sv["force"]

    sc = data.get("schedule", {})
    if "eps" in sc:
        if not isinstance(sc["eps"], list):
            raise ConfigurationError("schedule.eps: expected a list")
        cfg.schedule = [_num(e, f"schedule.eps[{i}]") for i, e in enumerate(sc["eps"])]
    if "threshold" in sc:
        cfg.threshold = _num(sc["threshold"], "schedule.threshold")

    bb = data.get("bubble", {})
    if "source" in bb:
        if bb["source"] not in ("synthetic", "field"):
            raise ConfigurationError("bubble.source: expected 'synthetic' or 'field'")
        cfg.bubble_source = bb["source"]
    if "eps" in bb:
        cfg.bubble_eps = _num(bb["eps"], "bubble.eps")
    if "field" in bb:
        cfg.bubble_field = str(bb["field"])
    if "R" in bb:
        cfg.bubble_R = _num(bb["R"], "bubble.R")
    if "profile_R" in bb:
        cfg.bubble_profile_R = _num(bb["profile_R"], "bubble.profile_R")
    if cfg.bubble_source == "field" and not cfg.bubble_field:
        raise ConfigurationError("bubble.field: required when bubble.source = 'field'")

    tf = data.get("testfn", {})
    if "eps" in tf:
        if not isinstance(tf["eps"], list):
            raise ConfigurationError("testfn.eps: expected a list")
        cfg.testfn_eps = [_num(e, f"testfn.eps[{i}]") for i, e in enumerate(tf["eps"])]

    if "dir" in data.get("output", {}):
        cfg.out_dir = str(data["output"]["dir"])

    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key == "grid":
            cfg.grid = int(val)
        elif key == "eps":
            cfg.epsilon = float(val)
            cfg.rho = None
        elif key == "seed":
            cfg.seed = int(val)
        elif key == "out":
            cfg.out_dir = str(val)

    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    try:
        check_grid(cfg.grid, cfg.grid)
    except ConfigurationError as exc:
        raise ConfigurationError(f"solver.grid: {exc}") from None
    G = cfg.group
    try:
        G.index_shifts(cfg.grid, cfg.grid)
    except ConfigurationError as exc:
        raise ConfigurationError(f"solver.grid: {exc}") from None
    if cfg.tol <= 0:
        raise ConfigurationError("solver.tol: must be positive")
    if cfg.max_iter < 1:
        raise ConfigurationError("solver.max_iter: must be positive")
    if cfg.epsilon is not None and not 0 < cfg.epsilon < 1:
        raise ConfigurationError(f"solver.epsilon: must lie in (0, 1), got {cfg.epsilon}")
    if cfg.rho is not None and cfg.rho <= 0:
        raise ConfigurationError("solver.rho: must be positive")
    h = cfg.h_field()
    if not h.min() > 0:
        raise ConfigurationError(
            f"h: must be positive, minimum sample is {h.min():.6g} "
            f"(h.constant = {cfg.h_constant}, {len(cfg.h_modes)} modes)")
    if any(b >= a for a, b in zip(cfg.schedule, cfg.schedule[1:])):
        raise ConfigurationError("schedule.eps: must be strictly decreasing")
    if any(not 0 < e < 1 for e in cfg.schedule):
        raise ConfigurationError("schedule.eps: values must lie in (0, 1)")


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return parse_config(data, overrides)


def config_digest(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form of a validated config."""
    text = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def input_hash(data: bytes) -> str:
    """Git blob hash of raw input bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
