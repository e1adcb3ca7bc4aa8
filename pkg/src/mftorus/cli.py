"""Command line front end: ``mftorus <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
64 unknown subcommand.  Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigurationError, MfTorusError, PreconditionError

log = logging.getLogger("mftorus")

SUBCOMMANDS = ("green", "solve", "continue", "bubble", "certify", "testfn", "constants")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64


class NumericalFailure(MfTorusError):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


# -- output helpers ------------------------------------------------------------


def _plain(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_cell(v) for v in r) + "\n")
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def load_schema(name: str) -> dict:
    text = resources.files("mftorus").joinpath("schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def validate(obj, name: str) -> None:
    jsonschema.validate(_plain(obj), load_schema(name))


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RunWriter:
    """Collects output files of one run and writes the manifest last."""

    def __init__(self, out_dir):
        self.out = Path(out_dir) if out_dir else None
        self.files: dict[str, bytes] = {}

    def add(self, name: str, data: bytes | str) -> None:
        if isinstance(data, str):
            data = data.encode("utf-8")
        self.files[name] = data

    def add_json(self, name: str, obj, schema: str | None = None) -> None:
        if schema:
            validate(obj, schema)
        self.add(name, json_text(obj))

    def add_csv(self, name: str, header, rows) -> None:
        self.add(name, csv_text(header, rows))

    def flush(self, manifest: dict) -> None:
        if self.out is None:
            return
        for name, data in sorted(self.files.items()):
            atomic_write(self.out / name, data)
        entries = [{"name": n, "bytes": len(d), "sha256": hashlib.sha256(d).hexdigest()}
                   for n, d in sorted(self.files.items())]
        combined = hashlib.sha256()
        for e in entries:
            combined.update(f"{e['name']}:{e['sha256']}\n".encode())
        manifest = dict(manifest, files=entries, output_hash=combined.hexdigest())
        validate(manifest, "manifest")
        atomic_write(self.out / "manifest.json", json_text(manifest).encode())


# -- subcommands ---------------------------------------------------------------


def cmd_constants(cfg, args, w: RunWriter):
    from .green import half_shift_constants

    consts = half_shift_constants()
    w.add_json("constants.json", consts, "constants")
    return consts, None


def cmd_green(cfg, args, w: RunWriter):
    from .certificates import maximizer, robin_profile
    from .green import SymmetrizedGreen, delta_radius, fit_expansion

    h = cfg.h_field()
    G, L = cfg.group, cfg.lattice
    A = robin_profile(h, G)
    p, _ = maximizer(h, G, A)
    gt = SymmetrizedGreen(p, G, L)
    ex = fit_expansion(p, G, L=L)
    delta = delta_radius(p, G, L)
    mean = gt.mean(cfg.grid)
    summary = {
        "p": list(p.coords),
        "ell": G.order,
        "volume": L.volume,
        "A_tilde": A,
        "delta": delta,
        "mean": mean,
        "expansion": ex.to_dict(),
        "c1_plus_c3": ex.c1 + ex.c3,
        "four_pi_ell_over_V": 4 * math.pi * G.order / L.volume,
    }
    a = np.array(L.basis_a)
    unit = a / np.hypot(*a)
    radii = np.linspace(delta / 50, L.injectivity_radius() * 0.95, 200)
    st = np.array(p.coords) + L.to_lattice(radii[:, None] * unit[None, :])
    vals = gt(st[:, 0], st[:, 1])
    sing = -4.0 * np.log(radii) + A
    rows = [(r, v, s_, v - s_) for r, v, s_ in zip(radii, vals, sing)]
    header = ("r", "G_tilde", "singular_part", "remainder")
    w.add_json("green.json", summary, "green")
    w.add_csv("green_slice.csv", header, rows)
    return summary, (header, rows)


def _initial_field(cfg, spec):
    from .solver import random_invariant_field

    if cfg.perturbation > 0:
        return random_invariant_field(spec, seed=cfg.seed, amplitude=cfg.perturbation)
    return None


def cmd_solve(cfg, args, w: RunWriter):
    from .spectral import grid_to_bytes
    from .solver import minimize

    spec = cfg.problem_spec()
    st = minimize(spec, _initial_field(cfg, spec), force=cfg.force)
    header = ("iter", "J", "grad_norm", "residual", "c_eps", "lambda_eps")
    rows = [tuple(r[k] for k in ("iter", "J", "grad_norm", "residual", "c_eps", "lambda_eps"))
            for r in st.history]
    summary = dict(st.summary(), rho=spec.rho, ell=spec.ell, grid=cfg.grid, seed=cfg.seed)
    w.add_csv("iterations.csv", header, rows)
    w.add_json("summary.json", summary, "solve")
    w.add("u.grid", grid_to_bytes(st.u))
    if not st.converged:
        raise NumericalFailure(f"minimisation did not converge: {st.message}", summary)
    return summary, (header, rows)


def cmd_continue(cfg, args, w: RunWriter):
    from .spectral import grid_to_bytes
    from .solver import continuation

    if not cfg.schedule:
        raise ConfigurationError("schedule.eps: required for 'continue'")
    spec = cfg.problem_spec(epsilon=cfg.schedule[0])
    states = continuation(spec, cfg.schedule, threshold=cfg.threshold,
                          u0=_initial_field(cfg, spec))
    header = ("eps", "J", "grad_norm", "residual", "c_eps", "lambda_eps", "x1", "x2", "r_eps",
              "lemma42_ratio", "converged", "blowup", "under_resolved", "iterations")
    rows = [(s.epsilon, s.J_value, s.grad_norm, s.el_residual, s.c_eps, s.lambda_eps,
             s.x_eps.coords[0], s.x_eps.coords[1], s.r_eps, s.lemma42_ratio, s.converged,
             s.blowup, s.under_resolved, s.iterations) for s in states]
    ratios = [s.lemma42_ratio for s in states if s.lemma42_ratio is not None]
    summary = {
        "schedule": cfg.schedule,
        "completed": [s.epsilon for s in states],
        "stages": [s.summary() for s in states],
        "lemma42_bound": max(ratios) if ratios else None,
        "blowup": any(s.blowup for s in states),
    }
    w.add_csv("stages.csv", header, rows)
    w.add_json("summary.json", summary, "continue")
    if states:
        w.add("u_final.grid", grid_to_bytes(states[-1].u))
    failed = len(states) < len(cfg.schedule) or not all(s.converged for s in states)
    if failed:
        raise NumericalFailure("continuation had failed or non-converged stages", summary)
    return summary, (header, rows)


def cmd_bubble(cfg, args, w: RunWriter):
    from .blowup import diagnose
    from .certificates import build_test_function
    from .solver import ProblemSpec, state_from_field
    from .spectral import GridField, read_grid_binary

    G = cfg.group
    if cfg.bubble_source == "synthetic":
        h = cfg.h_field()
        tf = build_test_function(cfg.bubble_eps, h, G)
        u = tf.field.with_values(tf.field.values - tf.field.mean())
        spec = ProblemSpec(h=h, group=G, epsilon=cfg.bubble_eps)
    else:
        u = read_grid_binary(cfg.bubble_field)
        if u.lattice != cfg.lattice:
            raise ConfigurationError("bubble.field: lattice differs from the config lattice")
        h = cfg.h_field(u.n1) if u.n1 == u.n2 else None
        if h is None:
            raise ConfigurationError("bubble.field: only square grids are supported")
        spec = ProblemSpec(h=h, group=G, rho=cfg.rho,
                           epsilon=None if cfg.rho is not None else cfg.epsilon)
    st = state_from_field(u, spec, check=True)
    d = diagnose(st, spec, R=cfg.bubble_R, profile_R=cfg.bubble_profile_R)
    header = ("abs_y", "phi_eps", "phi", "difference")
    rows = list(d.profile_samples.rows())
    summary = dict(d.to_dict(), source=cfg.bubble_source, ell=G.order)
    w.add_csv("profile.csv", header, rows)
    w.add_json("fractions.json", summary, "bubble")
    return summary, (header, rows)


def cmd_certify(cfg, args, w: RunWriter):
    from .certificates import thm3_certificate

    rep = thm3_certificate(cfg.h_field(), cfg.group)
    out = rep.to_dict()
    w.add_json("certificate.json", out, "certificate")
    return out, None


def cmd_testfn(cfg, args, w: RunWriter):
    from .certificates import test_energy_numeric

    rows_d = test_energy_numeric(cfg.testfn_eps, cfg.h_field(), cfg.group)
    header = ("eps", "R", "J_numeric", "C_star", "gap_numeric", "gap_asymptotic")
    rows = [tuple(r[k] for k in header) for r in rows_d]
    summary = {"rows": [dict(zip(header, r)) for r in rows]}
    w.add_csv("testfn.csv", header, rows)
    w.add_json("testfn.json", summary, "testfn")
    return summary, (header, rows)


HANDLERS = {
    "constants": cmd_constants,
    "green": cmd_green,
    "solve": cmd_solve,
    "continue": cmd_continue,
    "bubble": cmd_bubble,
    "certify": cmd_certify,
    "testfn": cmd_testfn,
}


# -- dispatch ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mftorus",
        description="Mean field equations on flat tori with translation symmetry.",
    )
    p.add_argument("subcommand", choices=SUBCOMMANDS, help="pipeline to run")
    p.add_argument("--config", metavar="PATH", help="TOML run configuration")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--grid", type=int, metavar="N", help="grid size N x N")
    p.add_argument("--eps", type=float, metavar="E", help="epsilon, rho = 8 pi ell (1 - E)")
    p.add_argument("--seed", type=int, metavar="S", help="seed for random initial data")
    p.add_argument("--format", choices=("csv", "json"), default="json",
                   help="what to print on stdout (default json)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _error(code: int, exc: BaseException, w: RunWriter | None, extra=None) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if extra:
        payload["details"] = extra
    text = json_text(payload)
    sys.stderr.write(text)
    if w is not None and w.out is not None:
        w.add("error.json", text)
    return code


_VALUED = {"--config", "--out", "--grid", "--eps", "--seed", "--format"}


def _first_positional(argv):
    skip = False
    for a in argv:
        if skip:
            skip = False
        elif a in _VALUED:
            skip = True
        elif not a.startswith("-"):
            return a
    return None


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    first = _first_positional(argv)
    if first is None or first not in SUBCOMMANDS:
        if any(a in ("-h", "--help") for a in argv):
            parser.print_help()
            return EXIT_OK
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"unknown or missing subcommand {first!r}; choose from {', '.join(SUBCOMMANDS)}\n")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from .config import config_digest, input_hash, load_config, parse_config

    overrides = {"grid": args.grid, "eps": args.eps, "seed": args.seed, "out": args.out}
    raw = b""
    w = RunWriter(args.out)
    try:
        if args.config:
            raw = Path(args.config).read_bytes() if Path(args.config).is_file() else b""
            cfg = load_config(args.config, overrides)
        elif args.subcommand == "constants":
            cfg = parse_config({}, overrides)
        else:
            raise ConfigurationError(f"--config is required for '{args.subcommand}'")
    except ConfigurationError as exc:
        return _error(EXIT_CONFIG, exc, None)
    w = RunWriter(cfg.out_dir)
    started = datetime.now(timezone.utc).isoformat()
    manifest = {
        "tool": "mftorus",
        "version": __version__,
        "subcommand": args.subcommand,
        "config_digest": config_digest(cfg),
        "input_hash": input_hash(raw),
        "seed": cfg.seed,
        "started": started,
    }
    code = EXIT_OK
    summary, table = None, None
    try:
        summary, table = HANDLERS[args.subcommand](cfg, args, w)
    except NumericalFailure as exc:
        code = _error(EXIT_NUMERIC, exc, w, exc.payload)
    except (ConfigurationError, PreconditionError) as exc:
        code = _error(EXIT_CONFIG, exc, w)
    except (MfTorusError, FloatingPointError, ArithmeticError) as exc:
        code = _error(EXIT_NUMERIC, exc, w)
    manifest["finished"] = datetime.now(timezone.utc).isoformat()
    manifest["exit_code"] = code
    try:
        w.flush(manifest)
    except OSError as exc:
        return _error(EXIT_CONFIG, exc, None)
    if code == EXIT_OK:
        if args.format == "csv" and table is not None:
            sys.stdout.write(csv_text(*table))
        else:
            sys.stdout.write(json_text(summary))
    return code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
