"""Command-line entry point: ``fiap <subcommand> [options]``.

Exit status: 0 when everything ran and every verdict passed, 1 when a
verdict failed, 2 on usage or configuration errors. Data goes to stdout or
to files; progress and diagnostics go to stderr.

Environment: ``FIAP_OUT_DIR`` overrides the output directory of the config
and ``FIAP_WORKERS`` the worker count; command-line flags win over both.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .analytics import ConvergenceError, OdeIntegrationError, integrate_counting_ode, solve_counting_rate
from .replica import ArchiveError, SimulationError, run_monte_carlo
from .spec import INSTANCE_NAMES, SpecError, spec_from_dict
from .verify import ConfigError, ExperimentConfig, SuiteResult, load_config, vector_ph, verify_ph

log = logging.getLogger("fiap")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

INSTANCE_HELP = {
    "galves-locherbach": "reset on spike (g1=0, g2=identity); params K, sigma, weights (scalar or KxK)",
    "gordon-newell": "closed ring of queues (g1=k-1, g2=identity, one unit to the next node); params K, sigma",
    "tcp-aimd": "halve on activation, else add one (g1=k//2, g2=k+1); params K, sigma, optional weights",
    "custom-table": "user maps; params K, sigma, g1, g2, h",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fiap", description="Replica mean-field simulation and Poisson Hypothesis checks.")
    parser.add_argument("--version", action="version", version=f"fiap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment document (JSON)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")
        return p

    experiment("simulate", "run Monte Carlo campaigns and write archives")
    experiment("verify-ph", "run the Poisson Hypothesis suite over an M sweep")
    experiment("vector-ph", "check the vector-state multivariate arrival law")

    p = sub.add_parser("solve-rate", help="solve the counting-model rate equation")
    p.add_argument("--config", help="experiment document with b, mu and K")
    p.add_argument("--b", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--ode", action="store_true", help="also integrate the generating-function ODE")
    p.add_argument("--out", help="also write the result here")

    sub.add_parser("list-instances", help="list built-in model families")

    p = sub.add_parser("validate", help="check a model or experiment document")
    p.add_argument("--config", required=True)
    return parser


def _workers(args) -> int:
    if getattr(args, "workers", None) is not None:
        return max(1, args.workers)
    env = os.environ.get("FIAP_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FIAP_WORKERS must be an integer, got {env!r}") from None
    return 1


def _out_dir(args, cfg: ExperimentConfig | None, default: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if os.environ.get("FIAP_OUT_DIR"):
        return Path(os.environ["FIAP_OUT_DIR"])
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return Path(default)


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig | None, files: list[str], extra: dict | None = None) -> None:
    manifest: dict[str, Any] = {
        "package": "fiap",
        "version": __version__,
        "command": command,
        "experiment": None if cfg is None else cfg.raw,
        "master_seed": None if cfg is None else cfg.master_seed,
        "files": sorted(files),
    }
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "fiap-out")
    workers = _workers(args)
    files = []
    for M in sorted(cfg.M):
        log.info("simulating M=%d, %d runs", M, cfg.runs)
        archive = run_monte_carlo(cfg.run_config(M), workers=workers)
        sub = f"M{M}"
        archive.write(out / sub)
        files += [f"{sub}/archive.csv", f"{sub}/manifest.json"]
    _write_manifest(out, "simulate", cfg, files, {"seed_override": args.seed})
    print(json.dumps({"out": str(out), "files": sorted(files)}))
    return EXIT_PASS


def _write_suite(out: Path, command: str, cfg: ExperimentConfig, result: SuiteResult, args) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    (out / "report.csv").write_text(result.to_csv())
    _write_manifest(out, command, cfg, ["report.csv", "report.json"], {"seed_override": args.seed})
    for rep in result.reports:
        log.info("%s", rep.summary())
    print(json.dumps({"suite": result.name, "passed": result.passed, "out": str(out)}))
    return EXIT_PASS if result.passed else EXIT_FAIL


def cmd_verify_ph(args) -> int:
    cfg = _load(args)
    if cfg.kind != "verify-ph":
        raise ConfigError(f"field 'kind': verify-ph needs kind 'verify-ph', got {cfg.kind!r}")
    result = verify_ph(cfg, workers=_workers(args))
    return _write_suite(_out_dir(args, cfg, "fiap-out"), "verify-ph", cfg, result, args)


def cmd_vector_ph(args) -> int:
    cfg = _load(args)
    if cfg.kind != "vector-ph":
        raise ConfigError(f"field 'kind': vector-ph needs kind 'vector-ph', got {cfg.kind!r}")
    result = vector_ph(cfg)
    return _write_suite(_out_dir(args, cfg, "fiap-out"), "vector-ph", cfg, result, args)


def cmd_solve_rate(args) -> int:
    cfg = None
    b, mu, K = args.b, args.mu, args.K
    if args.config:
        cfg = load_config(args.config)
        b = cfg.b if b is None else b
        mu = cfg.mu if mu is None else mu
        K = cfg.K if K is None else K
        args.ode = args.ode or cfg.ode
    if None in (b, mu, K):
        raise ConfigError("solve-rate needs b, mu and K (flags or config)")
    try:
        params = solve_counting_rate(b, mu, K)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    row: dict[str, Any] = {
        "b": b, "mu": mu, "K": K, "beta": params.beta, "a": params.a, "c": params.c,
        "residual": params.residual, "sign_changes": params.sign_changes,
    }
    print(f"beta = {params.beta:.15g}  a = {params.a:.6g}  c = {params.c:.6g}  residual = {params.residual:.2e}",
          file=sys.stderr)
    if args.ode:
        sol = integrate_counting_ode(params)
        pick = np.unique(np.searchsorted(sol.z, np.linspace(sol.z[0], 1.0, 11)).clip(0, sol.z.size - 1))
        row["ode"] = {"z": sol.z[pick].tolist(), "G": sol.G[pick].tolist(), "abs_G1_minus_1": sol.g1_error}
        print(f"|G(1) - 1| = {sol.g1_error:.2e}", file=sys.stderr)
    print(json.dumps(row))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rate.json").write_text(json.dumps(row, indent=2) + "\n")
        _write_manifest(out, "solve-rate", cfg, ["rate.json"], {"arguments": {"b": b, "mu": mu, "K": K, "ode": args.ode}})
    return EXIT_PASS


def cmd_list_instances(args) -> int:
    for name in INSTANCE_NAMES:
        print(f"{name}\t{INSTANCE_HELP[name]}")
    return EXIT_PASS


def cmd_validate(args) -> int:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if isinstance(doc, dict) and "kind" in doc:
        ExperimentConfig.from_dict(doc, path.parent)
        print(json.dumps({"valid": True, "document": "experiment"}))
    else:
        spec_from_dict(doc.get("spec", doc) if isinstance(doc, dict) else doc)
        print(json.dumps({"valid": True, "document": "spec"}))
    return EXIT_PASS


COMMANDS = {
    "simulate": cmd_simulate,
    "verify-ph": cmd_verify_ph,
    "vector-ph": cmd_vector_ph,
    "solve-rate": cmd_solve_rate,
    "list-instances": cmd_list_instances,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SpecError, ArchiveError) as exc:
        print(f"fiap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationError, ConvergenceError, OdeIntegrationError) as exc:
        print(f"fiap {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
