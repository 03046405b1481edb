"""Command-line driver: ``vdnewton study`` and ``vdnewton postproc``."""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .experiments import (
    ConfigError,
    ExperimentConfig,
    emit,
    emit_matrix,
    run_convergence_study,
    run_postproc_matrix,
)
from .ssn import SsnConfig

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3
SSN_KEYS = {f.name for f in fields(SsnConfig)}


def parse_levels(text: str) -> tuple[int, int]:
    """``"3:7"`` or ``"5"`` to an inclusive level range."""
    try:
        if ":" in text:
            lo, hi = (int(x) for x in text.split(":"))
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigError(f"bad level range {text!r}; expected LO:HI") from None
    return lo, hi


def parse_alphas(text: str) -> list[float]:
    try:
        return [float(a) for a in str(text).split(",") if a.strip()]
    except ValueError:
        raise ConfigError(f"bad alpha list {text!r}") from None


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` file (an ``[experiment]`` header is optional)."""
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        out.update(parser[section])
    return out


def _ssn_value(key: str, value: str):
    if key in ("max_newton", "max_fixed_point", "cg_max"):
        return None if value.lower() == "none" else int(value)
    return float(value)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = read_config(args.config) if args.config else {}
    flags = {
        "example": args.example,
        "alpha": args.alpha,
        "levels": args.levels,
        "solver": args.solver,
        "v0": args.v0,
        "tol": args.tol,
        "out": args.out,
        "format": args.format,
        "z_refine": args.z_refine,
    }
    raw.update({k: v for k, v in flags.items() if v is not None})

    kw: dict = {}
    ssn: dict = {}
    try:
        for key, value in raw.items():
            value = str(value)
            if key == "example":
                kw["example"] = value
            elif key in ("alpha", "alphas"):
                kw["alphas"] = parse_alphas(value)
            elif key == "levels":
                kw["levels"] = parse_levels(value)
            elif key == "solver":
                kw["solver"] = value
            elif key == "v0":
                kw["v0"] = float(value)
            elif key == "tol":
                ssn["stop_tol"] = float(value)
            elif key == "out":
                kw["out"] = value
            elif key == "format":
                kw["fmt"] = value
            elif key == "z_refine":
                kw["z_refine"] = int(value)
            elif key == "postprocess_tol":
                kw["postprocess_tol"] = float(value)
            elif key == "samples":
                kw["samples"] = value.lower() in ("1", "true", "yes", "on")
            elif key in SSN_KEYS:
                ssn[key] = _ssn_value(key, value)
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if args.samples:
        kw["samples"] = True
    return ExperimentConfig(ssn=ssn, **kw)


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--example", choices=["dirichlet", "neumann"])
    common.add_argument("--alpha", help="comma-separated list of alphas")
    common.add_argument("--levels", help="refinement levels LO:HI; h = sqrt(2)/2^(level+1)")
    common.add_argument("--solver", help="undamped, damped, fixedpoint or postprocess")
    common.add_argument("--v0", type=float, help="constant initial control")
    common.add_argument("--tol", type=float, help="stopping tolerance on the a posteriori bound")
    common.add_argument("--out", help="output directory for tables and run logs")
    common.add_argument("--format", help="csv or text (default csv)")
    common.add_argument("--z-refine", dest="z_refine", type=int,
                        help="extra refinements used to approximate S r in the target")
    common.add_argument("--samples", action="store_true",
                        help="also write control samples and cut segments on the finest level")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="vdnewton",
        description="Semismooth Newton solver for variationally discretized control problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("study", parents=[common], help="error / EOC table over a level range")
    sub.add_parser("postproc", parents=[common],
                   help="EOC matrix of the postprocessing scheme (rows h, columns alpha)")
    return parser


def _study(cfg: ExperimentConfig) -> int:
    ok = True
    ext = "csv" if cfg.fmt == "csv" else "txt"
    for alpha in cfg.alphas:
        table = run_convergence_study(cfg, alpha)
        path = Path(cfg.out) / f"{cfg.example}_{cfg.solver}_a{alpha:g}.{ext}" if cfg.out else None
        text = emit(table, path, cfg.fmt)
        if len(cfg.alphas) > 1:
            print(f"# alpha = {alpha:g}")
        print(text, end="")
        ok &= table.all_converged
    return EXIT_OK if ok else EXIT_SOLVER


def _postproc(cfg: ExperimentConfig) -> int:
    hs, alphas, mat = run_postproc_matrix(cfg)
    path = Path(cfg.out) / f"{cfg.example}_postproc_eoc.csv" if cfg.out else None
    print(emit_matrix(hs, alphas, mat, path), end="")
    return EXIT_SOLVER if (mat != mat).any() else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 means a solver failure
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = build_config(args)
        if cfg.out:
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "study":
        return _study(cfg)
    return _postproc(cfg)


if __name__ == "__main__":
    sys.exit(main())
