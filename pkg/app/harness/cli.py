"""
Batch driver for the solver studies.

    python -m app.harness.cli converge --example 1 --d 2 --k 1 --nmin 4 --nmax 8 --dt h --M 25 --T 2
    python -m app.harness.cli spectrum --d 2 --k 1 --N 3 --grid sparse
    python -m app.harness.cli cfl --d 2 --k 1 --N 5 --rk-order 2
    python -m app.harness.cli pattern --k 2 --N 7 --M 100
    python -m app.harness.cli krylov-study --example 1 --k 1 --N 7 --T 0.6

Flags override values read from --config (UTF-8 `key = value` lines, `#` comments).
Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

import pandas as pd
from dotenv import dotenv_values
from pydantic import ValidationError

from app.core.config import setup_logging
from app.core.errors import ConfigurationError, NumericalError
from app.harness.studies import (
    RunConfig,
    find_cfl,
    run_convergence,
    run_krylov_study,
    run_pattern,
    spectral_diagnostics,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

COMMAND_DEFAULTS = {
    "pattern": {"example": 5, "k_poly": 2, "M": 100, "integrator": "iif3"},
    "krylov-study": {"T_final": 0.6},
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value file with RunConfig fields")
    parser.add_argument("--example", type=int)
    parser.add_argument("--d", type=int)
    parser.add_argument("--k", dest="k_poly", type=int)
    parser.add_argument("--N", type=int)
    parser.add_argument("--nmin", type=int)
    parser.add_argument("--nmax", type=int)
    parser.add_argument("--grid", dest="grid_kind", choices=["sparse", "full"])
    parser.add_argument("--dt", help="'h', '<factor>h' or an absolute step")
    parser.add_argument("--T", dest="T_final", type=float)
    parser.add_argument("--M", type=int)
    parser.add_argument("--integrator", choices=["iif2", "iif3", "rk2", "rk3"])
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--v-amplitude", dest="v_amplitude", type=float)
    parser.add_argument("--perturbation", type=float)
    parser.add_argument("--times", dest="snapshot_times", type=float, nargs="+")
    parser.add_argument("--output", dest="output_dir")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--log-level", dest="log_level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgiif", description="Sparse-grid DG / Krylov IIF studies")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("converge", "L2 convergence table over a range of mesh levels"),
        ("cfl", "numerical CFL number of explicit RK2/RK3"),
        ("spectrum", "most negative eigenvalue and cond2(I - h A)"),
        ("pattern", "Schnakenberg pattern snapshots"),
        ("krylov-study", "error against the Krylov dimension M"),
    ]:
        sub = commands.add_parser(name, help=help_text)
        _add_common(sub)
        if name == "cfl":
            sub.add_argument("--rk-order", dest="rk_order", type=int, choices=[2, 3], default=2)
        if name == "krylov-study":
            sub.add_argument("--dims", type=int, nargs="+", default=None)
    return parser


def _read_config_file(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file not found: {path}")
    values = dotenv_values(path, encoding="utf-8")
    return {key.strip(): value for key, value in values.items() if value is not None}


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Command defaults, then the config file, then explicit flags."""
    merged: Dict[str, object] = dict(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        file_values = _read_config_file(args.config)
        if "snapshot_times" in file_values:
            file_values["snapshot_times"] = [float(v) for v in file_values["snapshot_times"].replace(",", " ").split()]
        merged.update(file_values)
    for field in RunConfig.model_fields:
        value = getattr(args, field, None)
        if value is not None:
            merged[field] = value
    return RunConfig(**merged)


def _write_row(cfg: RunConfig, row: Dict[str, object], name: str) -> None:
    path = cfg.output_path(name)
    pd.DataFrame([row]).to_csv(path, index=False)
    logger.info(f"Wrote {path}")


def _execute(args: argparse.Namespace, cfg: RunConfig) -> None:
    if args.command == "converge":
        table = run_convergence(cfg)
        print(table.to_string(index=False))
    elif args.command == "cfl":
        cfl = find_cfl(cfg.d, cfg.k_poly, cfg.level(), cfg.grid_kind, rk_order=args.rk_order,
                       seed=cfg.seed, sigma=cfg.sigma)
        print(f"CFL = {cfl:.3g}")
        row = {"d": cfg.d, "k_poly": cfg.k_poly, "N": cfg.level(), "grid": cfg.grid_kind.value,
               "rk_order": args.rk_order, "cfl": cfl}
        _write_row(cfg, row, f"cfl_{cfg.d}d_P{cfg.k_poly}_N{cfg.level()}_{cfg.grid_kind.value}_rk{args.rk_order}.csv")
    elif args.command == "spectrum":
        result = spectral_diagnostics(cfg.d, cfg.k_poly, cfg.level(), cfg.grid_kind, sigma=cfg.sigma)
        print(f"DOF = {result.dofs}  lambda0 = {result.lambda0:.4e}  cond2 = {result.cond2:.4e}")
        row = {"d": cfg.d, "k_poly": cfg.k_poly, "N": cfg.level(), "grid": cfg.grid_kind.value,
               "DOF": result.dofs, "lambda0": result.lambda0, "cond2": result.cond2}
        _write_row(cfg, row, f"spectrum_{cfg.d}d_P{cfg.k_poly}_N{cfg.level()}_{cfg.grid_kind.value}.csv")
    elif args.command == "pattern":
        result = run_pattern(cfg)
        for t, count in result.maxima.items():
            print(f"t = {t:.2f}: {count} local maxima")
    elif args.command == "krylov-study":
        table = run_krylov_study(cfg, dims=args.dims) if args.dims else run_krylov_study(cfg)
        print(table.to_string(index=False))


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID

    setup_logging(level=(args.log_level or "").upper() or None)
    try:
        cfg = load_run_config(args)
        _execute(args, cfg)
    except (ValidationError, ConfigurationError) as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_INVALID
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(cli_main())
