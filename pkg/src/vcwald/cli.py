"""Command-line interface.

    vcwald simulate  --config c.yaml --out dir
    vcwald test      --config c.yaml [--format jsonl]
    vcwald mc-table  --config c.yaml --reps 1000 --threads 8 --out results
    vcwald clt-probe --config c.yaml
    vcwald curve     --config c.yaml --out results

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .design import selector
from .dgp import clt_probe, export_dataset, generate
from .errors import ConfigError, DataError, NumericalError
from .harness import config as cfgmod
from .harness.data import attach_matrices, crs_curves, crs_transform, load_csv
from .harness.emit import FORMATS, EXTENSIONS, emit, footnotes, table_rows
from .harness.experiment import run_size_power
from .wald import block_covariance, estimate_curve, fit_model, report_from_fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("vcwald.cli")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML key-value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--reps", type=int, help="override the number of replications")
    common.add_argument("--out", type=Path, help="output directory (default: stdout)")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--format", choices=FORMATS, default="csv", help="table format")
    parser = argparse.ArgumentParser(prog="vcwald", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "generate one Monte Carlo dataset and export it as CSV"),
                       ("test", "run one Wald test on CSV data or a simulated dataset"),
                       ("mc-table", "empirical size or power over an experiment grid"),
                       ("clt-probe", "moments of a standardized quadratic form"),
                       ("curve", "fitted coefficient curves with pointwise bands")):
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _config(args) -> dict:
    return cfgmod.load_config(args.config) if args.config else {"_dir": "."}


def _write(args, stem: str, rows, notes=()):
    path = args.out / f"{stem}{EXTENSIONS[args.format]}" if args.out else None
    emit(rows, args.format, path=path, stream=None if path else sys.stdout, notes=notes)
    if path:
        print(path)


def _dataset(cfg: dict, args):
    """(dataset, default variance mode) from the config's data file or the DGP."""
    path = cfgmod.data_path(cfg)
    if path is None:
        dgp = cfgmod.dgp_from_config(cfg, seed=args.seed)
        return generate(dgp, np.random.default_rng(dgp.seed)), "unit"
    ell = cfg.get("ell")
    eta = float(cfg.get("eta", cfgmod.DEFAULT_ETA))
    ds = load_csv(path, cfgmod.schema_from_config(cfg), ell=ell, eta=eta)
    if ds.meta.get("dropped_na"):
        log.warning("dropped %d row(s) with missing values", ds.meta["dropped_na"])
    ds = attach_matrices(ds, cfgmod.matrix_paths(cfg, "weights"),
                         cfgmod.matrix_paths(cfg, "distances"), ell=ell, eta=eta)
    if cfg.get("crs"):
        ds = crs_transform(ds)
    return ds, "estimated"


def cmd_simulate(args, cfg):
    dgp = cfgmod.dgp_from_config(cfg, seed=args.seed)
    ds = generate(dgp, np.random.default_rng(dgp.seed))
    out = args.out or Path("dataset")
    print(export_dataset(ds, out))


def cmd_test(args, cfg):
    ds, variance = _dataset(cfg, args)
    spec = cfgmod.spec_from_config(cfg, ds.P.shape[1], default_variance=variance)
    if cfg.get("crs") and spec.component is None and not spec.test_id.startswith("W4-mu"):
        spec = type(spec)(**{**spec.__dict__, "component": 2})
    rep = report_from_fit(fit_model(ds, spec), ds)
    row = {k: v for k, v in asdict(rep).items() if k != "meta"}
    row["dropped_na"] = ds.meta.get("dropped_na", 0)
    _write(args, "test", [row])


def cmd_mc_table(args, cfg):
    plan = cfgmod.plan_from_config(cfg, seed=args.seed, reps=args.reps)
    table = run_size_power(plan, threads=args.threads)
    _write(args, "mc_table", table_rows(table), notes=footnotes(table))
    for note in footnotes(table):
        log.warning(note)
    if any(r.failed for r in table.rows):
        log.warning("some grid points exceeded the failure threshold")


def cmd_clt_probe(args, cfg):
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    reps = args.reps if args.reps is not None else int(cfg.get("replications", 10000))
    rep = clt_probe(int(cfg.get("J", 50)), int(cfg.get("clt_n", 2000)), reps,
                    np.random.default_rng(seed), law=str(cfg.get("law", "V1")))
    _write(args, "clt_probe", [asdict(rep)])


def cmd_curve(args, cfg):
    ds, variance = _dataset(cfg, args)
    spec = cfgmod.spec_from_config(cfg, ds.P.shape[1], default_variance=variance)
    mf = fit_model(ds, spec)
    grid = np.linspace(ds.Z.min(), ds.Z.max(), int(cfg.get("grid_points", 50)))
    level = float(cfg.get("level", 0.95))
    ncomp = len(mf.bundle.basis.block_layout)
    curves = []
    for k in range(ncomp):
        cov = block_covariance(mf, selector(mf.bundle, "varying", k), ds)
        curves.append(estimate_curve(mf.fit, mf.bundle, k, grid, cov=cov, level=level))
    rows = []
    if cfg.get("crs"):
        d1, d2, total = crs_curves(curves[2].values, curves[1].values)
        lo, hi = curves[2].lo + 1.0, curves[2].hi + 1.0
        for i, z in enumerate(grid):
            rows.append({"z": z, "delta1_hat": d1[i], "delta2_hat": d2[i], "sum": total[i],
                         "lo95": lo[i], "hi95": hi[i]})
    else:
        for i, z in enumerate(grid):
            rec = {"z": z}
            for c in curves:
                tag = c.component + 1
                rec[f"delta{tag}_hat"] = c.values[i]
                rec[f"lo95_{tag}"] = c.lo[i]
                rec[f"hi95_{tag}"] = c.hi[i]
            rows.append(rec)
    _write(args, "curve", [{k: float(v) for k, v in r.items()} for r in rows])


COMMANDS = {"simulate": cmd_simulate, "test": cmd_test, "mc-table": cmd_mc_table,
            "clt-probe": cmd_clt_probe, "curve": cmd_curve}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.reps is not None and args.reps < 1:
            raise ConfigError("--reps must be >= 1")
        COMMANDS[args.command](args, _config(args))
    except ConfigError as exc:
        print(f"vcwald: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"vcwald: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"vcwald: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
