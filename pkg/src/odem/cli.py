"""Command-line pipeline: simulate -> run -> sweep -> select -> report.

Every command takes explicit paths. Configuration comes from one YAML file
(``--config``); without it the built-in defaults are used. Exit codes: 0 on
success, 1 on a failed run or missing input, 2 on an invalid configuration.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import CONFIG_SCHEMA_VERSION, ConfigError, dump_default_config, load_config
from .filtering import OdemAbort, run_odem
from .harness import (
    SweepGrid,
    default_burn_in,
    load_sweep,
    mse,
    report,
    save_sweep,
    select_all,
    select_best,
    sweep,
)
from .io import FormatError, load_dataset, save_dataset, write_record
from .simulate import simulate_dataset

log = logging.getLogger("odem")


class InputError(RuntimeError):
    pass


def _dataset(path):
    if not Path(path).exists():
        raise InputError(f"dataset file not found: {path}")
    return load_dataset(path)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    d = cfg.dataset
    ds = simulate_dataset(T=d.T, dt=d.dt, x0=d.x0, state_noise=d.state_noise.spec(),
                          obs_noise=d.obs_noise.spec())
    ds.provenance["config_schema_version"] = CONFIG_SCHEMA_VERSION
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, args.out)
    print(f"N={ds.n_steps} state_seed={d.state_noise.seed} obs_seed={d.obs_noise.seed} -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    ds = _dataset(args.dataset)
    model, prior, ocfg = cfg.model.spec(), cfg.model.prior(), cfg.odem.config()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    try:
        rec = run_odem(ds, ocfg, model, prior)
    except OdemAbort as exc:
        write_record(exc.record, args.out)
        print(f"run aborted at {exc}; partial record -> {args.out}", file=sys.stderr)
        return 1
    write_record(rec, args.out)
    burn = default_burn_in(ds.n_steps, cfg.sweep.burn_in_fraction)
    err = mse(ds.true_states, rec.positions(), burn) if ds.n_steps else float("nan")
    print(f"FA={rec.final_fa:.6g} MSE={err:.6g} events={len(rec.event_j) - 1} -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    ds = _dataset(args.dataset)
    base = cfg.odem.config()
    full = args.full_grid or cfg.sweep.grid == "full"
    grid = (SweepGrid.full(base, cfg.sweep.include_sigma_lambda) if full else SweepGrid.desk(base))
    workers = args.workers or cfg.sweep.workers
    out = Path(args.out)
    table = sweep(ds, cfg.model.spec(), grid, workers=workers, out_dir=out,
                  prior=cfg.model.prior(),
                  burn_in=default_burn_in(ds.n_steps, cfg.sweep.burn_in_fraction))
    table.meta["config_schema_version"] = CONFIG_SCHEMA_VERSION
    path = out / "sweep.txt"
    save_sweep(table, path)
    n_ok = sum(r["status"] == "ok" for r in table.rows)
    print(f"{n_ok}/{len(table)} configurations succeeded -> {path}")
    return 0


def _load_table(path, config):
    if not Path(path).exists():
        raise InputError(f"sweep table not found: {path}")
    return load_sweep(path, load_config(config).odem.config())


def cmd_select(args) -> int:
    table = _load_table(args.table, args.config)
    try:
        row, _ = select_best(table, args.kx, args.ratio)
    except LookupError as exc:
        raise InputError(str(exc)) from None
    keys = " ".join(f"{k}={row['config'][k]}" for k in
                    ("k_x", "kappa", "inter_em", "beta_lambda", "beta_theta", "C"))
    print(f"{keys} FA={row['fa']:.6g} MSE={row['mse']:.6g} record={row['record'] or '-'}")
    return 0


def cmd_report(args) -> int:
    table = _load_table(args.table, args.config)
    ds = _dataset(args.dataset) if args.dataset else None
    sels = select_all(table)
    if not sels:
        raise InputError(f"{args.table}: no successful rows to report")
    paths = report(sels, args.out, ds)
    print(f"wrote {len(paths)} report files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odem", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a GLV dataset")
    s.add_argument("--config", help="YAML configuration (defaults if omitted)")
    s.add_argument("--out", required=True, help="dataset file to write")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", help="one ODEM pass over a dataset")
    s.add_argument("--dataset", required=True, help="dataset file from 'simulate'")
    s.add_argument("--config", help="YAML configuration (defaults if omitted)")
    s.add_argument("--out", required=True, help="run record file to write")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a tuning grid and tabulate FA and MSE")
    s.add_argument("--dataset", required=True, help="dataset file from 'simulate'")
    s.add_argument("--config", help="YAML configuration (defaults if omitted)")
    s.add_argument("--out", required=True, help="output directory for sweep.txt and records/")
    s.add_argument("--workers", type=int, default=0, help="worker processes (default: from config)")
    s.add_argument("--full-grid", action="store_true", help="use the 1512-point grid instead of the desk grid")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("select", help="lowest-FA configuration for one order of motion and ratio")
    s.add_argument("--table", required=True, help="sweep table from 'sweep'")
    s.add_argument("--kx", type=int, required=True, help="order of motion k_x")
    s.add_argument("--ratio", type=float, required=True, help="precision prior ratio C")
    s.add_argument("--config", help="YAML configuration used for the sweep")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("report", help="write plot-ready tables for every selection")
    s.add_argument("--table", required=True, help="sweep table from 'sweep'")
    s.add_argument("--dataset", help="dataset file, for true states in the state tables")
    s.add_argument("--config", help="YAML configuration used for the sweep")
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("default-config", help="print the default configuration as YAML")
    s.set_defaults(func=lambda a: print(dump_default_config(), end="") or 0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (InputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
