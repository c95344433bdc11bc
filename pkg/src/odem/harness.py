"""Grid sweeps, free-action model selection, MSE and plot-ready reports.

A sweep runs ODEM once per grid point on the same dataset. Selection only ever
compares runs that share an order of motion and a precision ratio: free action
is a bound on the evidence for one data representation, and a different
``k_x`` generalises the data differently.
"""
from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .filtering import OdemAbort, OdemConfig, ParamPrior, RunRecord, run_odem
from .io import SCHEMA_VERSION, FormatError, read_record, write_record, write_sectioned
from .models import ModelSpec

log = logging.getLogger(__name__)

FULL_AXES = {
    "k_x": (2, 3),
    "kappa": (1.0, 0.5, 0.25),
    "inter_em": (64, 128, 256, 512),
    "beta_lambda": (0.0, 0.1, 0.2),
    "beta_theta": (0.0, 0.1, 0.2),
    "C": (1 / 50, 1 / 25, 1 / 10, 1.0, 10.0, 25.0, 50.0),
}
FULL_SIGMA_LAMBDA = (0.1, 0.5)

KEY_FIELDS = ("k_x", "kappa", "inter_em", "beta_lambda", "beta_theta", "C",
              "sigma_lambda_x", "sigma_lambda_y")
RESULT_FIELDS = ("fa", "accuracy", "complexity", "mse", "mse_all")


@dataclass(frozen=True)
class SweepGrid:
    """An explicit list of run configurations, all sharing ``base`` elsewhere."""

    configs: tuple

    def __post_init__(self):
        keys = [c.key() for c in self.configs]
        if len(set(keys)) != len(keys):
            raise ValueError("grid contains duplicate configurations")

    def __len__(self):
        return len(self.configs)

    @classmethod
    def product(cls, base: OdemConfig | None = None, **axes) -> "SweepGrid":
        """Cartesian product of ``axes`` (field name -> values) over ``base``."""
        base = base or OdemConfig()
        names = list(axes)
        configs = [replace(base, **dict(zip(names, combo)))
                   for combo in itertools.product(*(axes[n] for n in names))]
        return cls(tuple(configs))

    @classmethod
    def full(cls, base: OdemConfig | None = None, include_sigma_lambda: bool = False) -> "SweepGrid":
        """The full tuning grid: 1512 configurations.

        With ``include_sigma_lambda`` both log-precision prior widths are crossed
        in as well (x4).
        """
        axes = dict(FULL_AXES)
        if include_sigma_lambda:
            axes["sigma_lambda_x"] = FULL_SIGMA_LAMBDA
            axes["sigma_lambda_y"] = FULL_SIGMA_LAMBDA
        return cls.product(base, **axes)

    @classmethod
    def desk(cls, base: OdemConfig | None = None) -> "SweepGrid":
        """24 configurations that fit in CI; both forgetting rates move together."""
        base = base or OdemConfig()
        configs = []
        for k_x, inter, beta, C in itertools.product((2, 3), (128, 512), (0.0, 0.1), (0.1, 1.0, 10.0)):
            configs.append(replace(base, k_x=k_x, kappa=0.5, inter_em=inter,
                                   beta_lambda=beta, beta_theta=beta, C=C))
        return cls(tuple(configs))


def mse(true_states, inferred, burn_in: int = 0) -> float:
    """Mean squared error over every entry, after dropping ``burn_in`` leading rows."""
    a = np.asarray(true_states, dtype=float)
    b = np.asarray(inferred, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not 0 <= burn_in < max(a.shape[0], 1):
        raise ValueError(f"burn_in {burn_in} out of range for {a.shape[0]} rows")
    return float(np.mean((a[burn_in:] - b[burn_in:]) ** 2))


def default_burn_in(n_steps: int, fraction: float = 0.1) -> int:
    return int(fraction * n_steps)


def record_name(cfg: OdemConfig) -> str:
    k = dict(zip(KEY_FIELDS, cfg.key()))
    return ("kx{k_x}_kappa{kappa:g}_inter{inter_em}_bl{beta_lambda:g}_bt{beta_theta:g}"
            "_C{C:.6g}_slx{sigma_lambda_x:g}_sly{sigma_lambda_y:g}").format(**k)


@dataclass
class SweepResult:
    """One row per configuration, sorted by configuration key."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def sorted(self) -> "SweepResult":
        return SweepResult(sorted(self.rows, key=lambda r: r["key"]), dict(self.meta))

    def where(self, **conds) -> list:
        return [r for r in self.rows if all(r["config"][k] == v for k, v in conds.items())]


def _row(cfg: OdemConfig, status: str, record: RunRecord | None, ds, burn_in: int,
         path: str, message: str = "") -> dict:
    row = {"key": cfg.key(), "config": cfg.to_dict(), "status": status,
           "record": path, "message": message}
    if record is not None and status == "ok":
        pos = record.positions()
        row.update(fa=record.final_fa, accuracy=record.final_accuracy,
                   complexity=record.final_complexity,
                   mse=mse(ds.true_states, pos, burn_in),
                   mse_all=mse(ds.true_states, pos))
    else:
        row.update({k: float("nan") for k in RESULT_FIELDS})
    return row


def _run_one(args):
    ds, cfg, model, prior, out_dir, burn_in = args
    path = ""
    if out_dir is not None:
        path = str(Path(out_dir) / "records" / f"{record_name(cfg)}.txt")
    try:
        rec = run_odem(ds, cfg, model, prior)
        status, message = "ok", ""
    except OdemAbort as exc:
        rec, status, message = exc.record, "failed", str(exc)
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec, status, message = None, "failed", f"{type(exc).__name__}: {exc}"
    if path and rec is not None:
        write_record(rec, path)
    elif path:
        path = ""
    return _row(cfg, status, rec, ds, burn_in, path, message)


def sweep(ds, model: ModelSpec, grid: SweepGrid, workers: int = 1, out_dir=None,
          prior: ParamPrior | None = None, burn_in: int | None = None) -> SweepResult:
    """Run every configuration in ``grid``; failures become rows, never exceptions.

    Records are written under ``out_dir/records`` when ``out_dir`` is given.
    The result does not depend on ``workers``.
    """
    if len(grid) == 0:
        raise ValueError("grid is empty")
    prior = prior or ParamPrior.default(model)
    burn_in = default_burn_in(ds.n_steps) if burn_in is None else burn_in
    if out_dir is not None:
        (Path(out_dir) / "records").mkdir(parents=True, exist_ok=True)
    jobs = [(ds, cfg, model, prior, out_dir, burn_in) for cfg in grid.configs]
    if workers <= 1:
        rows = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    n_failed = sum(r["status"] != "ok" for r in rows)
    if n_failed:
        log.warning("%d of %d configurations failed", n_failed, len(rows))
    meta = {"model": model.describe(), "prior": {"mean": list(prior.mean), "var": list(prior.var)},
            "burn_in": burn_in, "n_steps": ds.n_steps}
    return SweepResult(rows, meta).sorted()


def select_best(table: SweepResult, k_x: int, C: float):
    """Lowest final free action among successful rows with this ``k_x`` and ``C``.

    Returns ``(row, record)``; ``record`` is loaded from the row's record file
    when one exists, else ``None``.
    """
    cands = [r for r in table.rows
             if r["status"] == "ok" and r["config"]["k_x"] == k_x
             and np.isclose(r["config"]["C"], C, rtol=1e-12, atol=0)]
    if not cands:
        raise LookupError(f"no successful rows with k_x={k_x}, C={C}")
    best = min(cands, key=lambda r: (r["fa"], tuple(r["key"])))
    record = read_record(best["record"]) if best["record"] and Path(best["record"]).exists() else None
    return best, record


def select_all(table: SweepResult) -> dict:
    """``select_best`` for every (k_x, C) stratum that has a successful row."""
    strata = sorted({(r["config"]["k_x"], r["config"]["C"]) for r in table.rows if r["status"] == "ok"})
    return {s: select_best(table, *s) for s in strata}


# sweep table files

_TABLE_KIND = "odem-sweep"


def save_sweep(table: SweepResult, path) -> None:
    cols = list(KEY_FIELDS) + list(RESULT_FIELDS) + ["status", "record"]
    lines = [f"# {_TABLE_KIND} {SCHEMA_VERSION}", "# " + json.dumps(table.meta, sort_keys=True),
             "## runs", "# columns: " + " ".join(cols)]
    for r in table.rows:
        vals = ["%.17g" % v if isinstance(v, float) else str(v) for v in r["key"]]
        vals += ["%.17g" % r[k] for k in RESULT_FIELDS]
        vals += [r["status"], r["record"] or "-"]
        lines.append(" ".join(vals))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def load_sweep(path, base: OdemConfig | None = None) -> SweepResult:
    """Read a sweep table; non-key configuration fields are taken from ``base``."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split()[1:2] != [_TABLE_KIND]:
        raise FormatError(f"{path}: not a sweep table")
    if lines[0].split()[2:3] != [str(SCHEMA_VERSION)]:
        raise FormatError(f"{path}: unsupported schema version in {lines[0]!r}")
    try:
        meta = json.loads(lines[1][2:])
    except (IndexError, json.JSONDecodeError):
        raise FormatError(f"{path}: malformed metadata block") from None
    base = base or OdemConfig()
    cols = None
    rows = []
    for ln, line in enumerate(lines[2:], start=3):
        if line.startswith("# columns:"):
            cols = line[len("# columns:"):].split()
            continue
        if line.startswith("#") or not line.strip():
            continue
        parts = line.split()
        if cols is None or len(parts) != len(cols):
            raise FormatError(f"{path}:{ln}: malformed row")
        rec = dict(zip(cols, parts))
        kw = {}
        for k in KEY_FIELDS:
            kw[k] = int(rec[k]) if k in ("k_x", "inter_em") else float(rec[k])
        cfg = replace(base, **kw)
        row = {"key": cfg.key(), "config": cfg.to_dict(), "status": rec["status"],
               "record": "" if rec["record"] == "-" else rec["record"], "message": ""}
        row.update({k: float(rec[k]) for k in RESULT_FIELDS})
        rows.append(row)
    return SweepResult(rows, meta)


# reports

def _write(path, meta, cols, rows):
    write_sectioned(path, "odem-report", meta, {"data": (cols, rows)})


def bands(mean, var):
    sd = np.sqrt(np.asarray(var, dtype=float))
    mean = np.asarray(mean, dtype=float)
    return mean - 2.0 * sd, mean + 2.0 * sd


def report(selections: dict, out_dir, ds=None) -> list:
    """Write plot-ready tables for a set of selections.

    ``selections`` maps ``(k_x, C)`` to ``(row, record)`` as returned by
    ``select_best``. Four file families are written:

    * ``fa_k{k}.txt``: final FA, accuracy and complexity against C;
    * ``mse_k{k}.txt``: MSE (with and without burn-in) against C;
    * ``posterior_k{k}_C{C}.txt``: parameter and log-precision means at each
      EM event with +-2 sd bands;
    * ``states_k{k}_C{C}.txt``: inferred positions with bands, plus the true
      states when ``ds`` is given.

    Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k_x in sorted({k for k, _ in selections}):
        Cs = sorted(C for k, C in selections if k == k_x)
        rows = [selections[(k_x, C)][0] for C in Cs]
        p = out / f"fa_k{k_x}.txt"
        _write(p, {"k_x": k_x}, ["C", "fa", "accuracy", "complexity"],
               [[C, r["fa"], r["accuracy"], r["complexity"]] for C, r in zip(Cs, rows)])
        written.append(p)
        p = out / f"mse_k{k_x}.txt"
        _write(p, {"k_x": k_x}, ["C", "mse", "mse_all"],
               [[C, r["mse"], r["mse_all"]] for C, r in zip(Cs, rows)])
        written.append(p)
    for (k_x, C), (row, rec) in sorted(selections.items()):
        if rec is None:
            continue
        tag = f"k{k_x}_C{C:.6g}"
        meta = {"k_x": k_x, "C": C, "config": row["config"]}
        p_theta, d = rec.mu_theta.shape[1], rec.model["d_x"]
        cols = ["j", "t"]
        cols += [f"{s}{i + 1}" for i in range(p_theta) for s in ("theta", "theta_lo", "theta_hi")]
        cols += [f"{s}{i + 1}" for i in range(2 * d) for s in ("lambda", "lambda_lo", "lambda_hi")]
        lo_t, hi_t = bands(rec.mu_theta, rec.var_theta)
        lo_l, hi_l = bands(rec.mu_lambda, rec.var_lambda)
        data = []
        for e in range(len(rec.event_j)):
            r = [int(rec.event_j[e]), int(rec.event_t[e])]
            for i in range(p_theta):
                r += [rec.mu_theta[e, i], lo_t[e, i], hi_t[e, i]]
            for i in range(2 * d):
                r += [rec.mu_lambda[e, i], lo_l[e, i], hi_l[e, i]]
            data.append(r)
        p = out / f"posterior_{tag}.txt"
        _write(p, meta, cols, data)
        written.append(p)

        pos = rec.positions()
        lo, hi = bands(pos, rec.var_x[:, :d])
        cols = ["t"] + [f"mu{i + 1}" for i in range(d)] + [f"lo{i + 1}" for i in range(d)] \
            + [f"hi{i + 1}" for i in range(d)]
        blocks = [np.arange(rec.n_steps) * rec.dt, pos, lo, hi]
        if ds is not None:
            cols += [f"x{i + 1}" for i in range(d)]
            blocks.append(ds.true_states[:rec.n_steps])
        p = out / f"states_{tag}.txt"
        _write(p, meta, cols, np.column_stack(blocks))
        written.append(p)
    return written
