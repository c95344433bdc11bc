"""Plain-text file formats for datasets, run records and sweep tables.

Every file starts with a magic line ``# <kind> <schema version>`` followed by
one ``# {json}`` metadata line. Tables follow as ``## <section>`` markers, a
``# columns:`` line and whitespace-separated rows. Floats are written with 17
significant digits so round trips are lossless.
"""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class FormatError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17g" % v


def _write_table(fh, name: str, columns, rows):
    fh.write(f"## {name}\n")
    fh.write("# columns: " + " ".join(columns) + "\n")
    for row in rows:
        fh.write(" ".join(_fmt(v) for v in row) + "\n")


def write_sectioned(path, kind: str, meta: dict, tables: dict) -> None:
    """``tables`` maps section name -> (columns, 2-D array or list of rows)."""
    buf = io.StringIO()
    buf.write(f"# {kind} {SCHEMA_VERSION}\n")
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    for name, (cols, rows) in tables.items():
        _write_table(buf, name, cols, rows)
    Path(path).write_text(buf.getvalue())


def read_sectioned(path, kind: str):
    """Inverse of ``write_sectioned``; returns ``(meta, {section: (columns, array)})``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise FormatError(f"{path}: missing header line")
    head = lines[0][2:].split()
    if len(head) != 2 or head[0] != kind:
        raise FormatError(f"{path}: expected a {kind!r} file, found header {lines[0]!r}")
    if int(head[1]) != SCHEMA_VERSION:
        raise FormatError(f"{path}: schema version {head[1]} != supported {SCHEMA_VERSION}")
    if len(lines) < 2 or not lines[1].startswith("# {"):
        raise FormatError(f"{path}: missing metadata block")
    try:
        meta = json.loads(lines[1][2:])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed metadata block: {exc}") from None
    tables = {}
    name, cols, rows = None, None, []

    def flush():
        if name is not None:
            width = len(cols)
            try:
                arr = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(-1, width)
            except ValueError as exc:
                raise FormatError(f"{path}: section {name!r} has malformed rows: {exc}") from None
            tables[name] = (cols, arr)

    for ln, line in enumerate(lines[2:], start=3):
        if line.startswith("## "):
            flush()
            name, cols, rows = line[3:].strip(), None, []
        elif line.startswith("# columns:"):
            cols = line[len("# columns:"):].split()
        elif line.strip():
            if name is None or cols is None:
                raise FormatError(f"{path}:{ln}: data row outside a table section")
            parts = line.split()
            if len(parts) != len(cols):
                raise FormatError(f"{path}:{ln}: expected {len(cols)} columns, found {len(parts)}")
            rows.append(parts)
    flush()
    return meta, tables


def save_dataset(ds, path) -> None:
    meta = {"dt": ds.dt, "N": ds.n_steps, "provenance": ds.provenance}
    cols = ["t", "x1", "x2", "x3", "y1", "y2", "y3"]
    data = np.column_stack([ds.times, ds.true_states, ds.observations])
    write_sectioned(path, "odem-dataset", meta, {"data": (cols, data)})


def load_dataset(path):
    from .simulate import Dataset

    meta, tables = read_sectioned(path, "odem-dataset")
    for key in ("dt", "N", "provenance"):
        if key not in meta:
            raise FormatError(f"{path}: metadata is missing {key!r}")
    if not isinstance(meta["provenance"], dict) or not meta["provenance"]:
        raise FormatError(f"{path}: provenance block is empty")
    if "data" not in tables:
        raise FormatError(f"{path}: missing data section")
    _, data = tables["data"]
    if data.shape[0] != meta["N"]:
        raise FormatError(f"{path}: header says N={meta['N']} but found {data.shape[0]} rows")
    return Dataset(
        dt=float(meta["dt"]),
        times=data[:, 0].copy(),
        true_states=data[:, 1:4].copy(),
        observations=data[:, 4:7].copy(),
        provenance=meta["provenance"],
    )


def _record_columns(k_x: int, d: int, n_params: int):
    mu = [f"mu{j}_{i + 1}" for j in range(k_x) for i in range(d)]
    var = [f"var{j}_{i + 1}" for j in range(k_x) for i in range(d)]
    steps = ["t"] + mu + var + ["F", "FA", "accuracy", "complexity", "step_size"]
    events = (
        ["j", "t"]
        + [f"theta{p + 1}" for p in range(n_params)]
        + [f"var_theta{p + 1}" for p in range(n_params)]
        + [f"lambda_x{i + 1}" for i in range(d)]
        + [f"lambda_y{i + 1}" for i in range(d)]
        + [f"var_lambda_x{i + 1}" for i in range(d)]
        + [f"var_lambda_y{i + 1}" for i in range(d)]
    )
    return steps, events


def write_record(record, path) -> None:
    d = record.model["d_x"]
    n_params = len(record.model["learnable_layout"])
    step_cols, event_cols = _record_columns(record.k_x, d, n_params)
    n = record.n_steps
    steps = np.column_stack([
        np.arange(n),
        record.mu_x.reshape(n, -1),
        record.var_x.reshape(n, -1),
        record.free_energy,
        record.free_action,
        record.accuracy,
        record.complexity,
        record.step_size,
    ]) if n else np.zeros((0, len(step_cols)))
    m = len(record.event_j)
    events = np.column_stack([
        record.event_j,
        record.event_t,
        record.mu_theta.reshape(m, -1),
        record.var_theta.reshape(m, -1),
        record.mu_lambda.reshape(m, -1),
        record.var_lambda.reshape(m, -1),
    ]) if m else np.zeros((0, len(event_cols)))
    meta = {
        "config": record.config,
        "model": record.model,
        "prior": record.prior,
        "dt": record.dt,
        "k_x": record.k_x,
        "status": record.status,
        "message": record.message,
        "n_steps": n,
        "final_fa": record.final_fa,
    }
    # first two step columns and event indices are integers
    step_rows = ([int(r[0])] + list(r[1:]) for r in steps)
    event_rows = ([int(r[0]), int(r[1])] + list(r[2:]) for r in events)
    write_sectioned(path, "odem-record", meta, {
        "steps": (step_cols, step_rows),
        "events": (event_cols, event_rows),
    })


def read_record(path):
    from .filtering import RunRecord

    meta, tables = read_sectioned(path, "odem-record")
    for key in ("config", "model", "prior", "dt", "k_x", "status"):
        if key not in meta:
            raise FormatError(f"{path}: metadata is missing {key!r}")
    k_x = meta["k_x"]
    d = meta["model"]["d_x"]
    p = len(meta["model"]["learnable_layout"])
    _, steps = tables["steps"]
    _, events = tables["events"]
    nx = k_x * d
    if steps.shape[0] != meta.get("n_steps", steps.shape[0]):
        raise FormatError(f"{path}: header says n_steps={meta['n_steps']} but found {steps.shape[0]} rows")
    c = 1
    mu_x = steps[:, c:c + nx]; c += nx
    var_x = steps[:, c:c + nx]; c += nx
    F = steps[:, c]; c += 2  # skip cumulative FA
    acc = steps[:, c]; comp = steps[:, c + 1]; ds = steps[:, c + 2]
    e = 2
    mu_t = events[:, e:e + p]; e += p
    var_t = events[:, e:e + p]; e += p
    mu_l = events[:, e:e + 2 * d]; e += 2 * d
    var_l = events[:, e:e + 2 * d]
    return RunRecord(
        config=meta["config"], model=meta["model"], prior=meta["prior"], dt=meta["dt"], k_x=k_x,
        mu_x=mu_x.copy(), var_x=var_x.copy(), free_energy=F.copy(), accuracy=acc.copy(),
        complexity=comp.copy(), step_size=ds.copy(),
        event_j=events[:, 0].astype(int), event_t=events[:, 1].astype(int),
        mu_theta=mu_t.copy(), var_theta=var_t.copy(), mu_lambda=mu_l.copy(), var_lambda=var_l.copy(),
        status=meta["status"], message=meta.get("message", ""),
    )
