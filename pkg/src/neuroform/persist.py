"""Record, summary, and manifest persistence.

Record CSV layout (schema v1): two comment lines carrying the schema tag
and the run metadata as JSON, then a header row and one row per recorded
sample. Floats are written with repr precision so a read-back record is
bit-identical. Readers reject unknown schema versions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .engine import RECORD_SCHEMA_VERSION, SimRecord
from .exceptions import WeightFormatError

_SCHEMA_TAG = f"neuroform.simrecord v{RECORD_SCHEMA_VERSION}"


def _axis_names(n: int) -> list[str]:
    return list("xyz")[:n] if n <= 3 else [f"c{k}" for k in range(n)]


def record_columns(n_agents: int, state_dim: int) -> list[str]:
    ax = _axis_names(state_dim)
    cols = ["t"]
    for j in range(1, n_agents + 1):
        cols += [f"pos_a{j}_{a}" for a in ax]
    for j in range(1, n_agents + 1):
        cols += [f"vel_a{j}_{a}" for a in ax]
    cols += [f"leader_pos_{a}" for a in ax]
    cols += [f"leader_vel_{a}" for a in ax]
    cols += [f"leader_acc_{a}" for a in ax]
    for name in ("u", "unn", "e1", "e1dot", "e2", "delta1"):
        for j in range(1, n_agents + 1):
            cols += [f"{name}_a{j}_{a}" for a in ax]
    cols += [f"dhat_a{j}" for j in range(1, n_agents + 1)]
    cols += ["ch", "g_min", "v1", "v2"]
    return cols


def write_record_csv(rec: SimRecord, path) -> None:
    path = Path(path)
    n_agents, n = rec.n_agents, rec.state_dim
    cols = record_columns(n_agents, n)
    meta = dict(rec.meta)
    meta["status"] = rec.status
    table = np.column_stack([
        rec.time, rec.x,
        rec.x0_pos, rec.x0_vel, rec.x0_acc,
        rec.u, rec.u_nn, rec.e1, rec.e1_dot, rec.e2, rec.delta1,
        rec.d_hat, rec.ch, rec.g_min, rec.v1, rec.v2,
    ])
    if table.shape[1] != len(cols):
        raise WeightFormatError(
            f"column mismatch: {table.shape[1]} values for {len(cols)} names"
        )
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_SCHEMA_TAG}\n")
        fh.write(f"# meta {json.dumps(meta, sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in table:
            writer.writerow([repr(float(v)) for v in row])


def read_record_csv(path) -> SimRecord:
    path = Path(path)
    with open(path, newline="") as fh:
        tag_line = fh.readline().strip()
        if tag_line != f"# {_SCHEMA_TAG}":
            raise WeightFormatError(
                f"{path}: unsupported record schema {tag_line!r}"
            )
        meta_line = fh.readline().strip()
        if not meta_line.startswith("# meta "):
            raise WeightFormatError(f"{path}: missing meta line")
        meta = json.loads(meta_line[len("# meta "):])
        reader = csv.reader(fh)
        cols = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    n_agents = int(meta["n_agents"])
    n = int(meta["state_dim"])
    if cols != record_columns(n_agents, n):
        raise WeightFormatError(f"{path}: column names do not match schema v1")
    table = np.asarray(rows, dtype=float).reshape(len(rows), len(cols))
    nn = n_agents * n
    idx = 0

    def take(width):
        nonlocal idx
        block = table[:, idx : idx + width]
        idx += width
        return block if width > 1 else block[:, 0]

    time_col = take(1)
    x = take(2 * nn)
    x0_pos, x0_vel, x0_acc = take(n), take(n), take(n)
    u, u_nn = take(nn), take(nn)
    e1, e1_dot, e2, delta1 = take(nn), take(nn), take(nn), take(nn)
    d_hat = take(n_agents)
    ch, g_min, v1, v2 = take(1), take(1), take(1), take(1)
    status = meta.pop("status", "completed")
    return SimRecord(
        time=time_col, x=x, x0_pos=x0_pos, x0_vel=x0_vel, x0_acc=x0_acc,
        u=u, u_nn=u_nn, e1=e1, e1_dot=e1_dot, e2=e2, delta1=delta1,
        d_hat=d_hat, ch=ch, g_min=g_min, v1=v1, v2=v2,
        status=status, meta=meta,
    )


def write_summary_json(rec: SimRecord, path, extra: dict = None) -> None:
    summary = rec.summary()
    if extra:
        summary.update(extra)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, payload: dict, stamp: bool = True) -> None:
    """Manifest JSON; the timestamp is the only non-reproducible field."""
    doc = dict(payload)
    if stamp:
        doc["written_at"] = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
