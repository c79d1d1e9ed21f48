"""File formats: long-format CSV, a binary trajectory format, JSON and manifests.

Floats are written with 17 significant digits, so parsing and re-emitting a
file reproduces it byte for byte. Every write goes to a temporary file in the
target directory followed by ``os.replace``.

Binary trajectory layout (all little-endian)::

    8 bytes   magic  b"FDETRJ01"
    uint64    T      number of stored times
    uint64    M      number of nodes (N + 1)
    T doubles        times
    M doubles        nodes
    T*M doubles      states, row-major (time, node)
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import RadialGrid
from .parabolic import SpaceTimeField

MAGIC = b"FDETRJ01"


def fmt(x) -> str:
    return "%.17g" % x


def write_atomic(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return fmt(float(x))
    return "" if x is None else str(x)


def table_csv(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_cell(x) for x in row) + "\n")
    return buf.getvalue()


def write_table_csv(path, columns, rows) -> Path:
    return write_atomic(path, table_csv(columns, rows))


def _parse(x: str):
    if x in ("true", "false"):
        return x == "true"
    if x == "":
        return None
    try:
        return int(x)
    except ValueError:
        pass
    try:
        return float(x)
    except ValueError:
        return x


def read_table_csv(path) -> tuple[list, list]:
    """Inverse of :func:`write_table_csv`: ``(columns, rows)`` with typed cells."""
    text = Path(path).read_text()
    lines = text.split("\n")
    if not lines or not lines[0]:
        raise ValidationError("empty CSV", str(path))
    columns = lines[0].split(",")
    rows = [[_parse(x) for x in line.split(",")] for line in lines[1:] if line]
    return columns, rows


# trajectories ---------------------------------------------------------------


def trajectory_csv(f: SpaceTimeField) -> str:
    T, M = f.states.shape
    t = np.repeat(f.times, M)
    r = np.tile(f.grid.nodes, T)
    u = f.states.ravel()
    lines = ["t,r,u"]
    lines += [f"{fmt(a)},{fmt(b)},{fmt(c)}" for a, b, c in zip(t, r, u)]
    return "\n".join(lines) + "\n"


def write_trajectory_csv(path, f: SpaceTimeField) -> Path:
    return write_atomic(path, trajectory_csv(f))


def read_trajectory_csv(path) -> SpaceTimeField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        if fh.readline().strip() != "t,r,u":
            raise ValidationError("trajectory CSV header must be t,r,u", str(path))
    M = int(np.sum(data[:, 0] == data[0, 0]))
    times = data[::M, 0]
    if data.shape[0] % M or np.any(data[:, 1].reshape(-1, M) != data[:M, 1]):
        raise ValidationError("trajectory CSV is not a full (t, r) product", str(path))
    nodes = data[:M, 1]
    return SpaceTimeField(RadialGrid(nodes), times, data[:, 2].reshape(times.size, M))


def trajectory_bytes(f: SpaceTimeField) -> bytes:
    T, M = f.states.shape
    head = MAGIC + np.array([T, M], dtype="<u8").tobytes()
    return head + b"".join(np.asarray(a, dtype="<f8").tobytes() for a in (f.times, f.grid.nodes, f.states))


def write_trajectory_bin(path, f: SpaceTimeField) -> Path:
    return write_atomic(path, trajectory_bytes(f))


def read_trajectory_bin(path) -> SpaceTimeField:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValidationError("not a trajectory file (bad magic)", str(path))
    T, M = (int(x) for x in np.frombuffer(raw, dtype="<u8", count=2, offset=8))
    body = np.frombuffer(raw, dtype="<f8", offset=24)
    if body.size != T + M + T * M:
        raise ValidationError("truncated trajectory file", str(path))
    return SpaceTimeField(RadialGrid(body[T : T + M].copy()), body[:T].copy(), body[T + M :].reshape(T, M).copy())


# JSON and manifests -----------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def write_json(path, obj) -> Path:
    return write_atomic(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, files, scenario: dict, summary: dict | None = None) -> Path:
    """``manifest.json`` listing each emitted file with size and sha256, plus an optional summary."""
    out_dir = Path(out_dir)
    entries = []
    for f in sorted(set(Path(f).name for f in files)):
        p = out_dir / f
        entries.append({"path": f, "bytes": p.stat().st_size, "sha256": sha256_file(p)})
    doc = {"scenario": scenario, "files": entries}
    if summary is not None:
        doc["summary"] = summary
    return write_json(out_dir / "manifest.json", doc)
