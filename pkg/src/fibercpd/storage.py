"""On-disk formats: the DTEN tensor container, the DFAC factor container,
and the CSV metric traces.

DTEN layout (little-endian throughout):
    bytes 0-3   magic "DTEN"
    bytes 4-5   format version, u16 (currently 1)
    bytes 6-7   order N, u16
    next 8*N    dims, u64 each
    rest        prod(dims) float64 values, first mode fastest

DFAC layout (truth-factor sidecar):
    bytes 0-3   magic "DFAC"
    bytes 4-5   format version, u16 (currently 1)
    bytes 6-7   order N, u16
    bytes 8-15  rank R, u64
    next 8*N    dims, u64 each
    rest        per mode, I_n*R float64 values in column-major order

CSV traces carry a header row `trial,full_iter,work_units,m_k,wall_seconds`,
rows sorted by (trial, full_iter), preceded by `#`-prefixed `key=value`
comment lines echoing the run configuration.  All columns except
wall_seconds are deterministic under a fixed seed.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .experiments import RunRecord
from .tensor import DenseTensor, KruskalModel

TENSOR_MAGIC = b"DTEN"
FACTOR_MAGIC = b"DFAC"
FORMAT_VERSION = 1
CSV_COLUMNS = ("trial", "full_iter", "work_units", "m_k", "wall_seconds")


class FileFormatError(ValueError):
    """Malformed or truncated container file."""


def write_tensor(t: DenseTensor, path) -> None:
    header = struct.pack("<4sHH", TENSOR_MAGIC, FORMAT_VERSION, t.order)
    header += np.asarray(t.dims, dtype="<u8").tobytes()
    Path(path).write_bytes(header + t.values.astype("<f8", copy=False).tobytes())


def read_tensor(path) -> DenseTensor:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, order = struct.unpack("<4sHH", raw[:8])
    if magic != TENSOR_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported format version {version}")
    if order < 1:
        raise FileFormatError(f"{path}: order must be positive")
    dims_end = 8 + 8 * order
    if len(raw) < dims_end:
        raise FileFormatError(f"{path}: truncated dims block")
    dims = tuple(int(d) for d in np.frombuffer(raw[8:dims_end], dtype="<u8"))
    if any(d < 1 for d in dims):
        raise FileFormatError(f"{path}: nonpositive dim in {dims}")
    expected = dims_end + 8 * math.prod(dims)
    if len(raw) != expected:
        raise FileFormatError(f"{path}: payload length {len(raw) - dims_end} bytes does not "
                              f"match dims {dims} (expected {expected - dims_end})")
    values = np.frombuffer(raw[dims_end:], dtype="<f8").astype(np.float64)
    if not np.isfinite(values).all():
        raise FileFormatError(f"{path}: payload contains non-finite values")
    return DenseTensor(dims, values)


def write_factors(model: KruskalModel, path) -> None:
    header = struct.pack("<4sHHQ", FACTOR_MAGIC, FORMAT_VERSION, model.order, model.rank)
    header += np.asarray(model.dims, dtype="<u8").tobytes()
    body = b"".join(f.astype("<f8", copy=False).ravel(order="F").tobytes()
                    for f in model.factors)
    Path(path).write_bytes(header + body)


def read_factors(path) -> KruskalModel:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, order, rank = struct.unpack("<4sHHQ", raw[:16])
    if magic != FACTOR_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported format version {version}")
    dims_end = 16 + 8 * order
    if len(raw) < dims_end:
        raise FileFormatError(f"{path}: truncated dims block")
    dims = tuple(int(d) for d in np.frombuffer(raw[16:dims_end], dtype="<u8"))
    expected = dims_end + 8 * int(rank) * sum(dims)
    if len(raw) != expected:
        raise FileFormatError(f"{path}: payload length mismatch")
    factors = []
    offset = dims_end
    for d in dims:
        count = d * int(rank)
        block = np.frombuffer(raw[offset:offset + 8 * count], dtype="<f8")
        factors.append(block.reshape((d, int(rank)), order="F").copy())
        offset += 8 * count
    return KruskalModel(factors)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo_lines(config: dict) -> list[str]:
    return [f"# {key}={_fmt(value)}" for key, value in config.items()]


def write_run_csv(path, records: list[RunRecord], config_echo: dict | None = None) -> None:
    """Per-trial trace CSV; rows sorted by (trial, full_iter)."""
    echo = config_echo if config_echo is not None else (records[0].config if records else {})
    lines = echo_lines(echo)
    lines.append(",".join(CSV_COLUMNS))
    for rec in sorted(records, key=lambda r: r.trial):
        for cp in rec.checkpoints:
            lines.append(f"{rec.trial},{cp.full_iter},{cp.work_units},"
                         f"{_fmt(float(cp.m))},{_fmt(float(cp.wall_seconds))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_average_csv(path, averaged: dict[str, RunRecord],
                      config_echo: dict | None = None) -> None:
    """Combined averaged traces, one block per solver; first column is the solver id."""
    lines = echo_lines(config_echo or {})
    lines.append("solver,full_iter,work_units,m_k,wall_seconds")
    for solver in sorted(averaged):
        for cp in averaged[solver].checkpoints:
            lines.append(f"{solver},{cp.full_iter},{cp.work_units},"
                         f"{_fmt(float(cp.m))},{_fmt(float(cp.wall_seconds))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_run_csv(path) -> tuple[dict, list[dict]]:
    """Parse a trace CSV back into (config echo, row dicts)."""
    echo: dict[str, str] = {}
    rows: list[dict] = []
    header: list[str] | None = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            echo[key.strip()] = value
            continue
        if header is None:
            header = line.split(",")
            continue
        parts = line.split(",")
        row = dict(zip(header, parts))
        rows.append(row)
    return echo, rows
