"""Per-iteration trace records and their CSV file format."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path

HEADER = ("iter", "wall_s", "k_plus", "alpha", "sigma_x", "sigma_a",
          "train_joint_ll", "heldout_joint_ll", "p_prime")


class TraceFormatError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class TraceRecord:
    iter: int
    wall_s: float
    k_plus: int
    alpha: float
    sigma_x: float
    sigma_a: float
    train_joint_ll: float
    heldout_joint_ll: float
    p_prime: int

    def without_time(self) -> tuple:
        return tuple(v for f, v in zip(HEADER, dataclasses.astuple(self)) if f != "wall_s")


def _fmt(value) -> str:
    # repr round-trips float64 exactly
    return repr(float(value)) if isinstance(value, float) else str(value)


def format_record(rec: TraceRecord) -> list[str]:
    row = [_fmt(v) for v in dataclasses.astuple(rec)]
    row[1] = f"{rec.wall_s:.6f}"
    return row


class TraceWriter:
    """Append-only trace file; the header is written on open."""

    def __init__(self, path, meta: dict | None = None):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(HEADER)
        self._fh.flush()
        self._last = None
        if meta is not None:
            with open(meta_path(self.path), "w") as fh:
                for key, value in meta.items():
                    fh.write(f"{key}={value}\n")

    def write(self, rec: TraceRecord) -> None:
        if self._last is not None:
            if rec.iter <= self._last.iter:
                raise ValueError("trace iterations must be strictly increasing")
            if rec.wall_s < self._last.wall_s:
                raise ValueError("trace wall-clock must be nondecreasing")
        self._csv.writerow(format_record(rec))
        self._fh.flush()
        self._last = rec

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_trace(path, records, meta: dict | None = None) -> None:
    with TraceWriter(path, meta) as writer:
        for rec in records:
            writer.write(rec)


_TYPES = (int, float, int, float, float, float, float, float, int)


def read_trace(path) -> list[TraceRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != HEADER:
            raise TraceFormatError(f"{path}:1: expected header {','.join(HEADER)}")
        for row in reader:
            line = reader.line_num
            if len(row) != len(HEADER):
                raise TraceFormatError(f"{path}:{line}: expected {len(HEADER)} fields, got {len(row)}")
            try:
                values = [t(v) for t, v in zip(_TYPES, row)]
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{line}: {exc}") from None
            rec = TraceRecord(*values)
            if records and rec.iter <= records[-1].iter:
                raise TraceFormatError(f"{path}:{line}: iteration not increasing")
            if math.isnan(rec.wall_s):
                raise TraceFormatError(f"{path}:{line}: wall_s is NaN")
            records.append(rec)
    return records


def read_meta(path) -> dict:
    p = meta_path(path)
    if not p.exists():
        return {}
    return dict(line.split("=", 1) for line in p.read_text().splitlines() if "=" in line)
