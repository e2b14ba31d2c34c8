"""Parsing and validation of the harness output CSVs."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

RESULTS_HEADER = ["scheme", "P", "rho", "train_frames", "run_seed", "bler", "std"]
HISTORY_HEADER = ["tau", "mean_loss", "scheme"]

AXIS_COLUMNS = {"P": "P", "frames": "train_frames", "rho": "rho"}


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    P: int
    rho: float
    train_frames: int
    run_seed: int
    bler: float
    std: float


@dataclass
class ResultTable:
    rows: list[ResultRow]

    def axis_values(self, axis: str):
        column = AXIS_COLUMNS[axis]
        return sorted({getattr(r, column) for r in self.rows})

    def schemes(self):
        return sorted({r.scheme for r in self.rows})

    def group(self, scheme: str, axis: str, value):
        column = AXIS_COLUMNS[axis]
        return [r for r in self.rows if r.scheme == scheme and getattr(r, column) == value]

    def series(self, scheme: str, axis: str):
        """(axis values, mean bler, std across runs) for one scheme."""
        xs, means, stds = [], [], []
        for value in self.axis_values(axis):
            group = self.group(scheme, axis, value)
            if not group:
                continue
            blers = np.array([r.bler for r in group])
            xs.append(value)
            means.append(float(blers.mean()))
            stds.append(float(blers.std(ddof=1)) if blers.size > 1 else 0.0)
        return np.array(xs, dtype=float), np.array(means), np.array(stds)


def load_results(path) -> ResultTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableError(f"{path}: empty file") from None
        if header != RESULTS_HEADER:
            missing = [c for c in RESULTS_HEADER if c not in header]
            if missing:
                raise TableError(f"{path}: missing columns {missing}")
            raise TableError(f"{path}: unexpected header {header}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != len(RESULTS_HEADER):
                raise TableError(f"{path}:{lineno}: expected {len(RESULTS_HEADER)} fields")
            try:
                row = ResultRow(scheme=rec[0], P=int(rec[1]), rho=float(rec[2]),
                                train_frames=int(rec[3]), run_seed=int(rec[4]),
                                bler=float(rec[5]), std=float(rec[6]))
            except ValueError as exc:
                raise TableError(f"{path}:{lineno}: {exc}") from exc
            if not 0.0 <= row.bler <= 1.0:
                raise TableError(f"{path}:{lineno}: bler {row.bler} outside [0, 1]")
            if row.std < 0.0:
                raise TableError(f"{path}:{lineno}: negative std")
            rows.append(row)
    if not rows:
        raise TableError(f"{path}: no data rows")
    return ResultTable(rows)


def load_history(path):
    """(scheme -> (taus, losses)) from a training-history CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableError(f"{path}: empty file") from None
        if header != HISTORY_HEADER:
            raise TableError(f"{path}: expected header {HISTORY_HEADER}, got {header}")
        out: dict[str, list[tuple[int, float]]] = {}
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != 3:
                raise TableError(f"{path}:{lineno}: expected 3 fields")
            try:
                tau, loss, scheme = int(rec[0]), float(rec[1]), rec[2]
            except ValueError as exc:
                raise TableError(f"{path}:{lineno}: {exc}") from exc
            out.setdefault(scheme, []).append((tau, loss))
    if not out:
        raise TableError(f"{path}: no data rows")
    return {scheme: (np.array([t for t, _ in pairs]), np.array([l for _, l in pairs]))
            for scheme, pairs in out.items()}
