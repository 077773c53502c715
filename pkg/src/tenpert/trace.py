"""Per-sweep convergence records and their CSV form."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Any

from .tensor_core import FlopCounter

PHASES = ("dt", "pp-build", "pp-approx", "hosvd")
CSV_COLUMNS = ("sweep", "phase", "residual", "rel_residual", "stop_metric", "flops_cum", "wall_s")


@dataclass
class SweepRecord:
    sweep: int
    phase: str
    residual: float
    rel_residual: float
    stop_metric: float
    madds_cum: int
    wall_s: float
    core_norm: float | None = None

    @property
    def flops_cum(self) -> int:
        return 2 * self.madds_cum


@dataclass
class ConvergenceTrace:
    records: list[SweepRecord] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    @property
    def converged(self) -> bool:
        return bool(self.meta.get("converged", False))

    @property
    def total_flops(self) -> int:
        return self.records[-1].flops_cum if self.records else 0

    def sweep_flops(self) -> list[int]:
        """Flops spent in each sweep (differences of the cumulative column)."""
        out, prev = [], 0
        for r in self.records:
            out.append(r.flops_cum - prev)
            prev = r.flops_cum
        return out

    def to_csv(self, path=None, include_wall: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records:
            writer.writerow([
                r.sweep, r.phase, repr(float(r.residual)), repr(float(r.rel_residual)),
                repr(float(r.stop_metric)), r.flops_cum,
                f"{r.wall_s:.6f}" if include_wall else "",
            ])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


class TraceRecorder:
    """Appends sweep records, attributing work to the active flop counter."""

    def __init__(self, fc: FlopCounter, norm_x: float, meta: dict[str, Any] | None = None):
        self.fc = fc
        self.base = fc.multiply_adds
        self.norm_x = norm_x
        self.t0 = time.perf_counter()
        self.trace = ConvergenceTrace(meta=dict(meta or {}))

    @property
    def next_sweep(self) -> int:
        return self.trace.records[-1].sweep + 1 if self.trace.records else 1

    def record(self, phase: str, residual: float, stop_metric: float, sweep: int | None = None,
               core_norm: float | None = None) -> SweepRecord:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        rel = residual / self.norm_x if self.norm_x > 0 else (0.0 if residual == 0 else math.inf)
        rec = SweepRecord(
            sweep=self.next_sweep if sweep is None else sweep,
            phase=phase,
            residual=float(residual),
            rel_residual=float(rel),
            stop_metric=float(stop_metric),
            madds_cum=self.fc.multiply_adds - self.base,
            wall_s=time.perf_counter() - self.t0,
            core_norm=core_norm,
        )
        self.trace.records.append(rec)
        return rec
