"""
Export - trajectory tables, JSON reports and line-delimited iteration traces.

All numbers are written in positional notation with 9 significant digits,
independent of locale.
"""

import csv
import json
from pathlib import Path
from types import TracebackType
from typing import IO, Any, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from potgame.engines.game import AgentLayout, Trajectory
from potgame.engines.simulator import Histogram
from potgame.engines.solution import IterationRecord

SIGNIFICANT_DIGITS = 9


def format_number(value: float, trim: str = "k") -> str:
    """``trim="-"`` drops trailing zeros for display."""
    return np.format_float_positional(
        float(value), precision=SIGNIFICANT_DIGITS, unique=False, fractional=False, trim=trim
    )


def trajectory_rows(layout: AgentLayout, traj: Trajectory) -> list[list[str]]:
    """Header plus one row per (k, agent); control cells are empty at k = T."""
    n_max = max(layout.state_dims)
    m_max = max(layout.control_dims)
    header = ["k", "t", "agent"]
    header += [f"x{d}" for d in range(n_max)] + [f"u{d}" for d in range(m_max)]
    rows = [header]
    T = traj.horizon
    for k in range(T + 1):
        for i in layout.agents:
            x = traj.states[k, layout.state_slice(i)]
            u = traj.controls[k, layout.control_slice(i)] if k < T else np.zeros(0)
            row = [str(k), format_number(k * traj.dt), str(i)]
            row += [format_number(v) for v in x] + [""] * (n_max - x.size)
            row += [format_number(v) for v in u] + [""] * (m_max - u.size)
            rows.append(row)
    return rows


def write_trajectory(path: Path, layout: AgentLayout, traj: Trajectory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f, lineterminator="\n").writerows(trajectory_rows(layout, traj))


def write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                "" if v is None else format_number(v) if isinstance(v, float) else v for v in row
            )


def write_json(path: Path, data: Any) -> None:
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def write_histogram(path: Path, histogram: Histogram) -> None:
    rows = [
        [histogram.edges[b], histogram.edges[b + 1], count]
        for b, count in enumerate(histogram.counts)
    ]
    write_table(path, ["lower_ms", "upper_ms", "count"], rows)


class TraceWriter:
    """Iteration trace sink writing one JSON record per line."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._file: Optional[IO[str]] = None
        self.records = 0

    def __enter__(self) -> "TraceWriter":
        self._file = open(self.path, "w", encoding="utf-8")
        return self

    def __exit__(
        self,
        exc_type: Optional[type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __call__(self, record: IterationRecord) -> None:
        if self._file is None:
            raise RuntimeError("TraceWriter used outside its context")
        self._file.write(record.model_dump_json() + "\n")
        self.records += 1
