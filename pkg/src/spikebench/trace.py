"""Per-iteration run records shared by the solvers and the harness."""
from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path


@dataclass(frozen=True)
class TraceRow:
    method: str
    seed: int
    outer_iteration: int
    wall_time_seconds: float
    residual_norm_squared: float
    spike_count: int
    active_fraction: float


TRACE_COLUMNS = tuple(f.name for f in fields(TraceRow))


@dataclass
class RunTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow):
        self.rows.append(row)

    def extend(self, other: "RunTrace"):
        self.rows.extend(other.rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple(row)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "RunTrace":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
                raise ValueError(f"unexpected trace columns {reader.fieldnames}")
            rows = [
                TraceRow(
                    r["method"],
                    int(r["seed"]),
                    int(r["outer_iteration"]),
                    float(r["wall_time_seconds"]),
                    float(r["residual_norm_squared"]),
                    int(r["spike_count"]),
                    float(r["active_fraction"]),
                )
                for r in reader
            ]
        return cls(rows)
