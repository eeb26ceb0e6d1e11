"""Report records and their text/CSV serialisations.

Floats are always written with 17 significant digits so that files are
reproducible bit for bit.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "ConditionReport",
    "VerificationReport",
    "fmt",
    "to_keyvalue",
    "conditions_csv",
    "margins_csv",
    "write_text",
]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (tuple, list, np.ndarray)):
        return "(" + ", ".join(fmt(v) for v in value) + ")"
    return str(value)


@dataclass
class ConditionReport:
    """Outcome of one sampled hypothesis check."""

    condition: str
    passed: bool
    extremal: float
    witness_t: float | None
    witness_x: tuple | None
    samples: int
    tol: float | None = None
    eta_mode: str | None = None
    seed: int | None = None
    notes: list[str] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    def keyvalue(self) -> str:
        return to_keyvalue(
            {
                "condition": self.condition,
                "pass": self.passed,
                "extremal": self.extremal,
                "witness_t": self.witness_t,
                "witness_x": self.witness_x,
                "samples": self.samples,
                "tol": self.tol,
                "eta_mode": self.eta_mode,
                "seed": self.seed,
                **{f"detail.{k}": v for k, v in self.details.items()},
                **{f"note{i}": n for i, n in enumerate(self.notes)},
            }
        )


@dataclass
class VerificationReport:
    """Outcome of an inequality checked over a trajectory.

    ``worst_margin`` is the largest (left side - right side) seen; the
    inequality held everywhere checked iff it is <= 0.  ``series`` holds one
    ``(time, sup_margin, witness_x)`` triple per snapshot.
    """

    kind: str
    passed: bool
    worst_margin: float
    witness_t: float | None
    witness_x: tuple | None
    tol: float
    series: list[tuple[float, float, tuple | None]] = field(default_factory=list)
    params: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    fields: Any = field(default=None, repr=False)

    def keyvalue(self) -> str:
        return to_keyvalue(
            {
                "kind": self.kind,
                "pass": self.passed,
                "worst_margin": self.worst_margin,
                "witness_t": self.witness_t,
                "witness_x": self.witness_x,
                "tol": self.tol,
                "snapshots": len(self.series),
                **{f"param.{k}": v for k, v in self.params.items()},
                **{f"note{i}": n for i, n in enumerate(self.notes)},
            }
        )


def to_keyvalue(items: dict) -> str:
    return "".join(f"{k}={fmt(v)}\n" for k, v in items.items())


def _rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def conditions_csv(reports: Sequence[ConditionReport], dimension: int) -> str:
    header = ["condition", "pass", "extremal", "t"] + [f"x{i}" for i in range(1, dimension + 1)]
    header += ["samples", "tol", "eta_mode", "seed"]
    rows = []
    for r in reports:
        x = list(r.witness_x) if r.witness_x is not None else [None] * dimension
        rows.append([r.condition, r.passed, r.extremal, r.witness_t, *x, r.samples, r.tol, r.eta_mode, r.seed])
    return _rows_to_csv(header, rows)


def margins_csv(reports: Sequence[VerificationReport], dimension: int) -> str:
    header = ["kind", "c0", "time", "sup_margin"] + [f"x{i}" for i in range(1, dimension + 1)]
    rows = []
    for r in reports:
        for time, margin, wx in r.series:
            x = list(wx) if wx is not None else [None] * dimension
            rows.append([r.kind, r.params.get("c0"), time, margin, *x])
    return _rows_to_csv(header, rows)


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
