"""Spatial-adaptation (SA) and reduction-in-operator's-motion (RiOM) KPIs.

Both KPIs are returned as percentages in full precision; rounding happens
only when reports are formatted.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping

import numpy as np

from .errors import ParseError, ValidationError


def _point(p):
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValidationError("positions must be 3-vectors")
    return arr


@dataclass(frozen=True, eq=False)
class HandoverTrial:
    """Waiting point, default handover and adapted handover of one handover (cm)."""

    wp: np.ndarray
    php: np.ndarray
    ahp: np.ndarray

    def __post_init__(self):
        for name in ("wp", "php", "ahp"):
            object.__setattr__(self, name, _point(getattr(self, name)))


@dataclass(frozen=True, eq=False)
class MotionRecord:
    """A tracked-joint path and its total length (cm)."""

    path: np.ndarray
    magnitude: float

    @classmethod
    def from_path(cls, path) -> "MotionRecord":
        path = np.asarray(path, dtype=float).reshape(-1, 3)
        return cls(path, motion_magnitude(path))


@dataclass(frozen=True)
class KpiRecord:
    operator_id: str
    sa_percent: float
    riom_percent: float

    def __post_init__(self):
        if not (math.isfinite(self.sa_percent) and math.isfinite(self.riom_percent)):
            raise ValidationError(f"non-finite KPI for operator {self.operator_id}")


def spatial_adaptation_kpi(trial: HandoverTrial) -> float:
    """``100 * (|AHP - WP| - |PHP - WP|) / |PHP - WP|``, sign preserved."""
    base = float(np.linalg.norm(trial.php - trial.wp))
    if base == 0.0:
        raise ValidationError("default handover coincides with the waiting point")
    return (float(np.linalg.norm(trial.ahp - trial.wp)) - base) / base * 100.0


def motion_magnitude(path) -> float:
    """Total path length: the sum of consecutive Euclidean displacements."""
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path.reshape(1, -1)
    if len(path) == 0:
        raise ValidationError("path needs at least one point")
    return float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())


def riom_kpi(without_gr: MotionRecord | float, with_gr: MotionRecord | float) -> float:
    """``100 * (|M_without| - |M_with|) / |M_without|``; negative if motion grew."""
    base = getattr(without_gr, "magnitude", without_gr)
    other = getattr(with_gr, "magnitude", with_gr)
    if base == 0:
        raise ValidationError("baseline motion magnitude is zero")
    return (base - other) / base * 100.0  # ratio first keeps RiOM <= 100 exactly


def aggregate_kpis(records: Iterable[KpiRecord]) -> tuple[float, float]:
    """Mean SA and mean RiOM across operators."""
    records = list(records)
    if not records:
        raise ValidationError("no KPI records to aggregate")
    sa = math.fsum(r.sa_percent for r in records) / len(records)
    riom = math.fsum(r.riom_percent for r in records) / len(records)
    return sa, riom


def round_percent(value: float, places: int = 2) -> str:
    """Round half away from zero, e.g. ``round_percent(0.125) == '0.13'``."""
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def format_kpi_report(records: Iterable[KpiRecord]) -> str:
    """CSV with one row per operator and a trailing ``mean`` row."""
    records = list(records)
    mean_sa, mean_riom = aggregate_kpis(records)
    lines = ["operator,SA,RiOM"]
    lines += [f"{r.operator_id},{round_percent(r.sa_percent)},{round_percent(r.riom_percent)}"
              for r in records]
    lines.append(f"mean,{round_percent(mean_sa)},{round_percent(mean_riom)}")
    return "\n".join(lines) + "\n"


# -- CSV inputs for the kpi command -------------------------------------------

def _csv_rows(text):
    rows = [(n, r) for n, r in enumerate(csv.reader(io.StringIO(text)), start=1)
            if r and not r[0].lstrip().startswith("#")]
    if rows and not _numeric(rows[0][1][1:]):
        rows = rows[1:]
    return rows


def _numeric(fields):
    try:
        [float(f) for f in fields]
    except ValueError:
        return False
    return True


def parse_trials_csv(text: str) -> dict[str, list[HandoverTrial]]:
    """``operator,wp_x,wp_y,wp_z,php_x,php_y,php_z,ahp_x,ahp_y,ahp_z`` rows."""
    out: dict[str, list[HandoverTrial]] = {}
    for lineno, row in _csv_rows(text):
        if len(row) != 10 or not _numeric(row[1:]):
            raise ParseError("expected operator and 9 coordinates", lineno)
        v = [float(x) for x in row[1:]]
        out.setdefault(row[0].strip(), []).append(HandoverTrial(v[0:3], v[3:6], v[6:9]))
    return out


def parse_motion_csv(text: str) -> dict[str, dict[str, MotionRecord]]:
    """``operator,condition,x,y,z`` rows; condition is ``without`` or ``with``.

    Rows of one operator and condition form a path in file order.
    """
    paths: dict[str, dict[str, list]] = {}
    for lineno, row in _csv_rows(text):
        if len(row) != 5 or not _numeric(row[2:]):
            raise ParseError("expected operator,condition,x,y,z", lineno)
        cond = row[1].strip().lower()
        if cond not in ("without", "with"):
            raise ParseError(f"condition must be 'without' or 'with', got {row[1]!r}", lineno)
        paths.setdefault(row[0].strip(), {}).setdefault(cond, []).append(
            [float(x) for x in row[2:]])
    return {op: {c: MotionRecord.from_path(p) for c, p in conds.items()}
            for op, conds in paths.items()}


def kpi_records(trials: Mapping[str, list[HandoverTrial]],
                motions: Mapping[str, Mapping[str, MotionRecord]]) -> list[KpiRecord]:
    """Per-operator SA (mean over that operator's trials) and RiOM."""
    records = []
    for op in sorted(set(trials) | set(motions), key=_operator_key):
        if op not in trials or op not in motions:
            raise ValidationError(f"operator {op} lacks trials or motion data")
        if set(motions[op]) != {"without", "with"}:
            raise ValidationError(f"operator {op} needs both 'without' and 'with' paths")
        sa = float(np.mean([spatial_adaptation_kpi(t) for t in trials[op]]))
        riom = riom_kpi(motions[op]["without"], motions[op]["with"])
        records.append(KpiRecord(op, sa, riom))
    return records


def _operator_key(op):
    return (0, int(op), op) if op.isdigit() else (1, 0, op)
