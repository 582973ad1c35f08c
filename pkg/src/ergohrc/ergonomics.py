"""EAWS score aggregation per task, risk classes, and task delegation."""

from __future__ import annotations

import csv
import enum
import io
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .mocap import EAWS_MAX, EAWS_MIN, MotionClip, PrimitiveCatalog
from .recognition import Detection, detect_primitives, DEFAULT_WINDOW_SECONDS

#: (low_max, medium_max) in EAWS points, applied to a task's modal score.
DEFAULT_THRESHOLDS = (13.0, 22.0)


class RiskClass(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> "RiskClass":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown risk class {text!r}") from None


@dataclass(frozen=True)
class TaskScoreSummary:
    task_id: str
    detection_count: int
    mean: float
    std: float
    mode: float
    risk_class: RiskClass


@dataclass(frozen=True)
class DelegationPlan:
    robot_tasks: frozenset
    human_tasks: frozenset

    def __post_init__(self):
        if self.robot_tasks & self.human_tasks:
            raise ValidationError("a task cannot be delegated to both robot and human")


def classify_risk(score: float, thresholds: tuple[float, float] = DEFAULT_THRESHOLDS) -> RiskClass:
    low_max, medium_max = thresholds
    if not low_max < medium_max:
        raise ValidationError("thresholds must satisfy low_max < medium_max")
    if not EAWS_MIN <= score <= EAWS_MAX:
        raise ValidationError(f"EAWS score {score} outside [0.5, 26.5]")
    if score <= low_max:
        return RiskClass.LOW
    if score <= medium_max:
        return RiskClass.MEDIUM
    return RiskClass.HIGH


def modal_score(scores: Sequence[float]) -> float:
    """Most frequent value; ties go to the lower score."""
    counts = Counter(scores)
    top = max(counts.values())
    return min(s for s, c in counts.items() if c == top)


def summarize_scores(scores: Sequence[float], task_id,
                     thresholds: tuple[float, float] = DEFAULT_THRESHOLDS) -> TaskScoreSummary:
    scores = [float(s) for s in scores]
    if not scores:
        raise ValidationError(f"task {task_id!r} has no detections")
    arr = np.array(scores)
    mode = modal_score(scores)
    return TaskScoreSummary(
        task_id=str(task_id),
        detection_count=len(scores),
        mean=float(arr.mean()),
        std=float(arr.std()),  # population std
        mode=mode,
        risk_class=classify_risk(mode, thresholds),
    )


def summarize_task(detections: Iterable[Detection], task_id,
                   thresholds: tuple[float, float] = DEFAULT_THRESHOLDS) -> TaskScoreSummary:
    """Mean, population std and mode of the detected windows' EAWS scores.

    Rejected windows (no primitive assigned) are skipped.
    """
    scores = [d.eaws_score for d in detections if d.eaws_score is not None]
    return summarize_scores(scores, task_id, thresholds)


def medium_or_high(summary: TaskScoreSummary) -> bool:
    return summary.risk_class >= RiskClass.MEDIUM


def build_delegation(summaries: Iterable[TaskScoreSummary],
                     policy: Callable[[TaskScoreSummary], bool] = medium_or_high) -> DelegationPlan:
    """Split tasks between robot and human.

    ``policy`` returns True for tasks the robot should take over.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValidationError("no task summaries to delegate")
    robot = frozenset(s.task_id for s in summaries if policy(s))
    human = frozenset(s.task_id for s in summaries) - robot
    return DelegationPlan(robot, human)


def assess_tasks(task_clips: Mapping[str, Sequence[MotionClip]], models,
                 catalog: PrimitiveCatalog,
                 thresholds: tuple[float, float] = DEFAULT_THRESHOLDS,
                 window_seconds: float = DEFAULT_WINDOW_SECONDS,
                 stride_seconds: float | None = None):
    """Run detection over every recording of every task.

    Returns ``(summaries, detections)`` where ``detections`` maps task ID to
    the detections pooled across that task's recordings.
    """
    summaries, detections = [], {}
    for task_id in sorted(task_clips):
        dets = []
        for clip in task_clips[task_id]:
            dets.extend(detect_primitives(clip, models, catalog, window_seconds, stride_seconds))
        detections[task_id] = dets
        summaries.append(summarize_task(dets, task_id, thresholds))
    return summaries, detections


# -- reports ------------------------------------------------------------------

SUMMARY_COLUMNS = ["task", "mean", "std", "mode", "risk_class", "detections"]


def format_summary_report(summaries: Iterable[TaskScoreSummary]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        writer.writerow([s.task_id, f"{s.mean:.2f}", f"{s.std:.2f}", f"{s.mode:.2f}",
                         s.risk_class.label, s.detection_count])
    return out.getvalue()


def parse_summary_report(text: str) -> list[TaskScoreSummary]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:5] != SUMMARY_COLUMNS[:5]:
        raise ParseError("summary report header must start with " + ",".join(SUMMARY_COLUMNS[:5]), 1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            count = int(row[5]) if len(row) > 5 and row[5] else 0
            out.append(TaskScoreSummary(row[0], count, float(row[1]), float(row[2]),
                                        float(row[3]), RiskClass.parse(row[4])))
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), lineno) from None
    return out


def format_delegation_text(plan: DelegationPlan) -> str:
    robot = ", ".join(sorted(plan.robot_tasks)) or "(none)"
    human = ", ".join(sorted(plan.human_tasks)) or "(none)"
    return f"Delegate to robot: {robot}\nKeep with operators: {human}\n"


def format_delegation_csv(plan: DelegationPlan) -> str:
    rows = [(t, "robot") for t in plan.robot_tasks] + [(t, "human") for t in plan.human_tasks]
    return "task,assignee\n" + "".join(f"{t},{a}\n" for t, a in sorted(rows))
