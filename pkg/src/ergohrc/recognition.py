"""Windowing of task recordings and maximum-likelihood primitive detection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .hmm import GaussianHmm, score_sequences, train_left_right, DEFAULT_STATES
from .mocap import MotionClip, PrimitiveCatalog

DEFAULT_WINDOW_SECONDS = 5.0


@dataclass(frozen=True, eq=False)
class Window:
    start_frame: int
    end_frame: int
    features: np.ndarray
    source_clip: str | None = None

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame


@dataclass(frozen=True, eq=False)
class Detection:
    """Classification outcome for one window.

    ``primitive_id`` and ``eaws_score`` are ``None`` only when a reject
    threshold was configured and no model reached it.
    """

    window: Window
    primitive_id: int | None
    log_likelihoods: np.ndarray
    eaws_score: float | None


def window_length(seconds: float, frame_rate: float) -> int:
    return int(round(seconds * frame_rate))


def window_count(n_frames: int, length: int, stride: int) -> int:
    if n_frames < length:
        return 0
    return (n_frames - length) // stride + 1


def segment(clip: MotionClip, window_seconds: float = DEFAULT_WINDOW_SECONDS,
            stride_seconds: float | None = None) -> list[Window]:
    """Cut ``clip`` into fixed-length windows; a trailing partial window is dropped.

    ``stride_seconds`` defaults to the window length (non-overlapping).
    """
    if window_seconds <= 0:
        raise ValidationError("window_seconds must be positive")
    if stride_seconds is None:
        stride_seconds = window_seconds
    if stride_seconds <= 0:
        raise ValidationError("stride_seconds must be positive")
    length = window_length(window_seconds, clip.frame_rate)
    stride = window_length(stride_seconds, clip.frame_rate)
    if length < 1 or stride < 1:
        raise ValidationError("window or stride shorter than one frame")
    count = window_count(clip.n_frames, length, stride)
    if count == 0:
        raise ValidationError(
            f"clip of {clip.n_frames} frames is shorter than one {length}-frame window"
        )
    return [
        Window(s, s + length, clip.angles[s:s + length], clip.clip_id)
        for s in range(0, count * stride, stride)
    ]


def _model_list(models, catalog):
    if isinstance(models, Mapping):
        missing = [pid for pid in catalog.ids if pid not in models]
        if missing:
            raise ValidationError(f"no model for primitive id(s) {missing}")
        return [models[pid] for pid in catalog.ids]
    models = list(models)
    if len(models) != len(catalog):
        raise ValidationError(f"{len(models)} models for {len(catalog)} catalog entries")
    return models


def _score_matrix(features: Sequence[np.ndarray], models, catalog) -> np.ndarray:
    model_list = _model_list(models, catalog)
    dim = {m.n_features for m in model_list}
    if len(dim) != 1:
        raise ValidationError("models have differing feature dimensions")
    for f in features:
        if f.shape[1] not in dim:
            raise ValidationError(f"window arity {f.shape[1]} does not match models {dim}")
    return np.column_stack([score_sequences(m, features) for m in model_list])


def _detection(window, scores, catalog, reject_below):
    best = int(np.argmax(scores))  # first maximum: lowest primitive id on ties
    if reject_below is not None and scores[best] < reject_below:
        return Detection(window, None, scores, None)
    pid = catalog.ids[best]
    return Detection(window, pid, scores, catalog.score(pid))


def classify(window: Window, models, catalog: PrimitiveCatalog,
             reject_below: float | None = None) -> Detection:
    """Assign the primitive whose model gives the highest log-likelihood."""
    scores = _score_matrix([window.features], models, catalog)[0]
    return _detection(window, scores, catalog, reject_below)


def classify_windows(windows: Iterable[Window], models, catalog: PrimitiveCatalog,
                     reject_below: float | None = None) -> list[Detection]:
    """Batch version of :func:`classify`; output is sorted by start frame."""
    windows = sorted(windows, key=lambda w: w.start_frame)
    if not windows:
        return []
    scores = _score_matrix([w.features for w in windows], models, catalog)
    return [_detection(w, s, catalog, reject_below) for w, s in zip(windows, scores)]


def detect_primitives(clip: MotionClip, models, catalog: PrimitiveCatalog,
                      window_seconds: float = DEFAULT_WINDOW_SECONDS,
                      stride_seconds: float | None = None) -> list[Detection]:
    return classify_windows(segment(clip, window_seconds, stride_seconds), models, catalog)


def train_models(clips_by_primitive: Mapping[int, Sequence], n_states: int = DEFAULT_STATES,
                 **kwargs) -> dict[int, GaussianHmm]:
    """Train one left-right model per primitive on that primitive's clips only.

    Values may be :class:`MotionClip` objects or raw (T, D) arrays.
    """
    models = {}
    for pid in sorted(clips_by_primitive):
        seqs = [c.angles if isinstance(c, MotionClip) else np.asarray(c)
                for c in clips_by_primitive[pid]]
        models[pid] = train_left_right(seqs, n_states=n_states, **kwargs)
    return models


@dataclass
class ClassificationReport:
    """Per-class precision/recall/F-score and the confusion matrix.

    ``confusion[i, j]`` counts clips labelled ``ids[i]`` predicted as ``ids[j]``.
    Classes with no predictions get precision 0, and likewise for recall.
    """

    ids: list
    confusion: np.ndarray
    precision: np.ndarray = field(init=False)
    recall: np.ndarray = field(init=False)
    f_score: np.ndarray = field(init=False)

    def __post_init__(self):
        tp = np.diag(self.confusion).astype(float)
        predicted = self.confusion.sum(axis=0)
        actual = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.precision = np.where(predicted > 0, tp / predicted, 0.0)
            self.recall = np.where(actual > 0, tp / actual, 0.0)
            denom = self.precision + self.recall
            self.f_score = np.where(denom > 0, 2 * self.precision * self.recall / denom, 0.0)

    @property
    def macro_f_score(self) -> float:
        return float(self.f_score.mean())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    def to_text(self) -> str:
        lines = ["id,precision,recall,f_score,support"]
        support = self.confusion.sum(axis=1)
        for i, pid in enumerate(self.ids):
            lines.append(f"{pid},{self.precision[i]:.4f},{self.recall[i]:.4f},"
                         f"{self.f_score[i]:.4f},{support[i]}")
        lines.append(f"macro,,,{self.macro_f_score:.4f},{support.sum()}")
        return "\n".join(lines) + "\n"


def evaluate_classifier(labeled_clips: Iterable[MotionClip], models,
                        catalog: PrimitiveCatalog) -> ClassificationReport:
    """Classify each labelled clip as a whole and tabulate the results."""
    clips = list(labeled_clips)
    index = {pid: i for i, pid in enumerate(catalog.ids)}
    for c in clips:
        if c.label not in index:
            raise ValidationError(f"clip {c.clip_id!r} has unknown label {c.label!r}")
    confusion = np.zeros((len(index), len(index)), dtype=int)
    if clips:
        scores = _score_matrix([c.angles for c in clips], models, catalog)
        for c, s in zip(clips, scores):
            confusion[index[c.label], int(np.argmax(s))] += 1
    return ClassificationReport(catalog.ids, confusion)


def format_detections(detections: Iterable[Detection], n_models: int | None = None) -> str:
    """CSV ``clip_id,start_frame,primitive_id,eaws_score,loglik_0..``."""
    detections = list(detections)
    if n_models is None:
        n_models = len(detections[0].log_likelihoods) if detections else 0
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["clip_id", "start_frame", "primitive_id", "eaws_score"]
                    + [f"loglik_{i}" for i in range(n_models)])
    for d in detections:
        writer.writerow(
            [d.window.source_clip or "", d.window.start_frame,
             "" if d.primitive_id is None else d.primitive_id,
             "" if d.eaws_score is None else f"{d.eaws_score:g}"]
            + [f"{v:.17g}" for v in d.log_likelihoods]
        )
    return out.getvalue()
