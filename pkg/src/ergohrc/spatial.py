"""Handover adaptation from a tracked wrist: frame alignment, stillness, reachability.

Positions are in centimetres. Camera-frame points are mapped into the robot
base frame with a rigid :class:`FrameCalibration`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

DEFAULT_SPEED_THRESHOLD = 2.0  # cm/s
DEFAULT_HOLD_FRAMES = 30
DEFAULT_WORKSPACE_RADIUS = 50.0  # cm


def _vec3(v, name="vector"):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be 3 finite numbers")
    return arr


@dataclass(frozen=True, eq=False)
class FrameCalibration:
    """Rigid transform from camera to robot-base coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
            raise ValidationError("rotation must be a finite 3x3 matrix")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise ValidationError("rotation is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise ValidationError("rotation has determinant -1 (reflection)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", _vec3(self.translation, "translation"))

    def inverse(self) -> "FrameCalibration":
        rt = self.rotation.T
        return FrameCalibration(rt, -rt @ self.translation)

    @classmethod
    def identity(cls) -> "FrameCalibration":
        return cls(np.eye(3), np.zeros(3))


def axis_aligned_calibration(translation=(0.0, 0.0, 0.0)) -> FrameCalibration:
    """Camera (x, y, z) to robot (x, z, -y).

    Camera X runs along robot X and the downward camera Y along robot -Z.
    """
    rot = np.array([[1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [0.0, -1.0, 0.0]])
    return FrameCalibration(rot, translation)


def parse_calibration(text: str) -> FrameCalibration:
    """Twelve numbers: the rotation row-major, then the translation."""
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if len(values) != 12:
        raise ParseError(f"calibration needs 12 numbers, got {len(values)}")
    try:
        return FrameCalibration(np.reshape(values[:9], (3, 3)), values[9:])
    except ValidationError as exc:
        raise ParseError(str(exc)) from None


def format_calibration(cal: FrameCalibration) -> str:
    rows = [" ".join(f"{v:.17g}" for v in r) for r in cal.rotation]
    return "\n".join(rows + [" ".join(f"{v:.17g}" for v in cal.translation)]) + "\n"


def to_robot_frame(p, cal: FrameCalibration) -> np.ndarray:
    """Map camera-frame point(s), shape (3,) or (n, 3), to the robot frame."""
    p = np.asarray(p, dtype=float)
    return p @ cal.rotation.T + cal.translation


# -- skeleton streams ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SkeletonStream:
    """Timestamped wrist positions (cm) and velocities (cm/s) of one hand."""

    timestamps: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        v = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        if not (len(t) == len(p) == len(v)):
            raise ValidationError("stream arrays have different lengths")
        for name, arr in (("timestamps", t), ("positions", p), ("velocities", v)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite {name}")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("timestamps not strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "velocities", v)

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_positions(cls, timestamps, positions, velocities=None) -> "SkeletonStream":
        """Build a stream, deriving velocities by differencing when absent.

        Interior frames use central differences, endpoints one-sided ones.
        """
        t = np.asarray(timestamps, dtype=float).reshape(-1)
        p = np.asarray(positions, dtype=float).reshape(-1, 3)
        if np.any(np.diff(t) <= 0):
            raise ValidationError("timestamps not strictly increasing")
        if velocities is None:
            if len(t) >= 2:
                velocities = np.gradient(p, t, axis=0, edge_order=1)
            else:
                velocities = np.zeros_like(p)
        return cls(t, p, velocities)

    def in_robot_frame(self, cal: FrameCalibration) -> "SkeletonStream":
        return SkeletonStream(self.timestamps, to_robot_frame(self.positions, cal),
                              self.velocities @ cal.rotation.T)

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.velocities, axis=1)


def parse_skeleton_csv(text: str) -> SkeletonStream:
    """``timestamp,wx,wy,wz[,vx,vy,vz]`` rows; an optional header is skipped."""
    rows = []
    width = None
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or row[0].lstrip().startswith("#"):
            continue
        try:
            values = [float(v) for v in row]
        except ValueError:
            if not rows and width is None:
                continue  # header
            raise ParseError("non-numeric field", lineno) from None
        if len(values) not in (4, 7) or (width is not None and len(values) != width):
            raise ParseError("expected 4 or 7 fields per row", lineno)
        width = len(values)
        rows.append(values)
    if not rows:
        return SkeletonStream(np.empty(0), np.empty((0, 3)), np.empty((0, 3)))
    arr = np.array(rows)
    vel = arr[:, 4:7] if width == 7 else None
    try:
        return SkeletonStream.from_positions(arr[:, 0], arr[:, 1:4], vel)
    except ValidationError as exc:
        raise ParseError(str(exc)) from None


def format_skeleton_csv(stream: SkeletonStream) -> str:
    out = ["timestamp,wx,wy,wz,vx,vy,vz"]
    for t, p, v in zip(stream.timestamps, stream.positions, stream.velocities):
        out.append(",".join(f"{x:.6f}" for x in (t, *p, *v)))
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class StillnessInterval:
    """Frames ``start`` (inclusive) to ``stop`` (exclusive) judged motionless.

    ``start`` is the frame on which the hold requirement was first met.
    """

    start: int
    stop: int


def detect_stillness(stream: SkeletonStream | np.ndarray,
                     speed_threshold: float = DEFAULT_SPEED_THRESHOLD,
                     hold_frames: int = DEFAULT_HOLD_FRAMES) -> list[StillnessInterval]:
    """Find intervals where wrist speed stays below ``speed_threshold``.

    An interval opens once ``hold_frames`` consecutive frames are below the
    threshold and closes at the first frame that is not. ``stream`` may also
    be a plain array of per-frame speeds.
    """
    if speed_threshold <= 0 or hold_frames < 1:
        raise ValidationError("speed_threshold and hold_frames must be positive")
    speeds = stream.speeds if isinstance(stream, SkeletonStream) else np.asarray(stream, float)
    intervals = []
    run = 0
    start = None
    for i, still in enumerate(speeds < speed_threshold):
        if still:
            run += 1
            if run == hold_frames:
                start = i
        else:
            if start is not None:
                intervals.append(StillnessInterval(start, i))
            run, start = 0, None
    if start is not None:
        intervals.append(StillnessInterval(start, len(speeds)))
    return intervals


# -- handover -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HandoverGeometry:
    """Robot-frame handover layout (cm).

    ``waiting_point`` is where the robot idles, ``default_handover`` the
    fixed handover position used without adaptation, and the workspace is
    the sphere the robot can reach.
    """

    waiting_point: np.ndarray
    default_handover: np.ndarray
    workspace_center: np.ndarray
    workspace_radius: float = DEFAULT_WORKSPACE_RADIUS
    approach_offset: np.ndarray = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("waiting_point", "default_handover", "workspace_center", "approach_offset"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        if not self.workspace_radius > 0:
            raise ValidationError("workspace_radius must be positive")
        if not self.reachable(self.default_handover):
            raise ValidationError("default handover position lies outside the workspace")

    def reachable(self, p) -> bool:
        return bool(np.linalg.norm(np.asarray(p, float) - self.workspace_center) <= self.workspace_radius)


def default_geometry() -> HandoverGeometry:
    """Layout used by the simulation harness (robot base at the origin)."""
    return HandoverGeometry(
        waiting_point=(0.0, -20.0, 30.0),
        default_handover=(25.0, 5.0, 25.0),
        workspace_center=(0.0, 0.0, 0.0),
        workspace_radius=DEFAULT_WORKSPACE_RADIUS,
        approach_offset=(0.0, 0.0, 0.0),
    )


def adapted_handover(wrist, geometry: HandoverGeometry,
                     adaptation_enabled: bool = True) -> tuple[np.ndarray, bool]:
    """Handover target and whether it was adapted to the wrist.

    Falls back to the default handover when adaptation is off or when the
    wrist, or the offset target next to it, is out of reach.
    """
    if not adaptation_enabled:
        return geometry.default_handover.copy(), False
    wrist = _vec3(wrist, "wrist")
    target = wrist + geometry.approach_offset
    if geometry.reachable(wrist) and geometry.reachable(target):
        return target, True
    return geometry.default_handover.copy(), False


def handover_from_stream(stream: SkeletonStream, geometry: HandoverGeometry,
                         adaptation_enabled: bool = True,
                         speed_threshold: float = DEFAULT_SPEED_THRESHOLD,
                         hold_frames: int = DEFAULT_HOLD_FRAMES) -> tuple[np.ndarray, bool]:
    """Adapt to the wrist position at the first stillness detection.

    ``stream`` must already be in the robot frame. Without any stillness
    interval the default handover is used.
    """
    intervals = detect_stillness(stream, speed_threshold, hold_frames) if adaptation_enabled else []
    if not intervals:
        return geometry.default_handover.copy(), False
    return adapted_handover(stream.positions[intervals[0].start], geometry, True)


def load_calibration(path) -> FrameCalibration:
    return parse_calibration(Path(path).read_text(encoding="utf-8"))
