"""Joint-angle motion-capture clips and the motion-primitive catalog.

Clips are stored as CSV::

    # ergohrc-clip v1 units=deg frame_rate=90 label=3 clip_id=op1_t1
    time,LumbarSpine_x,LumbarSpine_y,LumbarSpine_z,...
    0.000000,1.250000,...

Leading ``#`` lines carry optional metadata as ``key=value`` tokens. Angles
are Euler joint angles in degrees, three per sensor channel, with channel
order fixed by the header.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

from .errors import ParseError, ValidationError

DEFAULT_FRAME_RATE = 90.0
ANGLE_LIMIT = 360.0
EAWS_MIN = 0.5
EAWS_MAX = 26.5
CSV_PRECISION = 6

#: Five-sensor placement used for recognition.
REDUCED_CHANNELS = (
    "LumbarSpine",
    "LeftUpperArm",
    "RightShoulder",
    "RightUpperLeg",
    "LeftForearm",
)

#: Placement labels of the full 52-IMU suit. Body segments first, then the
#: finger joints of both hands.
FULL_SUIT_CHANNELS = (
    "Hips", "LumbarSpine", "ThoracicSpine", "UpperThoracicSpine", "Neck", "Head",
    "RightShoulder", "RightUpperArm", "RightForearm", "RightHand",
    "LeftShoulder", "LeftUpperArm", "LeftForearm", "LeftHand",
    "RightUpperLeg", "RightLowerLeg", "RightFoot", "RightToe",
    "LeftUpperLeg", "LeftLowerLeg", "LeftFoot", "LeftToe",
) + tuple(
    f"{side}{finger}{joint}"
    for side in ("Right", "Left")
    for finger in ("Thumb", "Index", "Middle", "Ring", "Pinky")
    for joint in ("1", "2", "3")
)

_AXES = ("x", "y", "z")


@dataclass(frozen=True)
class JointAngleFrame:
    """One sample of a clip: a timestamp and a flat angle vector."""

    timestamp: float
    angles: np.ndarray


@dataclass(frozen=True, eq=False)
class MotionClip:
    """An immutable sequence of joint-angle frames.

    Parameters
    ----------
    channels : tuple of str
        Ordered sensor-channel labels, unique.
    timestamps : ndarray, shape (n_frames,)
        Seconds, non-negative and strictly increasing.
    angles : ndarray, shape (n_frames, 3 * n_channels)
        Euler angles in degrees.
    frame_rate : float
        Sampling rate in Hz.
    label : int or str, optional
        Primitive or task identifier for supervised use.
    clip_id : str, optional
        Free-form identifier used in reports.
    """

    channels: tuple
    timestamps: np.ndarray
    angles: np.ndarray
    frame_rate: float = DEFAULT_FRAME_RATE
    label: object = None
    clip_id: str | None = None

    def __post_init__(self):
        channels = tuple(self.channels)
        if len(set(channels)) != len(channels):
            raise ValidationError(f"duplicate channel ids in {channels}")
        timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        angles = np.asarray(self.angles, dtype=float)
        if angles.ndim != 2:
            raise ValidationError("angles must be a 2-D array (frames x values)")
        if angles.shape[1] != 3 * len(channels):
            raise ValidationError(
                f"{angles.shape[1]} angles per frame for {len(channels)} channels; "
                f"expected {3 * len(channels)}"
            )
        if angles.shape[0] != timestamps.shape[0]:
            raise ValidationError("timestamp and frame counts differ")
        if not self.frame_rate > 0:
            raise ValidationError("frame_rate must be positive")
        _check_timestamps(timestamps)
        _check_angles(angles)
        timestamps.setflags(write=False)
        angles.setflags(write=False)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    @property
    def n_frames(self) -> int:
        return self.angles.shape[0]

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate

    @property
    def frames(self) -> Iterator[JointAngleFrame]:
        for t, a in zip(self.timestamps, self.angles):
            yield JointAngleFrame(float(t), a)

    def __len__(self):
        return self.n_frames

    def __eq__(self, other):
        if not isinstance(other, MotionClip):
            return NotImplemented
        return (
            self.channels == other.channels
            and self.frame_rate == other.frame_rate
            and self.label == other.label
            and self.clip_id == other.clip_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.angles, other.angles)
        )

    __hash__ = None

    def replace(self, **changes) -> "MotionClip":
        values = dict(
            channels=self.channels,
            timestamps=self.timestamps,
            angles=self.angles,
            frame_rate=self.frame_rate,
            label=self.label,
            clip_id=self.clip_id,
        )
        values.update(changes)
        return MotionClip(**values)


def _check_timestamps(timestamps):
    if timestamps.size == 0:
        raise ValidationError("clip has no frames")
    if not np.all(np.isfinite(timestamps)):
        raise ValidationError("non-finite timestamp")
    if timestamps[0] < 0:
        raise ValidationError("negative timestamp")
    bad = np.flatnonzero(np.diff(timestamps) <= 0)
    if bad.size:
        raise ValidationError(f"timestamps not strictly increasing at frame {bad[0] + 1}")


def _check_angles(angles):
    if np.isnan(angles).any():
        frame = int(np.argwhere(np.isnan(angles))[0, 0])
        raise ValidationError(f"NaN angle in frame {frame}")
    if not np.all(np.isfinite(angles)):
        raise ValidationError("infinite angle value")
    if np.abs(angles).max(initial=0.0) > ANGLE_LIMIT:
        frame = int(np.argwhere(np.abs(angles) > ANGLE_LIMIT)[0, 0])
        raise ValidationError(f"angle outside [-360, 360] in frame {frame}")


def channel_columns(channels: Iterable[str]) -> list[str]:
    return [f"{ch}_{axis}" for ch in channels for axis in _AXES]


def _channels_from_header(columns, line):
    if not columns or columns[0] != "time":
        raise ParseError("header must start with 'time'", line)
    values = columns[1:]
    if not values or len(values) % 3:
        raise ParseError("header must list 3 angle columns per channel", line)
    channels = []
    for i in range(0, len(values), 3):
        triple = values[i:i + 3]
        base = triple[0].rsplit("_", 1)[0]
        if triple != [f"{base}_{axis}" for axis in _AXES]:
            raise ParseError(f"columns {triple} are not <channel>_x,_y,_z", line)
        channels.append(base)
    if len(set(channels)) != len(channels):
        raise ParseError("duplicate channel in header", line)
    return tuple(channels)


def _parse_metadata(text):
    meta = {}
    for token in text.split():
        if "=" in token:
            key, value = token.split("=", 1)
            meta[key] = value
    return meta


def _coerce_label(value):
    if value is None or value == "":
        return None
    return int(value) if re.fullmatch(r"-?\d+", value) else value


def ingest_clip(source: TextIO | str, frame_rate: float | None = None) -> MotionClip:
    """Parse a clip CSV document into a validated :class:`MotionClip`.

    ``source`` is an open text stream or the document itself. A frame rate
    given here overrides one found in the metadata line.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    meta = {}
    header = None
    header_line = 0
    times, rows = [], []
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            if header is None:
                meta.update(_parse_metadata(line[1:]))
            continue
        fields = next(csv.reader([line]))
        if header is None:
            header = _channels_from_header([f.strip() for f in fields], lineno)
            header_line = lineno
            continue
        expected = 1 + 3 * len(header)
        if len(fields) != expected:
            raise ParseError(f"row has {len(fields)} fields, expected {expected}", lineno)
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", lineno) from None
        if any(math.isnan(v) for v in values):
            raise ValidationError(f"line {lineno}: NaN value")
        times.append(values[0])
        rows.append(values[1:])
    if header is None:
        raise ParseError("missing header row")
    if not rows:
        raise ParseError("no data rows", header_line)

    rate = frame_rate or float(meta.get("frame_rate", DEFAULT_FRAME_RATE))
    return MotionClip(
        channels=header,
        timestamps=np.array(times),
        angles=np.array(rows),
        frame_rate=rate,
        label=_coerce_label(meta.get("label")),
        clip_id=meta.get("clip_id"),
    )


def emit_clip(clip: MotionClip, sink: TextIO | None = None) -> str:
    """Serialise a clip to the CSV format; returns the text as well."""
    out = io.StringIO()
    meta = [f"ergohrc-clip v1 units=deg frame_rate={clip.frame_rate!r}"]
    if clip.label is not None:
        meta.append(f"label={clip.label}")
    if clip.clip_id is not None:
        meta.append(f"clip_id={clip.clip_id}")
    out.write("# " + " ".join(meta) + "\n")
    out.write(",".join(["time"] + channel_columns(clip.channels)) + "\n")
    fmt = f"{{:.{CSV_PRECISION}f}}"
    for t, row in zip(clip.timestamps, clip.angles):
        out.write(",".join(fmt.format(v) for v in (t, *row)) + "\n")
    text = out.getvalue()
    if sink is not None:
        sink.write(text)
    return text


def load_clip(path) -> MotionClip:
    with open(path, encoding="utf-8", newline="") as fh:
        clip = ingest_clip(fh)
    if clip.clip_id is None:
        clip = clip.replace(clip_id=Path(path).stem)
    return clip


def save_clip(clip: MotionClip, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        emit_clip(clip, fh)


def select_channels(clip: MotionClip, wanted: Sequence[str]) -> MotionClip:
    """Return a clip restricted to ``wanted`` channels, in the given order."""
    wanted = tuple(wanted)
    index = {ch: i for i, ch in enumerate(clip.channels)}
    missing = [ch for ch in wanted if ch not in index]
    if missing:
        raise ValidationError(f"channel(s) not in clip: {', '.join(missing)}")
    if wanted == clip.channels:
        return clip
    cols = [3 * index[ch] + k for ch in wanted for k in range(3)]
    return clip.replace(channels=wanted, angles=clip.angles[:, cols])


# -- primitive catalog --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PrimitiveEntry:
    id: int
    name: str
    eaws_score: float
    keyframes: np.ndarray

    def __post_init__(self):
        if not EAWS_MIN <= self.eaws_score <= EAWS_MAX:
            raise ValidationError(
                f"primitive {self.id}: EAWS score {self.eaws_score} outside [0.5, 26.5]"
            )
        kf = np.atleast_2d(np.asarray(self.keyframes, dtype=float))
        kf.setflags(write=False)
        object.__setattr__(self, "keyframes", kf)


@dataclass(frozen=True)
class PrimitiveCatalog:
    """Motion primitives keyed by dense integer ID."""

    entries: Mapping[int, PrimitiveEntry]
    channels: tuple = REDUCED_CHANNELS
    description: str = ""

    def __post_init__(self):
        ids = sorted(self.entries)
        if ids != list(range(len(ids))):
            raise ValidationError("primitive IDs must be dense integers 0..N-1")
        dims = {e.keyframes.shape[1] for e in self.entries.values()}
        if len(dims) > 1:
            raise ValidationError("keyframes have inconsistent arity")
        if dims and dims != {3 * len(self.channels)}:
            raise ValidationError("keyframe arity does not match catalog channels")
        object.__setattr__(self, "entries", dict(sorted(self.entries.items())))

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, primitive_id) -> PrimitiveEntry:
        try:
            return self.entries[primitive_id]
        except KeyError:
            raise KeyError(f"unknown primitive id {primitive_id!r}") from None

    def __iter__(self):
        return iter(self.entries.values())

    @property
    def ids(self) -> list[int]:
        return list(self.entries)

    def score(self, primitive_id) -> float:
        return self[primitive_id].eaws_score


_CATALOG_MAGIC = "ergohrc-catalog v1"


def parse_catalog(text: str) -> PrimitiveCatalog:
    """Parse the ``id|name|eaws_score|keyframe|keyframe...`` catalog format.

    Each keyframe is a whitespace-separated list of angles. Comment lines
    start with ``#``; a ``# channels: a,b,c`` comment sets channel order.
    """
    channels = REDUCED_CHANNELS
    description = []
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("channels:"):
                channels = tuple(c.strip() for c in body[len("channels:"):].split(","))
            elif body and not body.startswith(_CATALOG_MAGIC):
                description.append(body)
            continue
        parts = line.split("|")
        if len(parts) < 5:
            raise ParseError("expected id|name|eaws_score and at least 2 keyframes", lineno)
        try:
            pid = int(parts[0])
            score = float(parts[2])
            keyframes = [[float(v) for v in kf.split()] for kf in parts[3:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if len({len(k) for k in keyframes}) != 1:
            raise ParseError("keyframes of unequal length", lineno)
        if pid in entries:
            raise ParseError(f"duplicate primitive id {pid}", lineno)
        try:
            entries[pid] = PrimitiveEntry(pid, parts[1].strip(), score, np.array(keyframes))
        except ValidationError as exc:
            raise ParseError(str(exc), lineno) from None
    return PrimitiveCatalog(entries, channels, "\n".join(description))


def format_catalog(catalog: PrimitiveCatalog) -> str:
    lines = [f"# {_CATALOG_MAGIC}", f"# channels: {','.join(catalog.channels)}"]
    lines += [f"# {d}" for d in catalog.description.splitlines()]
    for e in catalog:
        kfs = "|".join(" ".join(f"{v:.6g}" for v in kf) for kf in e.keyframes)
        lines.append(f"{e.id}|{e.name}|{e.eaws_score:g}|{kfs}")
    return "\n".join(lines) + "\n"


def load_catalog(path=None) -> PrimitiveCatalog:
    """Load a catalog file; with no path, the bundled synthetic catalog."""
    if path is None:
        text = resources.files("ergohrc.data").joinpath("default_catalog.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_catalog(text)
