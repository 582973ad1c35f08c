"""Synthetic data and the three-experiment HRC protocol.

Seeds: every random stream is drawn from ``np.random.SeedSequence(root_seed,
spawn_key=key)`` with a stable key (operator index, primitive/repetition
pair, ...), so adding operators or clips never changes existing streams.

Operator motion is a scripted waypoint path in the robot frame (cm). The
wrist rests at a work position at the TV frame and leaves it only to take
a card, to place or screw it, and, without gesture recognition, to walk
over to the robot's force sensor and back for every command.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .hmm import DEFAULT_STATES
from .kpi import (HandoverTrial, KpiRecord, format_kpi_report, motion_magnitude, riom_kpi,
                  spatial_adaptation_kpi)
from .mocap import DEFAULT_FRAME_RATE, MotionClip, PrimitiveCatalog, PrimitiveEntry
from .recognition import ClassificationReport, evaluate_classifier, train_models
from .spatial import (FrameCalibration, HandoverGeometry, SkeletonStream, adapted_handover,
                      axis_aligned_calibration, default_geometry, detect_stillness,
                      to_robot_frame, DEFAULT_HOLD_FRAMES, DEFAULT_SPEED_THRESHOLD)
from .workflow import (HAPPY_PATH, PRESS, ActionKind, Card, GestureController, GestureFrameEvent,
                       GestureId, RobotAction, RoutineRunner, RoutineTrace, WorkflowDefinition,
                       load_workflow)

DEFAULT_ANGLE_NOISE = 3.0  # degrees
DEFAULT_POSITION_NOISE = 1.0  # cm
CAMERA_RATE = 30.0  # Hz


def stream_seed(root_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(root_seed, spawn_key=tuple(int(k) for k in key))


def rng_for(root_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root_seed, *key))


@dataclass(frozen=True)
class SyntheticOperatorProfile:
    operator_id: str
    scale: float = 1.0
    angle_noise: float = DEFAULT_ANGLE_NOISE
    position_noise: float = DEFAULT_POSITION_NOISE
    seed: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError("scale must be positive")
        if self.angle_noise < 0 or self.position_noise < 0:
            raise ValidationError("noise levels must be non-negative")


def make_profiles(n: int, root_seed: int = 0, scales: Sequence[float] | None = None,
                  **kwargs) -> list[SyntheticOperatorProfile]:
    """Operators ``1..n``; scales default to an even spread over [0.85, 1.25]."""
    if scales is None:
        scales = np.linspace(0.85, 1.25, n) if n > 1 else [1.0]
    return [
        SyntheticOperatorProfile(
            operator_id=str(i + 1), scale=float(scales[i]),
            seed=int(stream_seed(root_seed, i).generate_state(1)[0]), **kwargs)
        for i in range(n)
    ]


# -- motion primitives --------------------------------------------------------

def synthesize_primitive_clip(entry: PrimitiveEntry, profile: SyntheticOperatorProfile,
                              duration_s: float = 5.0, frame_rate: float = DEFAULT_FRAME_RATE,
                              channels: Sequence[str] | None = None,
                              seed=None) -> MotionClip:
    """Piecewise-linear pass through the entry's keyframes plus Gaussian noise.

    Keyframes are spread evenly over the clip. ``seed`` overrides the
    profile's seed (an int or a ``SeedSequence``).
    """
    from .mocap import REDUCED_CHANNELS

    n = int(round(duration_s * frame_rate))
    if n < 2:
        raise ValidationError("clip must span at least 2 frames")
    kf = entry.keyframes
    if len(kf) < 2:
        raise ValidationError(f"primitive {entry.id} needs at least 2 keyframes")
    knots = np.linspace(0, n - 1, len(kf))
    frames = np.arange(n)
    angles = np.column_stack([np.interp(frames, knots, kf[:, j]) for j in range(kf.shape[1])])
    rng = np.random.default_rng(profile.seed if seed is None else seed)
    if profile.angle_noise > 0:
        angles = angles + rng.normal(0.0, profile.angle_noise, size=angles.shape)
    return MotionClip(
        channels=tuple(channels or REDUCED_CHANNELS),
        timestamps=frames / frame_rate,
        angles=angles,
        frame_rate=frame_rate,
        label=entry.id,
        clip_id=f"p{entry.id}_op{profile.operator_id}",
    )


def synthesize_dataset(catalog: PrimitiveCatalog, clips_per_primitive: int,
                       root_seed: int = 0, profile: SyntheticOperatorProfile | None = None,
                       duration_s: float = 5.0, offset: int = 0) -> dict[int, list[MotionClip]]:
    """``clips_per_primitive`` labelled clips per catalog entry.

    Clip ``r`` of primitive ``p`` draws its noise from key ``(p, offset + r)``,
    so a held-out set is obtained by a disjoint ``offset``.
    """
    profile = profile or SyntheticOperatorProfile("synthetic")
    out = {}
    for entry in catalog:
        out[entry.id] = [
            synthesize_primitive_clip(entry, profile, duration_s, channels=catalog.channels,
                                      seed=stream_seed(root_seed, entry.id, offset + r)).replace(
                clip_id=f"p{entry.id}_r{offset + r}")
            for r in range(clips_per_primitive)
        ]
    return out


def synthesize_task_recording(task_spec: Sequence[int], profile: SyntheticOperatorProfile,
                              catalog: PrimitiveCatalog, window_seconds: float = 5.0,
                              frame_rate: float = DEFAULT_FRAME_RATE, seed=None,
                              task_id: str | None = None) -> MotionClip:
    """Concatenate one window-length segment per primitive ID in ``task_spec``."""
    task_spec = list(task_spec)
    if not task_spec:
        raise ValidationError("task spec is empty")
    unknown = [p for p in task_spec if p not in catalog.entries]
    if unknown:
        raise ValidationError(f"unknown primitive id(s) {unknown}")
    base = np.random.SeedSequence(profile.seed if seed is None else seed)
    parts = [
        synthesize_primitive_clip(catalog[pid], profile, window_seconds, frame_rate,
                                  catalog.channels, seed=child).angles
        for pid, child in zip(task_spec, base.spawn(len(task_spec)))
    ]
    angles = np.concatenate(parts)
    return MotionClip(catalog.channels, np.arange(len(angles)) / frame_rate, angles,
                      frame_rate, label=task_id, clip_id=task_id)


#: Primitive-ID sequences for four synthetic assembly tasks built on the
#: bundled catalog: T1/T2 dominated by medium-risk primitives, T3/T4 by
#: low-risk ones.
DEFAULT_TASKS = {
    "T1": [10, 10, 10, 8, 10, 11, 10, 9],
    "T2": [9, 9, 12, 9, 8, 10, 9, 6],
    "T3": [4, 4, 6, 4, 9, 2, 4, 5],
    "T4": [6, 6, 5, 6, 7, 4, 6, 10],
}


@dataclass
class RecognitionBenchmark:
    models: dict
    report: ClassificationReport


def recognition_benchmark(catalog: PrimitiveCatalog, n_train: int = 20, n_test: int = 10,
                          root_seed: int = 0, n_states: int = DEFAULT_STATES,
                          angle_noise: float = DEFAULT_ANGLE_NOISE,
                          **train_kwargs) -> RecognitionBenchmark:
    """Train per-primitive models on synthetic clips and score held-out ones."""
    profile = SyntheticOperatorProfile("synthetic", angle_noise=angle_noise)
    train = synthesize_dataset(catalog, n_train, root_seed, profile)
    test = synthesize_dataset(catalog, n_test, root_seed, profile, offset=n_train)
    models = train_models(train, n_states=n_states, **train_kwargs)
    held_out = [c for clips in test.values() for c in clips]
    return RecognitionBenchmark(models, evaluate_classifier(held_out, models, catalog))


# -- three-experiment protocol ------------------------------------------------

class ExperimentMode(enum.Enum):
    NO_GR_NO_SA = "NoGrNoSa"
    GR_ONLY = "GrOnly"
    GR_PLUS_SA = "GrPlusSa"

    @property
    def gestures(self) -> bool:
        return self is not ExperimentMode.NO_GR_NO_SA

    @property
    def adaptation(self) -> bool:
        return self is ExperimentMode.GR_PLUS_SA


@dataclass(frozen=True, eq=False)
class ScenarioLayout:
    """Robot-frame waypoints of the operator's scripted motion (cm).

    Wrist targets are ``shoulder + scale * vector`` so taller operators
    reach further. ``task_moves`` gives the excursion of each in-place work
    gesture (place/screw), traversed out and back.
    """

    shoulder: np.ndarray = (50.0, 32.0, 30.0)
    work_vector: np.ndarray = (0.0, 0.0, -15.0)
    hold_vector: np.ndarray = (-25.0, -15.0, -5.0)
    force_sensor: np.ndarray = (42.0, 24.0, 20.0)
    task_moves: dict = field(default_factory=lambda: {
        GestureId.G3: (0.0, 25.0, -10.0),
        GestureId.G4: (15.0, 20.0, -10.0),
        GestureId.G9: (0.0, -25.0, -10.0),
        GestureId.G5: (15.0, -20.0, -10.0),
    })

    def __post_init__(self):
        for name in ("shoulder", "work_vector", "hold_vector", "force_sensor"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def work_position(self, scale: float) -> np.ndarray:
        return self.shoulder + scale * self.work_vector

    def hold_position(self, scale: float) -> np.ndarray:
        return self.shoulder + scale * self.hold_vector


@dataclass(frozen=True)
class ExperimentConfig:
    mode: ExperimentMode
    repetitions: int = 1
    geometry: HandoverGeometry = field(default_factory=default_geometry)
    definition: WorkflowDefinition = field(default_factory=load_workflow)
    script: tuple = HAPPY_PATH
    layout: ScenarioLayout = field(default_factory=ScenarioLayout)
    calibration: FrameCalibration = field(
        default_factory=lambda: axis_aligned_calibration((0.0, 80.0, 40.0)))
    run_length: int = 20
    idle_frames: int = 10
    glitch_rate: float = 0.02
    frame_budget: int = 5000
    reach_frames: int = 30
    hold_frames_observed: int = 45
    speed_threshold: float = DEFAULT_SPEED_THRESHOLD
    hold_frames: int = DEFAULT_HOLD_FRAMES

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", ExperimentMode(self.mode))


@dataclass(frozen=True, eq=False)
class HandoverOutcome:
    card: Card
    wrist: np.ndarray | None
    position: np.ndarray
    adapted: bool
    sa_percent: float


@dataclass
class OperatorRun:
    profile: SyntheticOperatorProfile
    traces: list
    handovers: list
    path: np.ndarray
    completed: bool

    @property
    def path_length(self) -> float:
        return motion_magnitude(self.path)


@dataclass
class ExperimentResult:
    mode: ExperimentMode
    records: list
    runs: dict
    failed: list

    def kpi_report(self) -> str:
        return format_kpi_report(self.records) if self.records else "operator,SA,RiOM\n"

    def traces_csv(self) -> str:
        out = io.StringIO()
        for op, run in self.runs.items():
            for rep, trace in enumerate(run.traces):
                out.write(f"# operator={op} repetition={rep} completed={int(trace.completed)}\n")
                out.write(trace.to_csv())
        return out.getvalue()


def _observed_wrist(profile, config, rng):
    """Synthesize the camera view of a reach-and-hold and locate the stillness point.

    Returns the robot-frame wrist at the first stillness frame, or ``None``.
    """
    layout = config.layout
    start = layout.work_position(profile.scale)
    hold = layout.hold_position(profile.scale) + rng.normal(0.0, profile.position_noise, 3)
    ramp = np.linspace(0.0, 1.0, config.reach_frames)[:, None]
    robot_path = np.vstack([start + ramp * (hold - start),
                            np.repeat(hold[None], config.hold_frames_observed, axis=0)])
    camera = to_robot_frame(robot_path, config.calibration.inverse())
    t = np.arange(len(camera)) / CAMERA_RATE
    stream = SkeletonStream.from_positions(t, camera).in_robot_frame(config.calibration)
    intervals = detect_stillness(stream, config.speed_threshold, config.hold_frames)
    return stream.positions[intervals[0].start] if intervals else None


def _gesture_frames(gesture, config, rng, frame_index):
    """Idle G7 frames, then the gesture held until the debounce would confirm it.

    Frames are misrecognised with probability ``glitch_rate``.
    """
    frames = []
    others = [g for g in GestureId if g != gesture]
    for _ in range(config.idle_frames):
        frames.append(GestureId.G7)
    run = 0
    while run < config.run_length and len(frames) < config.frame_budget:
        if rng.random() < config.glitch_rate:
            frames.append(others[rng.integers(len(others))])
            run = 0
        else:
            frames.append(gesture)
            run += 1
    return [GestureFrameEvent(frame_index + i, g, (frame_index + i) / CAMERA_RATE)
            for i, g in enumerate(frames)]


def _run_operator(config: ExperimentConfig, profile: SyntheticOperatorProfile,
                  mode: ExperimentMode) -> OperatorRun:
    rng = np.random.default_rng(profile.seed)
    layout, geometry = config.layout, config.geometry
    work = layout.work_position(profile.scale)
    path = [work]
    traces, handovers = [], []
    completed = True
    card_position = {}

    def resolve(action: RobotAction) -> RobotAction:
        if action.kind is not ActionKind.MOVE_TO_HANDOVER:
            return action
        wrist = _observed_wrist(profile, config, rng) if mode.adaptation else None
        if wrist is None:
            pos, adapted = geometry.default_handover.copy(), False
        else:
            pos, adapted = adapted_handover(wrist, geometry, True)
        sa = spatial_adaptation_kpi(HandoverTrial(geometry.waiting_point,
                                                  geometry.default_handover, pos))
        handovers.append(HandoverOutcome(action.card, wrist, pos, adapted, sa))
        card_position[action.card] = pos
        return RobotAction(action.kind, action.card, tuple(float(v) for v in pos))

    for _ in range(config.repetitions):
        frame_index = 0
        if mode.gestures:
            controller = GestureController(config.definition, config.run_length, resolve)
            runner = controller.runner
        else:
            runner = RoutineRunner(config.definition, resolve)
        for command in config.script:
            if runner.done:
                break
            if command is PRESS:
                runner.submit(PRESS)
            elif mode.gestures:
                for event in _gesture_frames(command, config, rng, frame_index):
                    controller.on_frame(event)
                frame_index = event.frame_index + 1
                if frame_index > config.frame_budget:
                    break
            else:
                runner.submit(command)
        traces.append(runner.trace)
        completed &= runner.trace.completed
        path.extend(_operator_waypoints(runner.trace, mode, layout, profile.scale, work))
    return OperatorRun(profile, traces, handovers, np.array(path), completed)


def _operator_waypoints(trace: RoutineTrace, mode, layout, scale, work):
    """Wrist waypoints implied by the accepted commands of one routine."""
    points = []
    holding = {}
    for entry in trace.entries:
        if entry.action is not None and entry.action.kind is ActionKind.MOVE_TO_HANDOVER:
            holding["card"] = np.array(entry.action.position)
        if not entry.accepted or entry.command == "auto":
            continue
        if entry.command is PRESS:
            points += [holding["card"], work]
            continue
        if not mode.gestures:
            points += [layout.force_sensor, work]
        move = layout.task_moves.get(entry.command)
        if move is not None:
            points += [work + scale * np.asarray(move, dtype=float), work]
    return points


def run_experiment(config: ExperimentConfig,
                   profiles: Sequence[SyntheticOperatorProfile]) -> ExperimentResult:
    """Run one experiment for every operator.

    RiOM compares each operator's path with that operator's path under
    ``NoGrNoSa``; SA is the mean over the operator's handovers.
    """
    records, runs, failed = [], {}, []
    for profile in profiles:
        run = _run_operator(config, profile, config.mode)
        runs[profile.operator_id] = run
        if not run.completed:
            failed.append(profile.operator_id)
            continue
        if config.mode is ExperimentMode.NO_GR_NO_SA:
            baseline = run
        else:
            baseline = _run_operator(config, profile, ExperimentMode.NO_GR_NO_SA)
        sa = float(np.mean([h.sa_percent for h in run.handovers])) if run.handovers else 0.0
        records.append(KpiRecord(profile.operator_id, sa,
                                 riom_kpi(baseline.path_length, run.path_length)))
    return ExperimentResult(config.mode, records, runs, failed)


def run_protocol(profiles: Sequence[SyntheticOperatorProfile],
                 **config_kwargs) -> dict[ExperimentMode, ExperimentResult]:
    """All three experiments with a shared configuration."""
    return {mode: run_experiment(ExperimentConfig(mode, **config_kwargs), profiles)
            for mode in ExperimentMode}
