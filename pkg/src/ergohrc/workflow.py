"""Gesture-driven HRC routine: debounce, workflow filtering and UDP transport.

Control is two-level. A :class:`Debouncer` turns per-frame gesture IDs into
commands only after a gesture has been seen on ``run_length`` consecutive
frames. The :class:`WorkflowDefinition` then accepts a command only if it
is valid in the current routine state; anything else is logged and ignored.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import queue
import re
import socket
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DatagramError, ParseError, ValidationError

_log = logging.getLogger(__name__)

DEFAULT_RUN_LENGTH = 20


class GestureId(enum.IntEnum):
    G1 = 1    # Start
    G2 = 2    # green card functioning
    G3 = 3    # place green card
    G4 = 4    # screw green card
    G5 = 5    # screw gold card
    G6 = 6    # End
    G7 = 7    # Waiting
    G8 = 8    # gold card functioning
    G9 = 9    # place gold card
    G10 = 10  # green card not functioning
    G11 = 11  # gold card not functioning

    def __str__(self):
        return self.name


GESTURE_MEANINGS = {
    GestureId.G1: "Start",
    GestureId.G2: "Green card functioning",
    GestureId.G3: "Place green card",
    GestureId.G4: "Screw green card",
    GestureId.G5: "Screw gold card",
    GestureId.G6: "End",
    GestureId.G7: "Waiting",
    GestureId.G8: "Gold card functioning",
    GestureId.G9: "Place gold card",
    GestureId.G10: "Green card not functioning",
    GestureId.G11: "Gold card not functioning",
}


class ForceSensorPress(enum.Enum):
    """The operator pressing the robot's force-torque sensor."""

    PRESS = "PRESS"

    def __str__(self):
        return self.value


PRESS = ForceSensorPress.PRESS
AUTO = "auto"

ALL_COMMANDS = tuple(GestureId) + (PRESS,)


def parse_command(token: str):
    token = token.strip()
    if token.upper() == "PRESS":
        return PRESS
    m = re.fullmatch(r"[Gg](\d+)", token)
    if m:
        try:
            return GestureId(int(m.group(1)))
        except ValueError:
            pass
    raise ValidationError(f"unknown command {token!r}")


class Card(enum.Enum):
    GREEN = "Green"
    GOLD = "Gold"


class ActionKind(enum.Enum):
    FETCH_CARD = "FetchCard"
    MOVE_TO_HANDOVER = "MoveToHandover"
    RELEASE_CARD = "ReleaseCard"
    RETURN_TO_WAIT = "ReturnToWait"
    HALT = "Halt"


_CARD_ACTIONS = {ActionKind.FETCH_CARD, ActionKind.MOVE_TO_HANDOVER}


@dataclass(frozen=True)
class RobotAction:
    kind: ActionKind
    card: Card | None = None
    position: tuple | None = None

    def __post_init__(self):
        if (self.kind in _CARD_ACTIONS) != (self.card is not None):
            raise ValidationError(f"{self.kind.value} card argument is malformed")
        if self.position is not None and self.kind is not ActionKind.MOVE_TO_HANDOVER:
            raise ValidationError("only MoveToHandover takes a position")

    def template(self) -> "RobotAction":
        """The action with any runtime position stripped."""
        return RobotAction(self.kind, self.card) if self.position is not None else self

    def __str__(self):
        args = []
        if self.card is not None:
            args.append(self.card.value)
        if self.position is not None:
            args.append("@" + " ".join(f"{v:.3f}" for v in self.position))
        return f"{self.kind.value}({' '.join(args)})" if args else self.kind.value

    @classmethod
    def parse(cls, text: str) -> "RobotAction | None":
        parts = text.split()
        if not parts or parts == ["-"]:
            return None
        try:
            kind = ActionKind(parts[0])
            card = Card(parts[1]) if len(parts) > 1 else None
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        if len(parts) > 2:
            raise ValidationError(f"too many action arguments in {text!r}")
        return cls(kind, card)


class StepResult(NamedTuple):
    state: str
    action: RobotAction | None
    accepted: bool


@dataclass(frozen=True)
class WorkflowDefinition:
    """States, per-state accepted commands and the robot action of each transition.

    ``auto`` maps a state to the transition the robot takes on its own once
    it finishes the motion started on entering that state.
    """

    states: tuple
    initial: str
    final: str
    transitions: dict
    auto: dict = field(default_factory=dict)

    def __post_init__(self):
        states = set(self.states)
        if len(states) != len(self.states):
            raise ValidationError("duplicate state names")
        for name in (self.initial, self.final):
            if name not in states:
                raise ValidationError(f"unknown state {name!r}")
        for (src, cmd), (dst, _) in self.transitions.items():
            if src not in states or dst not in states:
                raise ValidationError(f"transition {src} -{cmd}-> {dst} uses unknown state")
            if cmd not in ALL_COMMANDS:
                raise ValidationError(f"invalid command {cmd!r}")
        for src, (dst, _) in self.auto.items():
            if src not in states or dst not in states:
                raise ValidationError(f"auto transition {src} -> {dst} uses unknown state")
        if any(src == self.final for src, _ in self.transitions) or self.final in self.auto:
            raise ValidationError(f"final state {self.final} must have no outgoing transitions")
        for start in self.auto:
            seen, state = set(), start
            while state in self.auto:
                if state in seen:
                    raise ValidationError(f"auto transitions loop through {state}")
                seen.add(state)
                state = self.auto[state][0]

    def accept_set(self, state: str) -> frozenset:
        return frozenset(cmd for (src, cmd) in self.transitions if src == state)

    def actions(self) -> set:
        return {a for _, a in self.transitions.values() if a is not None} | {
            a for _, a in self.auto.values() if a is not None}

    def step(self, state: str, command) -> StepResult:
        """Apply one confirmed command. Invalid commands leave the state as is."""
        if state not in self.states:
            raise ValidationError(f"unknown state {state!r}")
        target = self.transitions.get((state, command))
        if target is None:
            _log.info("rejected %s in state %s", command, state)
            return StepResult(state, None, False)
        return StepResult(target[0], target[1], True)

    def auto_step(self, state: str) -> StepResult | None:
        target = self.auto.get(state)
        return None if target is None else StepResult(target[0], target[1], True)


def parse_workflow(text: str) -> WorkflowDefinition:
    states, initial, final = None, None, None
    transitions, auto = {}, {}
    pattern = re.compile(r"(\S+)\s+(\S+)\s*->\s*(\S+)\s*:\s*(.*)")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        try:
            if key == "states":
                states = tuple(rest.split())
            elif key == "initial":
                initial = rest.strip()
            elif key == "final":
                final = rest.strip()
            else:
                m = pattern.fullmatch(line)
                if not m:
                    raise ValidationError("expected '<state> <command> -> <state> : <action>'")
                src, cmd, dst, action = m.groups()
                action = RobotAction.parse(action)
                if cmd == AUTO:
                    if src in auto:
                        raise ValidationError(f"second auto transition from {src}")
                    auto[src] = (dst, action)
                else:
                    command = parse_command(cmd)
                    if (src, command) in transitions:
                        raise ValidationError(f"duplicate transition {src} {cmd}")
                    transitions[(src, command)] = (dst, action)
        except ValidationError as exc:
            raise ParseError(str(exc), lineno) from None
    if states is None or initial is None or final is None:
        raise ParseError("workflow needs 'states', 'initial' and 'final' lines")
    try:
        return WorkflowDefinition(states, initial, final, transitions, auto)
    except ValidationError as exc:
        raise ParseError(str(exc)) from None


def format_workflow(definition: WorkflowDefinition) -> str:
    lines = ["# ergohrc-workflow v1",
             "states " + " ".join(definition.states),
             f"initial {definition.initial}",
             f"final {definition.final}"]

    def fmt(action):
        if action is None:
            return "-"
        return f"{action.kind.value} {action.card.value}" if action.card else action.kind.value

    for (src, cmd), (dst, action) in definition.transitions.items():
        lines.append(f"{src} {cmd} -> {dst} : {fmt(action)}")
    for src, (dst, action) in definition.auto.items():
        lines.append(f"{src} {AUTO} -> {dst} : {fmt(action)}")
    return "\n".join(lines) + "\n"


def load_workflow(path=None) -> WorkflowDefinition:
    """Load a workflow file; with no path, the bundled TV-assembly routine."""
    if path is None:
        text = resources.files("ergohrc.data").joinpath("tv_assembly_workflow.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_workflow(text)


#: Confirmed-command script that completes the bundled routine.
HAPPY_PATH = (
    GestureId.G1, PRESS, GestureId.G2, GestureId.G3, GestureId.G4,
    PRESS, GestureId.G8, GestureId.G9, GestureId.G5, GestureId.G6,
)


# -- routine execution --------------------------------------------------------

@dataclass(frozen=True)
class TraceEntry:
    event_index: int
    state_before: str
    command: object
    accepted: bool
    action: RobotAction | None
    state_after: str


@dataclass
class RoutineTrace:
    entries: list = field(default_factory=list)
    completed: bool = False

    @property
    def states(self) -> list:
        if not self.entries:
            return []
        return [self.entries[0].state_before] + [e.state_after for e in self.entries]

    @property
    def actions(self) -> list:
        return [e.action for e in self.entries if e.action is not None]

    @property
    def rejected(self) -> list:
        return [e for e in self.entries if not e.accepted]

    @property
    def final_state(self) -> str | None:
        return self.entries[-1].state_after if self.entries else None

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["event_index", "state_before", "command", "accepted", "action", "state_after"])
        for e in self.entries:
            writer.writerow([e.event_index, e.state_before, str(e.command), int(e.accepted),
                             "" if e.action is None else str(e.action), e.state_after])
        return out.getvalue()


class RoutineRunner:
    """Single consumer that owns the workflow state.

    ``resolve_action`` may rewrite actions before they are recorded, e.g. to
    attach the handover position computed at runtime.
    """

    def __init__(self, definition: WorkflowDefinition,
                 resolve_action: Callable[[RobotAction], RobotAction] | None = None):
        self.definition = definition
        self.state = definition.initial
        self.trace = RoutineTrace()
        self._resolve = resolve_action

    @property
    def done(self) -> bool:
        return self.state == self.definition.final

    def _record(self, command, result):
        action = result.action
        if action is not None and self._resolve is not None:
            action = self._resolve(action)
        self.trace.entries.append(TraceEntry(len(self.trace.entries), self.state, command,
                                             result.accepted, action, result.state))
        self.state = result.state
        return action

    def submit(self, command) -> StepResult:
        result = self.definition.step(self.state, command)
        action = self._record(command, result)
        if result.accepted:
            while (auto := self.definition.auto_step(self.state)) is not None:
                self._record(AUTO, auto)
        self.trace.completed = self.done
        return StepResult(result.state, action, result.accepted)


def run_routine(definition: WorkflowDefinition, commands: Iterable,
                resolve_action: Callable[[RobotAction], RobotAction] | None = None) -> RoutineTrace:
    """Feed confirmed commands through the routine until it completes.

    Commands after the final state is reached are not consumed.
    """
    runner = RoutineRunner(definition, resolve_action)
    for command in commands:
        if runner.done:
            break
        runner.submit(command)
    return runner.trace


# -- debounce -----------------------------------------------------------------

@dataclass(frozen=True)
class GestureFrameEvent:
    frame_index: int
    gesture: GestureId
    timestamp: float = 0.0


@dataclass(frozen=True)
class ConfirmedCommand:
    gesture: GestureId
    frame_index: int


class Debouncer:
    """Emit a gesture once it has been recognised on ``run_length`` consecutive frames.

    The run counter restarts after each emission, so a gesture held for
    ``2 * run_length`` frames is emitted twice. A different gesture, or a gap
    in frame indices, starts a new run.
    """

    def __init__(self, run_length: int = DEFAULT_RUN_LENGTH):
        if run_length < 1:
            raise ValidationError("run_length must be >= 1")
        self.run_length = run_length
        self.reset()

    def reset(self):
        self._gesture = None
        self._count = 0
        self._last_frame = None

    def push(self, event: GestureFrameEvent) -> ConfirmedCommand | None:
        contiguous = self._last_frame is not None and event.frame_index == self._last_frame + 1
        if contiguous and event.gesture == self._gesture:
            self._count += 1
        else:
            self._gesture = event.gesture
            self._count = 1
        self._last_frame = event.frame_index
        if self._count == self.run_length:
            self._count = 0
            return ConfirmedCommand(event.gesture, event.frame_index)
        return None


def debounce(stream: Iterable[GestureFrameEvent],
             run_length: int = DEFAULT_RUN_LENGTH) -> list[ConfirmedCommand]:
    d = Debouncer(run_length)
    return [c for c in map(d.push, stream) if c is not None]


# -- transport ----------------------------------------------------------------

_DATAGRAM = re.compile(rb"(\d{1,18}) (\d{1,3})\n")


def encode_datagram(frame_index: int, gesture) -> bytes:
    return f"{int(frame_index)} {int(gesture)}\n".encode("ascii")


def decode_datagram(payload: bytes, timestamp: float | None = None) -> GestureFrameEvent:
    """Parse ``b"<frame_index> <gesture_id>\\n"``; raise :class:`DatagramError` otherwise."""
    m = _DATAGRAM.fullmatch(payload)
    if m is None:
        raise DatagramError(f"malformed datagram {payload[:40]!r}")
    gesture = int(m.group(2))
    if not 1 <= gesture <= 11:
        raise DatagramError(f"gesture id {gesture} outside 1..11")
    return GestureFrameEvent(int(m.group(1)), GestureId(gesture),
                             time.monotonic() if timestamp is None else timestamp)


class GestureReceiver:
    """Decodes datagrams, drops stale or duplicate frames, and counts rejects."""

    def __init__(self):
        self.accepted = 0
        self.rejected = {"malformed": 0, "out_of_range": 0, "out_of_order": 0}
        self._last_frame = -1

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())

    def accept(self, payload: bytes, timestamp: float | None = None) -> GestureFrameEvent | None:
        try:
            event = decode_datagram(payload, timestamp)
        except DatagramError as exc:
            key = "out_of_range" if "outside" in str(exc) else "malformed"
            self.rejected[key] += 1
            _log.debug("transport reject: %s", exc)
            return None
        if event.frame_index <= self._last_frame:
            self.rejected["out_of_order"] += 1
            return None
        self._last_frame = event.frame_index
        self.accepted += 1
        return event


class UdpGestureListener:
    """Background UDP receiver that enqueues decoded gesture events.

    Only the consumer of :attr:`events` should touch workflow state.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, maxsize: int = 0):
        self.receiver = GestureReceiver()
        self.events: queue.Queue = queue.Queue(maxsize)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.1)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="udp-gestures", daemon=True)

    @property
    def address(self):
        return self._sock.getsockname()

    def start(self):
        self._thread.start()
        return self

    def _run(self):
        while not self._stop.is_set():
            try:
                payload, _ = self._sock.recvfrom(512)
            except socket.timeout:
                continue
            except OSError:
                break
            event = self.receiver.accept(payload)
            if event is not None:
                self.events.put(event)

    def close(self):
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join()
        self._sock.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


class GestureController:
    """Debounce plus workflow filter: the consumer side of the transport."""

    def __init__(self, definition: WorkflowDefinition, run_length: int = DEFAULT_RUN_LENGTH,
                 resolve_action=None):
        self.debouncer = Debouncer(run_length)
        self.runner = RoutineRunner(definition, resolve_action)
        self.confirmed: list[ConfirmedCommand] = []

    @property
    def trace(self) -> RoutineTrace:
        return self.runner.trace

    @property
    def done(self) -> bool:
        return self.runner.done

    def on_frame(self, event: GestureFrameEvent) -> StepResult | None:
        command = self.debouncer.push(event)
        if command is None or self.runner.done:
            return None
        self.confirmed.append(command)
        return self.runner.submit(command.gesture)

    def on_press(self) -> StepResult | None:
        if self.runner.done:
            return None
        return self.runner.submit(PRESS)


# -- latency ------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyReport:
    durations_s: np.ndarray
    commands: tuple

    @property
    def max(self) -> float:
        return float(self.durations_s.max())

    @property
    def p99(self) -> float:
        return float(np.percentile(self.durations_s, 99))


def measure_pipeline_latency(stream: Sequence[bytes],
                             run_length: int = DEFAULT_RUN_LENGTH) -> LatencyReport:
    """Wall-clock time from datagram decode to debounce decision, per frame."""
    if not stream:
        raise ValidationError("latency measurement needs a non-empty stream")
    receiver = GestureReceiver()
    debouncer = Debouncer(run_length)
    durations = np.empty(len(stream))
    commands = []
    clock = time.perf_counter_ns
    for i, payload in enumerate(stream):
        start = clock()
        event = receiver.accept(payload, timestamp=0.0)
        command = debouncer.push(event) if event is not None else None
        durations[i] = clock() - start
        if command is not None:
            commands.append(command)
    return LatencyReport(durations * 1e-9, tuple(commands))
