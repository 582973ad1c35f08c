import socket
import time
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergohrc.errors import DatagramError, ParseError, ValidationError
from ergohrc.workflow import (ALL_COMMANDS, HAPPY_PATH, PRESS, ActionKind, Card, GestureController,
                              GestureFrameEvent, GestureId, GestureReceiver, RobotAction,
                              UdpGestureListener, debounce, decode_datagram, encode_datagram,
                              format_workflow, load_workflow, measure_pipeline_latency,
                              parse_command, parse_workflow, run_routine)

G = GestureId


@pytest.fixture(scope="module")
def tv():
    return load_workflow()


def _events(gestures, start=0):
    return [GestureFrameEvent(start + i, G(g)) for i, g in enumerate(gestures)]


def naive_debounce(gestures, run_length):
    """Re-scan backwards from every frame to the last emission."""
    out, last_emit = [], -1
    for i, g in enumerate(gestures):
        j = i
        while j > last_emit and gestures[j] == g:
            j -= 1
        if i - j == run_length:
            out.append((g, i))
            last_emit = i
    return out


# -- debounce -----------------------------------------------------------------

def test_twenty_frames_confirm_once():
    (cmd,) = debounce(_events([1] * 20, start=1))
    assert cmd.gesture is G.G1 and cmd.frame_index == 20


def test_interrupted_run_never_confirms():
    assert debounce(_events([1] * 19 + [7] + [1] * 19)) == []


def test_forty_frames_confirm_twice():
    cmds = debounce(_events([3] * 40, start=1))
    assert [(c.gesture, c.frame_index) for c in cmds] == [(G.G3, 20), (G.G3, 40)]


def test_frame_gap_restarts_run():
    events = _events([1] * 10) + _events([1] * 10, start=11)
    assert debounce(events) == []


def test_run_length_validation():
    with pytest.raises(ValidationError):
        debounce([], run_length=0)


@settings(max_examples=300)
@given(st.lists(st.integers(1, 3), max_size=200), st.integers(1, 6))
def test_debounce_matches_naive_scan(gestures, run_length):
    got = [(int(c.gesture), c.frame_index) for c in debounce(_events(gestures), run_length)]
    assert got == naive_debounce(gestures, run_length)


# -- routine ------------------------------------------------------------------

def test_step_examples(tv):
    assert tv.step("Idle", G.G1) == ("FetchGreen", RobotAction(ActionKind.FETCH_CARD, Card.GREEN),
                                     True)
    assert tv.step("HandoverGreen", G.G4) == ("HandoverGreen", None, False)
    assert tv.step("AwaitGreenVerify", G.G10) == (
        "FetchGreen", RobotAction(ActionKind.FETCH_CARD, Card.GREEN), True)
    with pytest.raises(ValidationError):
        tv.step("Nowhere", G.G1)


def test_happy_path_completes(tv):
    trace = run_routine(tv, HAPPY_PATH)
    assert trace.completed and trace.final_state == "Done"
    assert not trace.rejected
    kinds = [a.kind for a in trace.actions]
    assert kinds.count(ActionKind.RELEASE_CARD) == 2
    assert kinds[-1] is ActionKind.HALT
    handovers = [a.card for a in trace.actions if a.kind is ActionKind.MOVE_TO_HANDOVER]
    assert handovers == [Card.GREEN, Card.GOLD]


def test_partial_and_all_invalid_streams(tv):
    partial = run_routine(tv, HAPPY_PATH[:4])
    assert not partial.completed and partial.final_state == "ScrewGreen"
    invalid = run_routine(tv, [G.G6, G.G4, PRESS, G.G7, G.G11])
    assert all(s == "Idle" for s in invalid.states)
    assert len(invalid.rejected) == 5 and invalid.actions == []


def _fetches(trace):
    return sum(1 for a in trace.actions if a.kind is ActionKind.FETCH_CARD)


def test_replacement_branches_add_one_fetch(tv):
    base = run_routine(tv, HAPPY_PATH)
    green = list(HAPPY_PATH)
    green[2:2] = [G.G10, PRESS]  # reject the green card once
    gold = list(HAPPY_PATH)
    gold[6:6] = [G.G11, PRESS]  # reject the gold card once
    for script in (green, gold):
        trace = run_routine(tv, script)
        assert trace.completed
        assert _fetches(trace) == _fetches(base) + 1


def test_exhaustive_safety(tv):
    allowed = tv.actions()
    seen, frontier = {tv.initial}, deque([tv.initial])
    while frontier:
        state = frontier.popleft()
        for cmd in ALL_COMMANDS:
            nxt, action, accepted = tv.step(state, cmd)
            if not accepted:
                assert nxt == state and action is None
                continue
            assert action is None or action in allowed
            auto = tv.auto_step(nxt)
            while auto is not None:
                assert auto.action is None or auto.action in allowed
                nxt = auto.state
                auto = tv.auto_step(nxt)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    assert tv.final in seen
    assert not tv.accept_set(tv.final)


@settings(max_examples=200)
@given(st.lists(st.sampled_from(ALL_COMMANDS), max_size=40))
def test_fuzzed_commands(commands):
    tv = load_workflow()
    trace = run_routine(tv, commands)
    for e in trace.entries:
        if not e.accepted:
            assert e.state_before == e.state_after and e.action is None
    again = run_routine(tv, commands)
    assert again.to_csv() == trace.to_csv()


def test_trace_csv(tv):
    lines = run_routine(tv, [G.G1, G.G4]).to_csv().splitlines()
    assert lines[0] == "event_index,state_before,command,accepted,action,state_after"
    assert lines[1] == "0,Idle,G1,1,FetchCard(Green),FetchGreen"
    assert lines[2] == "1,FetchGreen,auto,1,MoveToHandover(Green),HandoverGreen"
    assert lines[3] == "2,HandoverGreen,G4,0,,HandoverGreen"


def test_workflow_text_roundtrip(tv):
    again = parse_workflow(format_workflow(tv))
    assert again == tv


@pytest.mark.parametrize("text", [
    "states A B\ninitial A\nfinal B\nA G1 -> C : -\n",
    "states A B\ninitial A\nfinal B\nB G1 -> A : -\n",
    "states A B\ninitial A\nfinal B\nA G12 -> B : -\n",
    "states A B\ninitial A\nfinal B\nA G1 -> B : Dance\n",
    "states A B\ninitial A\nA G1 -> B : -\n",
    "states A B C\ninitial A\nfinal C\nA auto -> B : -\nB auto -> A : -\n",
])
def test_bad_definitions(text):
    with pytest.raises(ParseError):
        parse_workflow(text)


def test_parse_command():
    assert parse_command("g7") is G.G7 and parse_command("press") is PRESS
    with pytest.raises(ValidationError):
        parse_command("G0")


# -- transport ----------------------------------------------------------------

def test_datagram_examples():
    ev = decode_datagram(b"412 7\n", timestamp=1.5)
    assert (ev.frame_index, ev.gesture, ev.timestamp) == (412, G.G7, 1.5)
    with pytest.raises(DatagramError):
        decode_datagram(b"hello")
    with pytest.raises(DatagramError):
        decode_datagram(b"10 12\n")
    assert encode_datagram(412, G.G7) == b"412 7\n"


@given(st.binary(max_size=30))
def test_receiver_never_raises(payload):
    receiver = GestureReceiver()
    event = receiver.accept(payload, timestamp=0.0)
    assert (event is None) == (receiver.rejected_total == 1)


def test_receiver_counts():
    r = GestureReceiver()
    for p in (b"1 1\n", b"2 1\n", b"2 1\n", b"1 3\n", b"3 0\n", b"x\n", b"4 11\n"):
        r.accept(p, timestamp=0.0)
    assert r.accepted == 3
    assert r.rejected == {"malformed": 1, "out_of_range": 1, "out_of_order": 2}


def test_udp_listener_drives_controller(tv):
    controller = GestureController(tv, run_length=5)
    with UdpGestureListener("127.0.0.1", 0) as listener:
        sender = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sender.sendto(b"garbage", listener.address)
            for i in range(1, 6):
                sender.sendto(encode_datagram(i, G.G1), listener.address)
            deadline = time.monotonic() + 5.0
            while controller.runner.state == "Idle" and time.monotonic() < deadline:
                try:
                    event = listener.events.get(timeout=0.1)
                except Exception:
                    continue
                controller.on_frame(event)
        finally:
            sender.close()
        while listener.receiver.rejected_total < 1 and time.monotonic() < deadline:
            time.sleep(0.01)
    assert controller.runner.state == "HandoverGreen"
    assert listener.receiver.rejected["malformed"] == 1
    assert [c.frame_index for c in controller.confirmed] == [5]


def test_controller_press_and_done(tv):
    controller = GestureController(tv, run_length=2)
    frame = 0
    for cmd in HAPPY_PATH:
        if cmd is PRESS:
            assert controller.on_press().accepted
            continue
        for _ in range(2):
            result = controller.on_frame(GestureFrameEvent(frame, cmd))
            frame += 1
        assert result.accepted
    assert controller.done
    assert controller.on_press() is None


def test_latency_idle_stream_cadence():
    stream = [encode_datagram(i, G.G7) for i in range(1, 10_001)]
    report = measure_pipeline_latency(stream)
    assert report.durations_s.shape == (10_000,)
    assert np.all(np.isfinite(report.durations_s)) and np.all(report.durations_s >= 0)
    assert [c.frame_index for c in report.commands] == list(range(20, 10_001, 20))
    with pytest.raises(ValidationError):
        measure_pipeline_latency([])
