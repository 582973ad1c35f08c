"""Drive the TV-assembly routine with gesture IDs sent over UDP.

A sender thread plays the part of the gesture recogniser: it streams one
datagram per camera frame, holding each gesture long enough to pass the
debouncer, with a few glitch frames mixed in. The force-sensor presses are
simulated whenever the routine waits for one.
"""

import logging
import queue
import socket
import threading
import time

from ergohrc.workflow import (HAPPY_PATH, PRESS, GestureController, UdpGestureListener,
                              encode_datagram, load_workflow)

logging.basicConfig(level=logging.WARNING)

RUN = 20
definition = load_workflow()
gestures = [c for c in HAPPY_PATH if c is not PRESS]
controller = GestureController(definition, run_length=RUN)


def send(address):
    frame = 0
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        for g in gestures:
            for k in range(RUN + 8):
                frame += 1
                gid = 7 if k == 5 else int(g)  # a single misrecognised frame
                s.sendto(encode_datagram(frame, gid), address)
            s.sendto(b"garbage\n", address)
            time.sleep(0.02)


with UdpGestureListener() as listener:
    sender = threading.Thread(target=send, args=(listener.address,))
    sender.start()
    deadline = time.monotonic() + 10
    while not controller.done and time.monotonic() < deadline:
        if definition.step(controller.runner.state, PRESS).accepted:
            controller.on_press()
            continue
        try:
            controller.on_frame(listener.events.get(timeout=0.1))
        except queue.Empty:
            pass
    sender.join()
    rejects = dict(listener.receiver.rejected)

trace = controller.trace
print(f"confirmed commands: {[c.gesture.name for c in controller.confirmed]}")
print(f"transport rejects: {rejects}")
print(f"routine completed: {trace.completed}\n")
for e in trace.entries:
    action = "" if e.action is None else f"  -> {e.action}"
    print(f"{e.state_before:>17} --{e.command}--> {e.state_after}{action}")
