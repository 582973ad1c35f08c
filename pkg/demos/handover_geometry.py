"""From a camera-frame wrist track to an adapted handover position and its SA value."""

import numpy as np

from ergohrc.kpi import HandoverTrial, spatial_adaptation_kpi
from ergohrc.spatial import (SkeletonStream, axis_aligned_calibration, default_geometry,
                             detect_stillness, handover_from_stream, to_robot_frame)

rng = np.random.default_rng(0)
cal = axis_aligned_calibration((0.0, 80.0, 40.0))
geo = default_geometry()

# camera frame (cm): the wrist reaches out for one second, then holds still
t = np.arange(90) / 30.0
reach = np.clip(t, 0, 1)[:, None]
start, hold = np.array([30.0, 0.0, -60.0]), np.array([20.0, 20.0, -70.0])
camera = start + reach * (hold - start) + rng.normal(0, 0.01, (90, 3))

stream = SkeletonStream.from_positions(t, np.array([to_robot_frame(p, cal) for p in camera]))
print("stillness intervals (frames):", [(i.start, i.stop) for i in detect_stillness(stream)])

position, adapted = handover_from_stream(stream, geo)
print(f"handover at {np.round(position, 1)} cm, adapted={adapted}")
sa = spatial_adaptation_kpi(HandoverTrial(geo.waiting_point, geo.default_handover, position))
print(f"SA for this handover: {sa:+.2f}%")
