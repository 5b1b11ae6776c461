"""
Classical lane pairs and where they break
=========================================

The Hough baseline finds the ego-lane on clean solid markings and loses it
once the paint fades. Its configuration stays frozen across categories.
"""
import dataclasses

from egocorridor import hough_baseline as hb
from egocorridor.camera import default_camera
from egocorridor.corridor_eval import frame_availability
from egocorridor.errors import NoPair
from egocorridor.scene_forge import SceneSpec, render_frame

cam = default_camera()
config = hb.HoughConfig()
clean = SceneSpec(marking_style="solid", seed=4)

for spec in (clean, dataclasses.replace(clean, degradation="faded_lines", severity=0.9),
             dataclasses.replace(clean, degradation="heavy_rain", severity=0.8)):
    img, _ = render_frame(spec, cam, t=1.0)
    est = hb.estimate_corridor(img, cam, config)
    ok = frame_availability(est, 25.0)
    print(f"{spec.category:12s} width {est.width or 0:4.2f} m  length {est.length or 0:5.1f} m  available {ok}")

# Step by step on the clean frame: edges, strongest lines, lane pair.
img, _ = render_frame(clean, cam, t=1.0)
lines = hb.hough_lines(hb.detect_edges(img, config, hb.roi_top(cam)), config)
print(f"{len(lines)} lines, strongest: {lines[0]}")
try:
    left, right = hb.select_lane_pair(lines, cam)
    print(f"lane borders at x = {hb.ground_track(left, cam).x0:+.2f} m and {hb.ground_track(right, cam).x0:+.2f} m")
except NoPair as exc:
    print(f"no pair: {exc}")
