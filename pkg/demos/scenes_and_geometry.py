"""
Synthetic roads and flat-ground geometry
========================================

Render a few degraded scenes, then read metric distances off the image
with the pinhole camera model.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from egocorridor.camera import default_camera, ground_to_pixel, pixel_to_ground, row_distance
from egocorridor.netpbm import write_pgm
from egocorridor.scene_forge import SceneSpec, render_frame

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="scenes-"))
out.mkdir(parents=True, exist_ok=True)
cam = default_camera()  # 160x96 desk camera, 1.5 m high, pitched 2 degrees down

# The same road under each degradation; the ground-truth mask never changes.
for kind in ("none", "heavy_rain", "faded_lines", "shadows"):
    spec = SceneSpec(lane_width=3.5, curvature=0.001, lead_distance=35.0, degradation=kind, severity=0.8, seed=3)
    img, mask = render_frame(spec, cam, t=2.0)
    write_pgm(out / f"{kind}.pgm", img)
    write_pgm(out / f"{kind}_mask.pgm", mask * 255)
    print(f"{kind:12s} mean intensity {img.mean():6.1f}  corridor pixels {int(mask.sum())}")

# A lane border 20 m ahead, and back again.
u, v = ground_to_pixel(cam, (1.75, 20.0))
print(f"(1.75 m, 20 m) -> pixel ({u:.1f}, {v:.1f}) -> ground {pixel_to_ground(cam, (u, v))}")

# How far each image row looks.
rows = np.array([95.0, 80.0, 60.0, 50.0])
for r, d in zip(rows, row_distance(cam, rows)):
    print(f"row {int(r):3d}: {d:6.1f} m")
print(f"images written to {out}")
