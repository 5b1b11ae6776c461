"""
A small training run end to end
===============================

Generate frames, train the desk network for a few epochs, score held-out
IoU and compare both detectors on one sequence. For the full desk run
use the CLI (see README) with 300 frames and 30 epochs.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from egocorridor import hough_baseline as hb
from egocorridor.camera import default_camera
from egocorridor.corridor_eval import benchmark, iou, write_overlay
from egocorridor.corridor_net import desk_spec, normalize_gray
from egocorridor.scene_forge import bench_catalog, build_dataset, desk_catalog, generate_sequence, load_dataset
from egocorridor.trainer import TrainConfig, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 12
root = Path(tempfile.mkdtemp(prefix="demo-"))
build_dataset(desk_catalog(12, seed=0), 8, root / "train")
build_dataset(desk_catalog(6, seed=1), 4, root / "test")

result = train(load_dataset(root / "train"), desk_spec(), TrainConfig(epochs=epochs, seed=0),
               progress=lambda e, tr, va: print(f"epoch {e}: train {tr:.4f}  val {va:.4f}"))
net = result.best.to_network()

test = load_dataset(root / "test")
probs = net.predict(normalize_gray(test.images)[:, None])[:, 0]
print(f"held-out IoU {np.mean([iou(p >= 0.5, m) for p, m in zip(probs, test.masks)]):.3f}")
write_overlay(root / "overlay.ppm", test.images[0], probs[0] >= 0.5)

name, spec, motion = bench_catalog(("faded_lines",), 1)[0]
seq = generate_sequence(spec, motion, default_camera(), name)
print(benchmark([seq], network=net, hough_config=hb.HoughConfig()).table())
print(f"outputs in {root}")
