"""Sequences, datasets and their on-disk layout."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..camera import CameraModel, default_camera
from ..errors import IoFailure, ShapeMismatch
from ..netpbm import read_pgm, write_pgm
from . import constants as K
from .render import render_frame
from .scene import DegradationKind, Motion, SceneSpec


@dataclass
class Sequence:
    spec: SceneSpec
    motion: Motion
    camera: CameraModel
    images: np.ndarray  # (450, H, W) uint8
    masks: np.ndarray  # (450, H, W) uint8 in {0, 1}
    timestamps: np.ndarray  # (450,) s
    speed_t: np.ndarray  # (1500,) s
    speed: np.ndarray  # (1500,) m/s
    name: str = ""

    @property
    def category(self) -> str:
        return self.spec.category

    def frame_speed(self) -> np.ndarray:
        """Speed at each image timestamp, from the 50 Hz trace (sample and hold)."""
        idx = np.searchsorted(self.speed_t, self.timestamps + 1e-9, side="right") - 1
        return self.speed[np.clip(idx, 0, len(self.speed) - 1)]


def frame_times(n: int = K.FRAMES_PER_SEQUENCE, rate: float = K.FRAME_RATE_HZ) -> np.ndarray:
    return np.arange(n) / rate


def speed_trace(motion: Motion) -> tuple[np.ndarray, np.ndarray]:
    t = frame_times(K.SPEED_SAMPLES_PER_SEQUENCE, K.SPEED_RATE_HZ)
    return t, np.asarray(motion.speed(t), dtype=float)


def _render_one(args):
    spec, cam, t, motion, index = args
    return render_frame(spec, cam, t, motion, index)


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [fn(a) for a in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=8))


def generate_sequence(
    spec: SceneSpec,
    motion: Motion | None = None,
    cam: CameraModel | None = None,
    name: str = "",
    jobs: int = 1,
) -> Sequence:
    """Render 30 s of driving: 450 frames at 15 Hz plus a 50 Hz speed trace."""
    motion = motion or Motion()
    cam = cam or default_camera()
    times = frame_times()
    frames = _map(_render_one, [(spec, cam, float(t), motion, i) for i, t in enumerate(times)], jobs)
    images = np.stack([f[0] for f in frames])
    masks = np.stack([f[1] for f in frames])
    st, sv = speed_trace(motion)
    return Sequence(spec, motion, cam, images, masks, times, st, sv, name)


def _write_frame_files(root: Path, fid: str, image, mask) -> tuple[str, str]:
    img_rel = f"images/{fid}.pgm"
    mask_rel = f"masks/{fid}.pgm"
    write_pgm(root / img_rel, image)
    write_pgm(root / mask_rel, (mask * 255).astype(np.uint8))
    return img_rel, mask_rel


def _prepare(root) -> Path:
    root = Path(root)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {root}: {exc}") from exc
    if not os.access(root, os.W_OK):
        raise IoFailure(f"output directory {root} is not writable")
    return root


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc


def write_sequence(seq: Sequence, out_dir) -> Path:
    """Write frames, masks, ``speed.csv``, ``sequence.json`` and a manifest."""
    root = _prepare(out_dir)
    speeds = seq.frame_speed()
    rows = []
    try:
        for i, (image, mask) in enumerate(zip(seq.images, seq.masks)):
            fid = f"{seq.name or 'seq'}-f{i:03d}"
            img_rel, mask_rel = _write_frame_files(root, fid, image, mask)
            rows.append(
                {
                    "id": fid,
                    "image": img_rel,
                    "mask": mask_rel,
                    "category": seq.category,
                    "speed_mps": float(speeds[i]),
                    "seed": seq.spec.seed,
                    "t": float(seq.timestamps[i]),
                }
            )
        _write_jsonl(root / "manifest.jsonl", rows)
        with open(root / "speed.csv", "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "speed_mps"])
            for t, v in zip(seq.speed_t, seq.speed):
                out.writerow([repr(float(t)), repr(float(v))])
        meta = {"name": seq.name, "spec": seq.spec.to_dict(), "motion": seq.motion.to_dict(), "camera": seq.camera.to_dict()}
        with open(root / "sequence.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise IoFailure(f"cannot write sequence to {root}: {exc}") from exc
    return root


def read_sequence(seq_dir) -> Sequence:
    root = Path(seq_dir)
    try:
        with open(root / "sequence.json") as fh:
            meta = json.load(fh)
        rows = read_manifest(root / "manifest.jsonl")
        images = np.stack([read_pgm(root / r["image"]) for r in rows])
        masks = np.stack([(read_pgm(root / r["mask"]) > 127).astype(np.uint8) for r in rows])
        with open(root / "speed.csv", newline="") as fh:
            trace = [(float(r["t"]), float(r["speed_mps"])) for r in csv.DictReader(fh)]
    except OSError as exc:
        raise IoFailure(f"cannot read sequence {root}: {exc}") from exc
    st = np.array([a for a, _ in trace])
    sv = np.array([b for _, b in trace])
    return Sequence(
        SceneSpec.from_dict(meta["spec"]),
        Motion.from_dict(meta["motion"]),
        CameraModel.from_dict(meta["camera"]),
        images,
        masks,
        np.array([r["t"] for r in rows], dtype=float),
        st,
        sv,
        meta.get("name", root.name),
    )


def _as_entry(item) -> tuple[SceneSpec, Motion]:
    if isinstance(item, SceneSpec):
        return item, Motion()
    if isinstance(item, dict):
        return SceneSpec.from_dict(item), Motion.from_dict(item.get("motion"))
    spec, motion = item
    return spec, motion or Motion()


def dataset_frame_indices(frames_per_spec: int) -> list[int]:
    """Spread ``frames_per_spec`` frames evenly over a sequence's 450 slots."""
    n = K.FRAMES_PER_SEQUENCE
    if not 1 <= frames_per_spec <= n:
        raise ValueError(f"frames_per_spec must lie in [1, {n}], got {frames_per_spec}")
    return [(k * n) // frames_per_spec for k in range(frames_per_spec)]


def build_dataset(catalog, frames_per_spec: int, out_dir, cam: CameraModel | None = None, jobs: int = 1) -> list[dict]:
    """Render a training set from a catalog of scenes and write it to ``out_dir``.

    Catalog entries are SceneSpec, ``(SceneSpec, Motion)`` pairs, or dicts
    in the nested JSON form. Returns the manifest rows.
    """
    cam = cam or default_camera()
    entries = [_as_entry(item) for item in catalog]
    root = _prepare(out_dir)
    jobs_list, meta = [], []
    for si, (spec, motion) in enumerate(entries):
        for fi in dataset_frame_indices(frames_per_spec):
            t = fi / K.FRAME_RATE_HZ
            jobs_list.append((spec, cam, t, motion, fi))
            meta.append((si, spec, motion, fi, t))
    frames = _map(_render_one, jobs_list, jobs)
    rows = []
    try:
        for (si, spec, motion, fi, t), (image, mask) in zip(meta, frames):
            fid = f"s{si:03d}-{spec.category}-f{fi:03d}"
            img_rel, mask_rel = _write_frame_files(root, fid, image, mask)
            rows.append(
                {
                    "id": fid,
                    "image": img_rel,
                    "mask": mask_rel,
                    "category": spec.category,
                    "speed_mps": float(motion.speed(t)),
                    "seed": spec.seed,
                    "t": t,
                }
            )
        _write_jsonl(root / "manifest.jsonl", rows)
        with open(root / "catalog.json", "w") as fh:
            json.dump(
                {"camera": cam.to_dict(), "frames_per_spec": frames_per_spec,
                 "scenes": [dict(s.to_dict(), motion=m.to_dict()) for s, m in entries]},
                fh, indent=2, sort_keys=True,
            )
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {root}: {exc}") from exc
    return rows


def load_dataset(manifest_path):
    """Read a manifest into an in-memory training :class:`~egocorridor.trainer.Dataset`."""
    from ..trainer import Dataset

    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.jsonl"
    root = manifest_path.parent
    rows = read_manifest(manifest_path)
    try:
        images = [read_pgm(root / r["image"]) for r in rows]
        masks = [(read_pgm(root / r["mask"]) > 127).astype(np.uint8) for r in rows]
    except OSError as exc:
        raise IoFailure(f"cannot read dataset frames under {root}: {exc}") from exc
    shapes = {a.shape for a in images} | {m.shape for m in masks}
    if len(shapes) > 1:
        raise ShapeMismatch(f"dataset mixes frame sizes {sorted(shapes)}")
    ids = [r["id"] for r in rows]
    if not rows:
        return Dataset(ids, np.zeros((0, 0, 0), np.uint8), np.zeros((0, 0, 0), np.uint8))
    return Dataset(ids, np.stack(images), np.stack(masks))


# ---------------------------------------------------------------- catalogs

_TRAIN_MIX = (
    DegradationKind.NONE,
    DegradationKind.NONE,
    DegradationKind.HEAVY_RAIN,
    DegradationKind.FADED_LINES,
    DegradationKind.SUN_AFTER_RAIN,
    DegradationKind.DIRECT_SUNLIGHT,
    DegradationKind.TAR_SEAMS,
    DegradationKind.SHADOWS,
)


def random_scene(rng: np.random.Generator, kind: DegradationKind, severity: float, seed: int, style: str = "dashed") -> tuple[SceneSpec, Motion]:
    """Draw one plausible highway scene and drive."""
    lead = None
    if rng.random() < 0.5:
        lead = float(rng.uniform(28.0, 80.0))
    spec = SceneSpec(
        lane_width=float(rng.uniform(3.0, 4.2)),
        curvature=float(rng.uniform(-0.0015, 0.0015)),
        n_lanes=int(rng.integers(2, 4)),
        marking_style=style,
        marking_contrast=float(rng.uniform(0.75, 1.0)),
        lead_distance=lead,
        degradation=kind,
        severity=0.0 if kind is DegradationKind.NONE else float(severity),
        seed=seed,
    )
    motion = Motion(
        speed_mps=float(rng.uniform(22.0, 30.0)),
        speed_amplitude=float(rng.uniform(0.0, 3.0)),
        offset_amplitude=float(rng.uniform(0.0, 0.35)),
        offset_phase=float(rng.uniform(0, 2 * np.pi)),
        offset_bias=float(rng.uniform(-0.2, 0.2)),
    )
    return spec, motion


def desk_catalog(n_specs: int = 30, seed: int = 0) -> list[tuple[SceneSpec, Motion]]:
    """Training scenes covering every degradation kind, severities in [0.4, 1].

    Marking style alternates between dashed and solid.
    """
    rng = np.random.default_rng([seed, 101])
    out = []
    for i in range(n_specs):
        kind = _TRAIN_MIX[i % len(_TRAIN_MIX)]
        style = "dashed" if i % 2 == 0 else "solid"
        out.append(random_scene(rng, kind, rng.uniform(0.4, 1.0), seed * 1000 + i, style))
    return out


BENCH_SEVERITY = {
    DegradationKind.NONE: 0.0,
    DegradationKind.HEAVY_RAIN: 0.8,
    DegradationKind.FADED_LINES: 0.9,
    DegradationKind.SUN_AFTER_RAIN: 0.8,
    DegradationKind.DIRECT_SUNLIGHT: 0.8,
    DegradationKind.TAR_SEAMS: 0.8,
    DegradationKind.SHADOWS: 0.8,
}


# sequences per challenge category in the full comparison
CHALLENGE_COUNTS = {
    "sun_after_rain": 2,
    "heavy_rain": 3,
    "direct_sunlight": 3,
    "faded_lines": 6,
    "tar_seams": 3,
}


def bench_catalog(
    categories=("none", "faded_lines", "heavy_rain"),
    per_category: int | dict = 2,
    seed: int = 7,
    style: str = "solid",
) -> list[tuple[str, SceneSpec, Motion]]:
    """Benchmark scenes as ``(name, spec, motion)``; seeds are disjoint from :func:`desk_catalog`'s.

    ``per_category`` is a count for every category or a mapping of counts.
    """
    rng = np.random.default_rng([seed, 202])
    out = []
    for cat in categories:
        kind = DegradationKind(cat)
        n = per_category[kind.value] if isinstance(per_category, dict) else per_category
        for j in range(n):
            spec, motion = random_scene(rng, kind, BENCH_SEVERITY[kind], 500_000 + seed * 1000 + len(out), style)
            out.append((f"{kind.value}-{j:02d}", spec, motion))
    return out


def challenge_catalog(seed: int = 7, style: str = "solid") -> list[tuple[str, SceneSpec, Motion]]:
    """Seventeen sequences over the five challenge categories."""
    return bench_catalog(tuple(CHALLENGE_COUNTS), CHALLENGE_COUNTS, seed, style)
