"""From probability masks to corridor geometry, availability KPIs and reports."""
from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .camera import CameraModel, pixel_to_ground, pixel_to_ground_array
from .errors import EmptySequence, ShapeMismatch
from .netpbm import write_ppm

__all__ = [
    "KpiConfig",
    "CorridorEstimate",
    "CategoryCounts",
    "KpiReport",
    "MaskSmoother",
    "pixel_to_ground",
    "smooth_masks",
    "select_component",
    "corridor_from_component",
    "extract_corridor",
    "frame_availability",
    "longest_unavailable_run",
    "sequence_activation",
    "iou",
    "format_ratio",
    "benchmark",
    "overlay",
    "write_overlay",
]


@dataclass(frozen=True)
class KpiConfig:
    width_min: float = 2.0
    width_max: float = 6.0
    time_gap: float = 0.7
    max_unavailable_run: int = 5
    binarize_threshold: float = 0.5
    smoothing_window: int = 3
    width_lookahead: float = 5.0  # metres of nearest ground over which width is taken

    def __post_init__(self):
        if not self.width_min < self.width_max:
            raise ValueError("width_min must be below width_max")
        if not self.time_gap > 0:
            raise ValueError("time_gap must be positive")
        if self.max_unavailable_run < 0:
            raise ValueError("max_unavailable_run must be >= 0")
        if not 1 <= self.smoothing_window <= 3:
            raise ValueError("smoothing_window must lie in [1, 3]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CorridorEstimate:
    width: float | None
    length: float | None
    available: bool
    source: str = "dnn"
    frame_id: str = ""

    def __post_init__(self):
        if self.available and (self.width is None or self.length is None):
            raise ValueError("an available corridor needs both width and length")
        for v in (self.width, self.length):
            if v is not None and v < 0:
                raise ValueError("corridor width and length must be non-negative")

    @classmethod
    def unavailable(cls, source: str = "dnn", frame_id: str = "") -> "CorridorEstimate":
        return cls(None, None, False, source, frame_id)


# ---------------------------------------------------------------- smoothing


def smooth_masks(history) -> np.ndarray:
    """Pixelwise mean of the last one to three probability masks."""
    history = list(history)
    if not 1 <= len(history) <= 3:
        raise ValueError(f"smoothing history must hold 1 to 3 masks, got {len(history)}")
    shape = np.shape(history[0])
    for m in history[1:]:
        if np.shape(m) != shape:
            raise ShapeMismatch(f"mask shapes differ: {shape} vs {np.shape(m)}")
    return np.mean(np.stack([np.asarray(m, dtype=np.float64) for m in history]), axis=0)


class MaskSmoother:
    """Streaming form of :func:`smooth_masks`; the window grows 1, 2, 3."""

    def __init__(self, window: int = 3):
        if not 1 <= window <= 3:
            raise ValueError("window must lie in [1, 3]")
        self._buf = deque(maxlen=window)

    def push(self, mask) -> np.ndarray:
        self._buf.append(np.asarray(mask, dtype=np.float64))
        return smooth_masks(self._buf)

    def reset(self) -> None:
        self._buf.clear()


# ---------------------------------------------------------------- geometry


def select_component(binary: np.ndarray) -> np.ndarray:
    """4-connected component at the bottom-centre pixel.

    Falls back to the largest component touching the bottom row when the
    seed pixel is off; returns an all-false mask when nothing qualifies.
    """
    binary = np.asarray(binary, dtype=bool)
    labels, count = ndimage.label(binary)
    empty = np.zeros_like(binary)
    if count == 0:
        return empty
    h, w = binary.shape
    seed = labels[h - 1, w // 2]
    if seed == 0:
        ids = np.unique(labels[h - 1])
        ids = ids[ids > 0]
        if len(ids) == 0:
            return empty
        sizes = ndimage.sum_labels(np.ones(binary.shape), labels, ids)
        seed = ids[int(np.argmax(sizes))]  # argmax keeps the lowest label on ties
    return labels == seed


def corridor_from_component(
    comp: np.ndarray, cam: CameraModel, config: KpiConfig = KpiConfig(), source: str = "dnn", frame_id: str = ""
) -> CorridorEstimate:
    """Metric width and length of a corridor component.

    Row extents run from the left edge of the leftmost pixel to the right
    edge of the rightmost one. Width is the median over rows within
    ``width_lookahead`` metres of the nearest row. Length is the ground
    distance of the far edge of the top row, or of its centre when that edge
    lies at or above the horizon.
    """
    rows = np.flatnonzero(comp.any(axis=1))
    rows = rows[rows > cam.horizon_row]
    if len(rows) < 3:
        return CorridorEstimate.unavailable(source, frame_id)
    sub = comp[rows]
    w = comp.shape[1]
    left = np.argmax(sub, axis=1) - 0.5
    right = w - 1 - np.argmax(sub[:, ::-1], axis=1) + 0.5
    v = rows.astype(float)
    xl, z = pixel_to_ground_array(cam, left, v)
    xr, _ = pixel_to_ground_array(cam, right, v)
    widths = xr - xl
    near = z <= z.min() + config.width_lookahead
    width = float(np.median(widths[near]))
    top = v[0]
    far = top - 0.5
    if far <= cam.horizon_row:
        far = top
    _, length = pixel_to_ground_array(cam, cam.cx, far)
    return CorridorEstimate(width, float(length), True, source, frame_id)


def extract_corridor(
    mask: np.ndarray, cam: CameraModel, config: KpiConfig = KpiConfig(), source: str = "dnn", frame_id: str = ""
) -> CorridorEstimate:
    mask = np.asarray(mask)
    if mask.shape != (cam.image_height, cam.image_width):
        raise ShapeMismatch(f"mask {mask.shape} vs camera {(cam.image_height, cam.image_width)}")
    comp = select_component(mask >= config.binarize_threshold)
    return corridor_from_component(comp, cam, config, source, frame_id)


# ---------------------------------------------------------------- KPIs


def frame_availability(estimate: CorridorEstimate, speed: float, config: KpiConfig = KpiConfig()) -> bool:
    """Width within the band and length beyond the time-gap distance."""
    if speed < 0:
        raise ValueError(f"speed must be >= 0, got {speed}")
    if not estimate.available:
        return False
    return bool(config.width_min <= estimate.width <= config.width_max and estimate.length > config.time_gap * speed)


def longest_unavailable_run(flags) -> int:
    best = run = 0
    for f in flags:
        run = 0 if f else run + 1
        best = max(best, run)
    return best


def sequence_activation(flags, config: KpiConfig = KpiConfig()) -> bool:
    flags = list(flags)
    if not flags:
        raise EmptySequence("availability series is empty")
    return longest_unavailable_run(flags) <= config.max_unavailable_run


def iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"masks differ in shape: {pred.shape} vs {truth.shape}")
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & truth) / union


def format_ratio(num: int, den: int) -> str:
    """``num/den`` rounded half-up to two decimals, computed in integers."""
    if den <= 0:
        return "n/a"
    if num < 0:
        raise ValueError("count must be non-negative")
    q = (200 * num + den) // (2 * den)
    return f"{q // 100}.{q % 100:02d}"


# ---------------------------------------------------------------- reports


@dataclass
class CategoryCounts:
    available: int = 0
    total: int = 0
    activated: int = 0
    sequences: int = 0

    @property
    def frame_ratio(self) -> str:
        return format_ratio(self.available, self.total)

    def frame_cell(self) -> str:
        return f"{self.frame_ratio} ({self.available}/{self.total})"

    def sequence_cell(self) -> str:
        return f"{self.activated}/{self.sequences}"


@dataclass
class KpiReport:
    """Per-detector, per-category counts plus per-sequence flag series."""

    detectors: list[str]
    categories: dict[str, dict[str, CategoryCounts]] = field(default_factory=dict)
    sequences: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_sequence(self, name: str, category: str, flags: dict[str, list[bool]], config: KpiConfig = KpiConfig()) -> None:
        cat = self.categories.setdefault(category, {d: CategoryCounts() for d in self.detectors})
        entry = {"name": name, "category": category, "flags": {}, "activated": {}}
        for det in self.detectors:
            series = [bool(f) for f in flags[det]]
            act = sequence_activation(series, config)
            c = cat[det]
            c.available += sum(series)
            c.total += len(series)
            c.activated += int(act)
            c.sequences += 1
            entry["flags"][det] = [int(f) for f in series]
            entry["activated"][det] = act
        self.sequences.append(entry)

    def to_dict(self) -> dict:
        cats = {}
        for name, per in self.categories.items():
            cats[name] = {
                det: {
                    "available": c.available,
                    "total": c.total,
                    "frame_ratio": c.frame_ratio,
                    "sequences_activated": c.activated,
                    "sequences": c.sequences,
                }
                for det, c in per.items()
            }
        return {"detectors": self.detectors, "categories": cats, "sequences": self.sequences, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "KpiReport":
        rep = cls(list(d["detectors"]), meta=dict(d.get("meta", {})))
        for name, per in d["categories"].items():
            rep.categories[name] = {
                det: CategoryCounts(v["available"], v["total"], v["sequences_activated"], v["sequences"]) for det, v in per.items()
            }
        rep.sequences = list(d.get("sequences", []))
        return rep

    def frame_ratio(self, category: str, detector: str) -> float:
        c = self.categories[category][detector]
        return c.available / c.total if c.total else float("nan")

    def table(self) -> str:
        """Plain-text table: one row per category, frame and sequence columns per detector."""
        head = ["Category", "#Seq."]
        for det in self.detectors:
            head += [f"{det} frame-based", f"{det} seq.-based"]
        rows = [head]
        for name, per in self.categories.items():
            n = next(iter(per.values())).sequences
            row = [name, str(n)]
            for det in self.detectors:
                row += [per[det].frame_cell(), per[det].sequence_cell()]
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(cell.ljust(wd) for cell, wd in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * wd for wd in widths))
        return "\n".join(lines) + "\n"


def _dnn_flags(seq, network, cam, config, batch_size=16):
    from .corridor_net import normalize_gray

    speeds = seq.frame_speed()
    smoother = MaskSmoother(config.smoothing_window)
    flags = []
    n = len(seq.images)
    for s in range(0, n, batch_size):
        x = normalize_gray(seq.images[s : s + batch_size])[:, None].astype(np.float32)
        probs = network.predict(x)[:, 0]
        for k, p in enumerate(probs):
            est = extract_corridor(smoother.push(p), cam, config, "dnn")
            flags.append(frame_availability(est, float(speeds[s + k]), config))
    return flags


def _hough_flags(seq, hough_config, prior, cam, config):
    from . import hough_baseline as hb

    prior = prior or hb.LanePrior()
    speeds = seq.frame_speed()
    flags = []
    for img, v in zip(seq.images, speeds):
        est = hb.estimate_corridor(img, cam, hough_config, config, prior)
        flags.append(frame_availability(est, float(v), config))
    return flags


def benchmark(
    sequences,
    network=None,
    hough_config=None,
    cam: CameraModel | None = None,
    config: KpiConfig = KpiConfig(),
    progress=None,
    prior=None,
) -> KpiReport:
    """Run the DNN path and/or the classical path over every frame of every sequence.

    ``sequences`` yields objects with ``images``, ``frame_speed()``, ``name``
    and ``category`` (see :class:`egocorridor.scene_forge.Sequence`).
    Pass ``network=None`` or ``hough_config=None`` to skip a detector;
    ``prior`` optionally overrides the classical lane-pair prior.
    """
    detectors = []
    if network is not None:
        detectors.append("dnn")
    if hough_config is not None:
        detectors.append("classical")
    if not detectors:
        raise ValueError("benchmark needs at least one detector")
    report = KpiReport(detectors, meta={"kpi_config": config.to_dict(), "timing_s": {d: 0.0 for d in detectors}})
    for seq in sequences:
        c = cam or seq.camera
        if seq.images.shape[1:] != (c.image_height, c.image_width):
            raise ShapeMismatch(f"sequence frames {seq.images.shape[1:]} vs camera {(c.image_height, c.image_width)}")
        flags = {}
        if network is not None:
            t0 = time.perf_counter()
            flags["dnn"] = _dnn_flags(seq, network, c, config)
            report.meta["timing_s"]["dnn"] += time.perf_counter() - t0
        if hough_config is not None:
            t0 = time.perf_counter()
            flags["classical"] = _hough_flags(seq, hough_config, prior, c, config)
            report.meta["timing_s"]["classical"] += time.perf_counter() - t0
        report.add_sequence(seq.name, seq.category, flags, config)
        if progress is not None:
            progress(seq.name, flags)
    return report


# ---------------------------------------------------------------- overlay


def overlay(image: np.ndarray, mask: np.ndarray, color=(40, 220, 60), alpha: float = 0.45) -> np.ndarray:
    """Tint mask pixels of a gray frame; returns an (H, W, 3) uint8 image."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.shape != mask.shape:
        raise ShapeMismatch(f"image {image.shape} vs mask {mask.shape}")
    rgb = np.repeat(image[..., None].astype(np.float64), 3, axis=2)
    on = mask.astype(bool) if mask.dtype == bool else mask >= 0.5
    tint = np.asarray(color, dtype=np.float64)
    rgb[on] = (1 - alpha) * rgb[on] + alpha * tint
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def write_overlay(path, image, mask, **kw) -> None:
    write_ppm(path, overlay(image, mask, **kw))
