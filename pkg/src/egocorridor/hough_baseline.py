"""Classical lane detector: Sobel edges, Hough lines, lane-pair choice, corridor.

All thresholds are fixed constants chosen once on clean scenes; nothing here
adapts to the weather category of the input.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .camera import CameraModel, ground_to_pixel, pixel_to_ground_array
from .corridor_eval import CorridorEstimate, KpiConfig, corridor_from_component, select_component
from .errors import DegenerateGeometry, NoPair
from .netpbm import write_pgm


@dataclass(frozen=True)
class HoughConfig:
    rho_resolution: float = 1.0
    theta_resolution: float = math.pi / 180
    edge_percentile: float = 0.95
    nms_rho: float = 8.0  # px
    nms_theta: float = math.radians(8.0)
    max_lines: int = 16
    vote_floor: float = 0.3  # fraction of the accumulator maximum

    def __post_init__(self):
        if not (self.rho_resolution > 0 and self.theta_resolution > 0):
            raise ValueError("Hough resolutions must be positive")
        if not 0 < self.edge_percentile < 1:
            raise ValueError("edge_percentile must lie in (0, 1)")
        if self.max_lines < 1:
            raise ValueError("max_lines must be >= 1")

    @property
    def n_theta(self) -> int:
        return max(1, int(round(math.pi / self.theta_resolution)))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LanePrior:
    """Geometric expectations used to pick the ego-lane pair."""

    width_min: float = 2.0
    width_max: float = 6.0
    max_heading: float = 0.2  # |dx/dz| of a ground track
    max_lateral: float = 7.0  # m, nearest-row offset of a usable track
    parallel_tol: float = 0.08  # allowed heading difference of a pair
    horizon_band: float = 0.1  # fraction of image height
    fuse_lateral: float = 0.4  # m, merges the two edges of one marking
    fuse_heading: float = 0.06
    weights: tuple[float, float, float] = (0.5, 0.3, 0.2)  # band fit, parallelism, vote mass

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LinePolar:
    """Image line ``u*cos(theta) + v*sin(theta) = rho`` with pixel-centre origin."""

    rho: float
    theta: float
    votes: int

    def u_at(self, v):
        c = math.cos(self.theta)
        if abs(c) < 1e-12:
            raise DegenerateGeometry("horizontal line has no column for a given row")
        return (self.rho - np.asarray(v, dtype=float) * math.sin(self.theta)) / c


@dataclass(frozen=True)
class GroundTrack:
    """A line seen on the ground: lateral offset at ``z0`` and heading dx/dz."""

    x0: float
    heading: float
    votes: int
    z0: float
    lines: tuple[LinePolar, ...]


# ---------------------------------------------------------------- edges and votes


def detect_edges(image: np.ndarray, config: HoughConfig = HoughConfig(), roi_top: int = 0) -> np.ndarray:
    """Sobel magnitude above its own ``edge_percentile`` quantile.

    Only rows from ``roi_top`` downwards take part, both in the quantile and
    in the output.
    """
    img = np.asarray(image, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    edges = np.zeros(img.shape, dtype=bool)
    roi = mag[roi_top:]
    if roi.size == 0:
        return edges
    thr = np.quantile(roi, config.edge_percentile)
    edges[roi_top:] = roi > thr
    return edges


def theta_table(config: HoughConfig = HoughConfig()):
    t = np.arange(config.n_theta) * config.theta_resolution
    return t, np.cos(t), np.sin(t)


def rho_offset(shape, config: HoughConfig = HoughConfig()) -> int:
    h, w = shape
    return int(math.ceil(math.hypot(w - 1, h - 1) / config.rho_resolution)) + 1


def accumulate(edges: np.ndarray, config: HoughConfig = HoughConfig()) -> np.ndarray:
    """Vote array of shape ``(n_rho, n_theta)``.

    Each edge pixel ``(u, v)`` votes once per theta bin, in the rho bin
    ``floor(rho / res + 0.5) + offset`` with ``rho = u cos + v sin``.
    """
    edges = np.asarray(edges, dtype=bool)
    off = rho_offset(edges.shape, config)
    n_rho, n_theta = 2 * off + 1, config.n_theta
    v, u = np.nonzero(edges)
    if len(u) == 0:
        return np.zeros((n_rho, n_theta), dtype=np.int64)
    _, c, s = theta_table(config)
    rho = u[:, None].astype(np.float64) * c[None, :] + v[:, None].astype(np.float64) * s[None, :]
    idx = np.floor(rho / config.rho_resolution + 0.5).astype(np.int64) + off
    flat = idx * n_theta + np.arange(n_theta)[None, :]
    return np.bincount(flat.ravel(), minlength=n_rho * n_theta).reshape(n_rho, n_theta)


def _close(a: LinePolar, b: LinePolar, config: HoughConfig) -> bool:
    dt = abs(a.theta - b.theta)
    if dt <= config.nms_theta + 1e-12 and abs(a.rho - b.rho) <= config.nms_rho + 1e-12:
        return True
    # near theta = 0 and theta = pi the same line appears with negated rho
    if math.pi - dt <= config.nms_theta + 1e-12 and abs(a.rho + b.rho) <= config.nms_rho + 1e-12:
        return True
    return False


def peaks(acc: np.ndarray, config: HoughConfig = HoughConfig(), offset: int | None = None) -> list[LinePolar]:
    """Greedy peak picking with suppression windows.

    Candidates at or above ``vote_floor * max`` are visited by descending
    votes, ties broken by lower theta then lower rho.
    """
    top = int(acc.max(initial=0))
    if top <= 0:
        return []
    if offset is None:
        offset = (acc.shape[0] - 1) // 2
    floor = max(1, math.ceil(config.vote_floor * top))
    ri, ti = np.nonzero(acc >= floor)
    votes = acc[ri, ti]
    order = np.lexsort((ri, ti, -votes))
    out: list[LinePolar] = []
    for k in order:
        line = LinePolar((int(ri[k]) - offset) * config.rho_resolution, int(ti[k]) * config.theta_resolution, int(votes[k]))
        if any(_close(line, kept, config) for kept in out):
            continue
        out.append(line)
        if len(out) >= config.max_lines:
            break
    return out


def hough_lines(edges: np.ndarray, config: HoughConfig = HoughConfig()) -> list[LinePolar]:
    acc = accumulate(edges, config)
    return peaks(acc, config, rho_offset(np.shape(edges), config))


def write_accumulator_pgm(path, acc: np.ndarray) -> None:
    """Debug view of the vote array, linearly scaled to 0..255 (rho down, theta across)."""
    top = acc.max(initial=0)
    img = np.zeros(acc.shape, np.uint8) if top == 0 else np.rint(acc * (255.0 / top)).astype(np.uint8)
    write_pgm(path, img)


# ---------------------------------------------------------------- lane pair


def _sample_rows(cam: CameraModel) -> tuple[float, float]:
    bottom = cam.image_height - 1.0
    return bottom, cam.horizon_row + 0.35 * (bottom - cam.horizon_row)


def ground_track(line: LinePolar, cam: CameraModel) -> GroundTrack | None:
    """Project a line onto the ground between two fixed rows; None if it is not a road line."""
    if abs(math.cos(line.theta)) < 0.05:
        return None  # near-horizontal in the image
    va, vb = _sample_rows(cam)
    if vb <= cam.horizon_row:
        return None
    u = line.u_at(np.array([va, vb]))
    x, z = pixel_to_ground_array(cam, u, np.array([va, vb]))
    if not np.all(np.isfinite(z)) or z[1] <= z[0]:
        return None
    heading = (x[1] - x[0]) / (z[1] - z[0])
    return GroundTrack(float(x[0]), float(heading), line.votes, float(z[0]), (line,))


def _fuse(tracks: list[GroundTrack], prior: LanePrior) -> list[GroundTrack]:
    """Merge tracks closer than the fuse tolerances, strongest first."""
    groups: list[list[GroundTrack]] = []
    for t in sorted(tracks, key=lambda t: (-t.votes, t.x0)):
        for g in groups:
            if abs(g[0].x0 - t.x0) <= prior.fuse_lateral and abs(g[0].heading - t.heading) <= prior.fuse_heading:
                g.append(t)
                break
        else:
            groups.append([t])
    fused = []
    for g in groups:
        w = np.array([t.votes for t in g], dtype=float)
        fused.append(
            GroundTrack(
                float(np.average([t.x0 for t in g], weights=w)),
                float(np.average([t.heading for t in g], weights=w)),
                int(w.sum()),
                g[0].z0,
                tuple(ln for t in g for ln in t.lines),
            )
        )
    return fused


def _image_intersection(a: LinePolar, b: LinePolar) -> float | None:
    """Row where two image lines cross, None if parallel."""
    m = np.array([[math.cos(a.theta), math.sin(a.theta)], [math.cos(b.theta), math.sin(b.theta)]])
    if abs(np.linalg.det(m)) < 1e-9:
        return None
    _, v = np.linalg.solve(m, np.array([a.rho, b.rho]))
    return float(v)


def _mean_line(track: GroundTrack, cam: CameraModel) -> LinePolar:
    """Image line through the fused ground track."""
    z0 = track.z0
    z1 = z0 + 10.0
    x0, x1 = track.x0, track.x0 + track.heading * (z1 - z0)
    ua, va = ground_to_pixel(cam, (x0, z0))
    ub, vb = ground_to_pixel(cam, (x1, z1))
    # normal of the segment, theta folded into [0, pi)
    theta = math.atan2(ub - ua, -(vb - va))
    if theta < 0:
        theta += math.pi
    if theta >= math.pi:
        theta -= math.pi
    rho = ua * math.cos(theta) + va * math.sin(theta)
    return LinePolar(rho, theta, track.votes)


def select_lane_pair(lines: list[LinePolar], cam: CameraModel, prior: LanePrior = LanePrior()) -> tuple[LinePolar, LinePolar]:
    """Pick the left and right borders of the ego lane.

    Each candidate pair must straddle the camera, be ``width_min..width_max``
    apart on the ground, run nearly parallel and meet near the horizon in
    the image. Among those the score favours the innermost pair, then
    parallelism, then vote mass; equal scores go to the larger vote mass.
    Returned lines are the vote-weighted fusions of each marking's edges.
    """
    tracks = [t for t in (ground_track(ln, cam) for ln in lines) if t is not None]
    tracks = [t for t in tracks if abs(t.heading) <= prior.max_heading and abs(t.x0) <= prior.max_lateral]
    tracks = _fuse(tracks, prior)
    left = [t for t in tracks if t.x0 < 0]
    right = [t for t in tracks if t.x0 > 0]
    if not left or not right:
        raise NoPair(f"need a track on each side, found {len(left)} left and {len(right)} right")
    band = prior.horizon_band * cam.image_height
    cands = []
    for lt in left:
        for rt in right:
            sep = rt.x0 - lt.x0
            if not prior.width_min <= sep <= prior.width_max:
                continue
            dh = abs(rt.heading - lt.heading)
            if dh > prior.parallel_tol:
                continue
            ll, rl = _mean_line(lt, cam), _mean_line(rt, cam)
            v = _image_intersection(ll, rl)
            if v is None or abs(v - cam.horizon_row) > band:
                continue
            cands.append((lt, rt, ll, rl, sep, dh))
    if not cands:
        raise NoPair("no line pair satisfies the lane constraints")
    mass_max = max(lt.votes + rt.votes for lt, rt, *_ in cands)
    wb, wp, wv = prior.weights
    best_key, best = None, None
    for lt, rt, ll, rl, sep, dh in cands:
        fit = 1.0 - (sep - prior.width_min) / (prior.width_max - prior.width_min)
        par = 1.0 - dh / prior.parallel_tol
        mass = lt.votes + rt.votes
        score = wb * fit + wp * par + wv * mass / mass_max
        key = (score, mass, -lt.x0, rt.x0)
        if best_key is None or key > best_key:
            best_key, best = key, (ll, rl)
    return best


# ---------------------------------------------------------------- corridor


def corridor_mask(pair: tuple[LinePolar, LinePolar], cam: CameraModel, margin_rows: float = 2.0) -> np.ndarray:
    """Rasterise the region between two image lines.

    Rows run from the image bottom up to the lines' crossing row or to
    ``margin_rows`` below the horizon, whichever is lower.
    """
    left, right = pair
    h, w = cam.image_height, cam.image_width
    bottom = h - 1.0
    ul, ur = float(left.u_at(bottom)), float(right.u_at(bottom))
    if ul >= ur:
        raise DegenerateGeometry("lines cross below the image bottom")
    cross = _image_intersection(left, right)
    stop = cam.horizon_row + margin_rows
    if cross is not None:
        if cross >= bottom:
            raise DegenerateGeometry("lines cross below the image bottom")
        stop = max(stop, cross)
    rows = np.arange(h)
    rows = rows[rows > stop]
    mask = np.zeros((h, w), dtype=bool)
    if len(rows) == 0:
        return mask
    a = np.ceil(left.u_at(rows) - 1e-9).astype(np.int64)
    b = np.floor(right.u_at(rows) + 1e-9).astype(np.int64)
    cols = np.arange(w)
    mask[rows] = (cols[None, :] >= np.clip(a, 0, w)[:, None]) & (cols[None, :] <= np.clip(b, -1, w - 1)[:, None])
    return mask


def corridor_from_lines(
    pair: tuple[LinePolar, LinePolar], cam: CameraModel, config: KpiConfig = KpiConfig(), frame_id: str = ""
) -> CorridorEstimate:
    mask = corridor_mask(pair, cam)
    # same measurement as the DNN path
    return corridor_from_component(select_component(mask), cam, config, "classical", frame_id)


def roi_top(cam: CameraModel) -> int:
    """First image row used for edges: skips the horizon strip, where sky, haze
    and vehicles give strong horizontal edges."""
    return max(int(math.ceil(cam.horizon_row + 0.1 * (cam.image_height - cam.horizon_row))), 0)


def estimate_corridor(
    image: np.ndarray,
    cam: CameraModel,
    config: HoughConfig = HoughConfig(),
    kpi: KpiConfig = KpiConfig(),
    prior: LanePrior = LanePrior(),
    frame_id: str = "",
) -> CorridorEstimate:
    """Full classical pipeline for one frame; failures become an unavailable estimate."""
    edges = detect_edges(image, config, roi_top(cam))
    lines = hough_lines(edges, config)
    try:
        pair = select_lane_pair(lines, cam, prior)
        return corridor_from_lines(pair, cam, kpi, frame_id)
    except (NoPair, DegenerateGeometry):
        return CorridorEstimate.unavailable("classical", frame_id)
