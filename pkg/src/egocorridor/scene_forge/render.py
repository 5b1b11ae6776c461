"""Rasterise one frame of a synthetic highway scene.

Every output pixel averages ``SUPERSAMPLE**2`` sub-pixel samples. Each
sample is back-projected onto the flat ground, shaded in road coordinates
(lateral offset from the ego-lane centre, distance along the road) and then
hazed by distance. Image-space effects such as rain streaks or glare are
applied after downsampling and never touch the label mask.
"""
from __future__ import annotations

import functools
import math

import numpy as np
from scipy import ndimage

from ..camera import CameraModel, pixel_to_ground_array, project_point
from . import constants as K
from .scene import DegradationKind, Motion, SceneSpec

# stream ids for the per-scene and per-frame generators
_SALT_TEXTURE = 1
_SALT_LAYOUT = 2
_SALT_FRAME = 3
_TEXTURE_SIZE = 256


@functools.lru_cache(maxsize=8)
def _ground_grid(cam: CameraModel, factor: int):
    """Sub-pixel centres and their ground intersections (NaN above the horizon)."""
    h, w = cam.image_height * factor, cam.image_width * factor
    v = (np.arange(h) + 0.5) / factor - 0.5
    u = (np.arange(w) + 0.5) / factor - 0.5
    uu, vv = np.meshgrid(u, v)
    x, z = pixel_to_ground_array(cam, uu, vv)
    for a in (uu, vv, x, z):
        a.flags.writeable = False
    return uu, vv, x, z


@functools.lru_cache(maxsize=32)
def _texture(seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, _SALT_TEXTURE])
    tex = rng.standard_normal((_TEXTURE_SIZE, _TEXTURE_SIZE))
    tex.flags.writeable = False
    return tex


def _lookup(tex: np.ndarray, a: np.ndarray, b: np.ndarray, cell: float) -> np.ndarray:
    i = np.floor(a / cell).astype(np.int64) % _TEXTURE_SIZE
    j = np.floor(b / cell).astype(np.int64) % _TEXTURE_SIZE
    return tex[i, j]


def _downsample(a: np.ndarray, factor: int) -> np.ndarray:
    h, w = a.shape
    return a.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def marking_gain(spec: SceneSpec) -> float:
    """Effective marking contrast after the weather and wear effects."""
    gain = spec.marking_contrast
    s = spec.severity
    kind = spec.degradation
    if kind is DegradationKind.FADED_LINES:
        gain *= 1.0 - 0.98 * s
    elif kind is DegradationKind.HEAVY_RAIN:
        gain *= 1.0 - K.HEAVY_RAIN["marking_contrast_loss"] * s
    elif kind is DegradationKind.SUN_AFTER_RAIN:
        gain *= 1.0 - K.SUN_AFTER_RAIN["marking_contrast_loss"] * s
    elif kind is DegradationKind.DIRECT_SUNLIGHT:
        gain *= 1.0 - K.DIRECT_SUNLIGHT["marking_contrast_loss"] * s
    return gain


def _layout(spec: SceneSpec) -> dict:
    """Per-scene random layout that stays fixed across the frames of a sequence."""
    rng = np.random.default_rng([spec.seed, _SALT_LAYOUT])
    n, w = spec.n_lanes, spec.lane_width
    left = w / 2 - n * w
    out = {"dash_phase": rng.uniform(0, K.DASH_LENGTH + K.DASH_GAP)}
    lo, hi = K.TAR_SEAMS["count"]
    seams = []
    for _ in range(rng.integers(lo, hi + 1)):
        seams.append(
            (
                rng.uniform(left, w / 2),
                rng.uniform(*K.TAR_SEAMS["width"]),
                rng.uniform(0.3, 1.0) * K.TAR_SEAMS["wander_amplitude"],
                rng.uniform(*K.TAR_SEAMS["wander_length"]),
                rng.uniform(0, 2 * math.pi),
            )
        )
    out["seams"] = seams
    out["shadow_period"] = rng.uniform(*K.SHADOWS["period"])
    out["shadow_phase"] = rng.uniform(0, out["shadow_period"])
    # each shadow slot gets its own length and lateral span
    slots = 64
    out["shadow_length"] = rng.uniform(*K.SHADOWS["length"], size=slots)
    lane = rng.integers(0, n, size=slots)
    out["shadow_lo"] = w / 2 - (lane + 1) * w + rng.uniform(-0.3, 0.6, size=slots) * w
    out["shadow_hi"] = out["shadow_lo"] + rng.uniform(0.7, 1.4, size=slots) * w
    out["sun_u"] = rng.uniform(0.25, 0.75)
    out["sun_v"] = rng.uniform(0.02, 0.2)
    return out


def _shade_ground(spec: SceneSpec, lat, s_abs, z, layout) -> np.ndarray:
    w, n = spec.lane_width, spec.n_lanes
    half_mark = K.MARKING_WIDTH / 2
    right_edge = w / 2
    left_edge = w / 2 - n * w
    tex = _texture(spec.seed)
    noise = _lookup(tex, lat, s_abs, K.TEXTURE_CELL)
    paved = (lat > left_edge - K.SHOULDER_WIDTH) & (lat < right_edge + K.SHOULDER_WIDTH)
    road = K.ROAD + K.ROAD_TEXTURE * noise
    if spec.degradation is DegradationKind.HEAVY_RAIN:
        road = road - K.HEAVY_RAIN["road_darkening"] * spec.severity
    grass = K.GRASS + K.GRASS_TEXTURE * _lookup(tex, lat + 91.7, s_abs * 0.5, 2 * K.TEXTURE_CELL)
    img = np.where(paved, road, grass)

    if spec.degradation is DegradationKind.TAR_SEAMS and spec.severity > 0:
        for base, width, amp, length, phase in layout["seams"]:
            centre = base + amp * np.sin(2 * math.pi * s_abs / length + phase)
            on = paved & (np.abs(lat - centre) < width / 2)
            img = np.where(on, img - K.TAR_SEAMS["darkening"] * spec.severity, img)

    gain = marking_gain(spec)
    cycle = K.DASH_LENGTH + K.DASH_GAP
    for k in range(n + 1):
        centre = w / 2 - k * w
        on = np.abs(lat - centre) < half_mark
        if 0 < k < n and spec.marking_style == "dashed":
            on &= np.mod(s_abs + layout["dash_phase"], cycle) < K.DASH_LENGTH
        img = np.where(on, img + gain * (K.MARKING - img), img)

    if spec.degradation is DegradationKind.SHADOWS and spec.severity > 0:
        period = layout["shadow_period"]
        pos = s_abs + layout["shadow_phase"]
        slot = np.floor(pos / period).astype(np.int64) % len(layout["shadow_length"])
        along = np.mod(pos, period)
        on = (along < layout["shadow_length"][slot]) & (lat > layout["shadow_lo"][slot]) & (lat < layout["shadow_hi"][slot])
        img = np.where(on, img * (1 - K.SHADOWS["attenuation"] * spec.severity), img)

    fog = np.exp(-z / K.HAZE_DISTANCE)
    return img * fog + K.HAZE * (1 - fog)


def _vehicle_box(spec: SceneSpec, cam: CameraModel, offset: float):
    """Image rectangle (u0, u1, v_top, v_bottom) of the lead vehicle's rear."""
    d = spec.lead_distance
    centre = 0.5 * spec.curvature * d * d - offset
    xs = np.array([centre - spec.lead_width / 2, centre + spec.lead_width / 2])
    u, v_bot, _ = project_point(cam, xs, np.zeros(2), np.full(2, d))
    _, v_top, _ = project_point(cam, centre, K.VEHICLE_HEIGHT, d)
    return float(u[0]), float(u[1]), float(v_top), float(v_bot[0])


def _draw_vehicle(img, uu, vv, box, distance) -> None:
    u0, u1, vt, vb = box
    inside = (uu >= u0) & (uu <= u1) & (vv >= vt) & (vv <= vb)
    if not inside.any():
        return
    fu = (uu - u0) / max(u1 - u0, 1e-9)
    fv = (vv - vt) / max(vb - vt, 1e-9)
    body = np.full(img.shape, K.VEHICLE_BODY)
    window = (fv > 0.08) & (fv < 0.42) & (fu > 0.1) & (fu < 0.9)
    lights = (fv > 0.55) & (fv < 0.7) & ((fu < 0.18) | (fu > 0.82))
    body = np.where(window, K.VEHICLE_WINDOW, body)
    body = np.where(lights, K.VEHICLE_LIGHT, body)
    fog = math.exp(-distance / K.HAZE_DISTANCE)
    img[inside] = body[inside] * fog + K.HAZE * (1 - fog)


def _sky(vv, cam: CameraModel) -> np.ndarray:
    span = max(cam.horizon_row + 0.5, 1.0)
    frac = np.clip((cam.horizon_row - vv) / span, 0.0, 1.0)
    return K.SKY_HORIZON + (K.SKY_TOP - K.SKY_HORIZON) * frac


def bottom_component(mask: np.ndarray) -> np.ndarray:
    """Keep the largest 4-connected component that touches the bottom row."""
    labels, count = ndimage.label(mask)
    if count == 0:
        return np.zeros_like(mask)
    ids = np.unique(labels[-1])
    ids = ids[ids > 0]
    if len(ids) == 0:
        return np.zeros_like(mask)
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, ids)
    keep = ids[int(np.argmax(sizes))]
    return (labels == keep).astype(mask.dtype)


def _draw_segment(img, u0, v0, u1, v1, gain) -> None:
    steps = int(max(abs(u1 - u0), abs(v1 - v0)) * 2) + 1
    uu = np.rint(np.linspace(u0, u1, steps)).astype(np.int64)
    vv = np.rint(np.linspace(v0, v1, steps)).astype(np.int64)
    h, w = img.shape
    ok = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
    uu, vv = uu[ok], vv[ok]
    if len(uu) == 0:
        return
    flat = np.unique(vv * w + uu)
    img.flat[flat] += gain


def _heavy_rain(img, spec, cam, rng, lead_box) -> np.ndarray:
    p, s = K.HEAVY_RAIN, spec.severity
    h, w = img.shape
    scale = w / 160.0
    img = (1 - p["haze_blend"] * s) * img + p["haze_blend"] * s * p["haze_level"]

    # spray thrown up behind the lead vehicle, or off the road ahead
    if lead_box is not None:
        u0, u1, vt, vb = lead_box
        anchors = [(u0, vb), (u1, vb), ((u0 + u1) / 2, vb)]
        radius = max(u1 - u0, 2.0) * 0.6
    else:
        anchors = [(cam.cx, cam.horizon_row + 4 * scale)]
        radius = 10 * scale
    vgrid, ugrid = np.mgrid[0:h, 0:w]
    for _ in range(rng.poisson(p["spray_blobs"] * s)):
        au, av = anchors[rng.integers(len(anchors))]
        cu = au + rng.normal(0, radius)
        cv = av + rng.normal(0, radius * 0.4)
        r = radius * rng.uniform(0.5, 1.5)
        blob = np.exp(-((ugrid - cu) ** 2 + (vgrid - cv) ** 2) / (2 * r * r))
        img = img + p["spray_gain"] * s * rng.uniform(0.5, 1.0) * blob

    blurred = ndimage.gaussian_filter(img, 2.5 * scale, mode="nearest")
    for _ in range(rng.poisson(p["drop_rate"] * s * scale * scale)):
        cu, cv = rng.uniform(0, w), rng.uniform(0, h)
        r = rng.uniform(*p["drop_radius"]) * scale
        disc = (ugrid - cu) ** 2 + (vgrid - cv) ** 2 < r * r
        img = np.where(disc, blurred + 12.0, img)

    slant = rng.normal(0.15, 0.05)
    for _ in range(rng.poisson(p["streak_rate"] * s * scale * scale)):
        u0, v0 = rng.uniform(0, w), rng.uniform(0, h)
        length = rng.uniform(*p["streak_length"]) * scale
        _draw_segment(img, u0, v0, u0 + slant * length, v0 + length, rng.uniform(*p["streak_gain"]) * s)

    sigma = p["blur_sigma"] * s * scale
    if sigma > 0:
        img = ndimage.gaussian_filter(img, sigma, mode="nearest")
    return img + rng.normal(0, p["extra_noise"] * s, img.shape)


def _sun_after_rain(img, spec, cam, rng, layout) -> np.ndarray:
    p, s = K.SUN_AFTER_RAIN, spec.severity
    h, w = img.shape
    vgrid, ugrid = np.mgrid[0:h, 0:w].astype(float)
    hz = cam.horizon_row
    ground_rows = max(h - 1 - hz, 1.0)
    uc = layout["sun_u"] * (w - 1)
    centre = hz + 0.35 * ground_rows
    half = p["reflection_rows"] * ground_rows
    down = np.clip(vgrid - hz, 0, None)
    # the reflection narrows towards the horizon like a glint path on wet asphalt
    width = 0.05 * w + 0.25 * down
    band = np.exp(-(((ugrid - uc) / width) ** 2) - ((vgrid - centre) / half) ** 2) * (vgrid > hz)
    img = img + p["reflection_gain"] * s * band
    glitter = (rng.random(img.shape) < 0.04 * band) * rng.uniform(0.4, 1.0, img.shape)
    return img + p["glitter_gain"] * s * glitter


def _direct_sunlight(img, spec, cam, rng, layout) -> np.ndarray:
    p, s = K.DIRECT_SUNLIGHT, spec.severity
    h, w = img.shape
    vgrid, ugrid = np.mgrid[0:h, 0:w].astype(float)
    su = layout["sun_u"] * (w - 1) + rng.normal(0, 0.01 * w)
    sv = layout["sun_v"] * (h - 1)
    sig = p["glare_sigma"] * w
    glare = np.exp(-((ugrid - su) ** 2 + (vgrid - sv) ** 2) / (2 * sig * sig))
    img = img + p["glare_gain"] * s * glare
    img = (1 - p["veil"] * s) * img + p["veil"] * s * 235.0
    # flare ghost mirrored through the image centre
    fu, fv = 2 * cam.cx - su, 2 * cam.cy - sv
    r = p["flare_radius"] * w
    disc = (ugrid - fu) ** 2 + (vgrid - fv) ** 2 < r * r
    return img + p["flare_gain"] * s * disc


def render_frame(
    spec: SceneSpec,
    cam: CameraModel,
    t: float = 0.0,
    motion: Motion | None = None,
    frame_index: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render ``(image, mask)`` at time ``t`` seconds into the drive.

    ``image`` is uint8 gray; ``mask`` is uint8 in {0, 1} marking the ego-lane
    ground up to the lead vehicle's rear (or the mask range limit).
    """
    motion = motion or Motion()
    if frame_index is None:
        frame_index = int(round(t * K.FRAME_RATE_HZ))
    f = K.SUPERSAMPLE
    uu, vv, x, z = _ground_grid(cam, f)
    travelled = float(motion.distance(t))
    offset = float(motion.lateral_offset(t))
    layout = _layout(spec)

    ground = np.isfinite(z)
    zg = z[ground]
    lat = x[ground] - (0.5 * spec.curvature * zg * zg - offset)
    img = _sky(vv, cam)
    img[ground] = _shade_ground(spec, lat, travelled + zg, zg, layout)

    limit = K.MASK_MAX_DISTANCE
    lead_box = None
    if spec.lead_distance is not None:
        limit = min(limit, spec.lead_distance)
        lead_box = _vehicle_box(spec, cam, offset)
        _draw_vehicle(img, uu, vv, lead_box, spec.lead_distance)

    inside = np.zeros(z.shape)
    inside[ground] = (np.abs(lat) < spec.lane_width / 2) & (zg < limit)
    mask = bottom_component((_downsample(inside, f) >= 0.5).astype(np.uint8))

    img = _downsample(img, f)
    rng = np.random.default_rng([spec.seed, frame_index, _SALT_FRAME])
    kind = spec.degradation
    if spec.severity > 0:
        if kind is DegradationKind.HEAVY_RAIN:
            img = _heavy_rain(img, spec, cam, rng, lead_box)
        elif kind is DegradationKind.SUN_AFTER_RAIN:
            img = _sun_after_rain(img, spec, cam, rng, layout)
        elif kind is DegradationKind.DIRECT_SUNLIGHT:
            img = _direct_sunlight(img, spec, cam, rng, layout)
    img = img + rng.normal(0, K.SENSOR_NOISE, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask
