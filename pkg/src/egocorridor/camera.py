"""Pinhole camera over a flat ground plane.

Vehicle frame: ``x`` lateral (right positive), ``z`` forward along the ground,
camera mounted ``height`` metres above the ground and pitched down by
``pitch`` radians. Image coordinates are ``(u, v)`` = (column, row) with pixel
centres at integer positions.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import Behind, HorizonRay

REFERENCE_WIDTH = 652
REFERENCE_FOCAL = 700.0
DEFAULT_HEIGHT_M = 1.5
DEFAULT_PITCH = math.radians(2.0)
# rays closer than this to the horizon are treated as not hitting the ground
_MIN_DENOM = 1e-9


@dataclass(frozen=True)
class CameraModel:
    focal: float
    cx: float
    cy: float
    height: float
    pitch: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError(f"camera height must be positive, got {self.height}")
        if not 0 <= self.pitch < math.pi / 2:
            raise ValueError(f"pitch must lie in [0, pi/2), got {self.pitch}")
        if self.focal <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")

    @property
    def principal_point(self) -> tuple[float, float]:
        return self.cx, self.cy

    @property
    def horizon_row(self) -> float:
        return self.cy - self.focal * math.tan(self.pitch)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        if "focal" not in d:
            return default_camera(int(d["image_width"]), int(d["image_height"]))
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def default_camera(width: int = 160, height: int = 96, pitch: float = DEFAULT_PITCH, cam_height: float = DEFAULT_HEIGHT_M) -> CameraModel:
    """Windshield camera: 700 px focal at 652 px width, scaled with width."""
    return CameraModel(
        focal=REFERENCE_FOCAL * width / REFERENCE_WIDTH,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        height=cam_height,
        pitch=pitch,
        image_width=width,
        image_height=height,
    )


def project_point(cam: CameraModel, x, y_up, z):
    """Project vehicle-frame points ``(x, y_up, z)``; ``y_up`` is height above ground.

    Returns ``(u, v, depth)`` arrays; points with ``depth <= 0`` lie behind the
    image plane and their ``u, v`` are meaningless.
    """
    s, c = math.sin(cam.pitch), math.cos(cam.pitch)
    y_down = cam.height - np.asarray(y_up, dtype=float)  # below the camera
    z = np.asarray(z, dtype=float)
    yc = y_down * c - z * s
    zc = y_down * s + z * c
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.cx + cam.focal * np.asarray(x, dtype=float) / zc
        v = cam.cy + cam.focal * yc / zc
    return u, v, zc


def ground_to_pixel(cam: CameraModel, point) -> tuple[float, float]:
    x, z = point
    u, v, depth = project_point(cam, x, 0.0, z)
    if not depth > 1e-12:
        raise Behind(f"ground point (x={x}, z={z}) is behind the camera")
    return float(u), float(v)


def ground_to_pixel_array(cam: CameraModel, x, z):
    """Vectorised :func:`ground_to_pixel`; NaN where the point is behind."""
    u, v, depth = project_point(cam, x, 0.0, z)
    bad = ~(depth > 1e-12)
    u = np.where(bad, np.nan, u)
    v = np.where(bad, np.nan, v)
    return u, v


def pixel_to_ground_array(cam: CameraModel, u, v):
    """Ground intersection of the rays through ``(u, v)``; NaN above the horizon."""
    s, c = math.sin(cam.pitch), math.cos(cam.pitch)
    xn = (np.asarray(u, dtype=float) - cam.cx) / cam.focal
    yn = (np.asarray(v, dtype=float) - cam.cy) / cam.focal
    denom = yn * c + s  # downward component of the ray in the level frame
    ok = denom > _MIN_DENOM
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ok, cam.height / np.where(ok, denom, 1.0), np.nan)
    return t * xn, t * (c - yn * s)


def pixel_to_ground(cam: CameraModel, pixel) -> tuple[float, float]:
    u, v = pixel
    x, z = pixel_to_ground_array(cam, u, v)
    if not np.isfinite(z):
        raise HorizonRay(f"pixel (u={u}, v={v}) is at or above the horizon row {cam.horizon_row:.3f}")
    return float(x), float(z)


def row_distance(cam: CameraModel, v) -> np.ndarray:
    """Forward ground distance seen along the optical column at row ``v``."""
    return pixel_to_ground_array(cam, np.full_like(np.asarray(v, dtype=float), cam.cx), v)[1]
