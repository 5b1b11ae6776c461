from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from ..errors import InvalidSceneSpec
from . import constants as K


class DegradationKind(str, Enum):
    NONE = "none"
    HEAVY_RAIN = "heavy_rain"
    SUN_AFTER_RAIN = "sun_after_rain"
    DIRECT_SUNLIGHT = "direct_sunlight"
    FADED_LINES = "faded_lines"
    TAR_SEAMS = "tar_seams"
    SHADOWS = "shadows"


@dataclass(frozen=True)
class SceneSpec:
    """One highway scene. The ego vehicle drives in the rightmost lane."""

    lane_width: float = 3.5
    curvature: float = 0.0
    n_lanes: int = 3
    marking_style: str = "dashed"
    marking_contrast: float = 1.0
    lead_distance: float | None = None
    lead_width: float = 1.8
    degradation: DegradationKind = DegradationKind.NONE
    severity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "degradation", DegradationKind(self.degradation))
        lo, hi = K.LANE_WIDTH_RANGE
        if not lo <= self.lane_width <= hi:
            raise InvalidSceneSpec(f"lane_width {self.lane_width} m outside [{lo}, {hi}] m")
        if abs(self.curvature) > K.MAX_ABS_CURVATURE:
            raise InvalidSceneSpec(f"|curvature| {abs(self.curvature)} 1/m exceeds {K.MAX_ABS_CURVATURE} 1/m")
        if self.n_lanes < 1:
            raise InvalidSceneSpec(f"n_lanes must be >= 1, got {self.n_lanes}")
        if self.marking_style not in ("solid", "dashed"):
            raise InvalidSceneSpec(f"marking style must be solid or dashed, got {self.marking_style!r}")
        if not 0.0 <= self.marking_contrast <= 1.0:
            raise InvalidSceneSpec(f"marking contrast {self.marking_contrast} outside [0, 1]")
        if self.lead_distance is not None and not self.lead_distance > 0:
            raise InvalidSceneSpec(f"lead vehicle distance must be > 0, got {self.lead_distance}")
        if not 0.0 <= self.severity <= 1.0:
            raise InvalidSceneSpec(f"severity {self.severity} outside [0, 1]")

    @property
    def category(self) -> str:
        return self.degradation.value

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degradation"] = self.degradation.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        """Accept the flat form or the nested road/marking/lead_vehicle form."""
        d = dict(d)
        flat = {}
        road = d.pop("road", None) or {}
        for key in ("lane_width", "curvature", "n_lanes"):
            if key in road:
                flat[key] = road[key]
        marking = d.pop("marking", None) or {}
        if "style" in marking:
            flat["marking_style"] = marking["style"]
        if "contrast" in marking:
            flat["marking_contrast"] = marking["contrast"]
        lead = d.pop("lead_vehicle", None)
        if lead:
            flat["lead_distance"] = lead.get("distance")
            if "width" in lead:
                flat["lead_width"] = lead["width"]
        d.pop("motion", None)
        flat.update(d)
        try:
            return cls(**flat)
        except TypeError as exc:
            raise InvalidSceneSpec(str(exc)) from None
        except ValueError as exc:
            if isinstance(exc, InvalidSceneSpec):
                raise
            raise InvalidSceneSpec(str(exc)) from None


@dataclass(frozen=True)
class Motion:
    """Ego speed and lateral offset as sinusoids around a base value.

    ``lateral_offset`` is the vehicle's position right of the lane centre.
    """

    speed_mps: float = 30.0
    speed_amplitude: float = 0.0
    speed_period: float = 20.0
    offset_amplitude: float = 0.0
    offset_period: float = 9.0
    offset_phase: float = 0.0
    offset_bias: float = 0.0

    def __post_init__(self):
        lo = self.speed_mps - abs(self.speed_amplitude)
        hi = self.speed_mps + abs(self.speed_amplitude)
        if lo < 0 or hi > 60:
            raise InvalidSceneSpec(f"speed profile spans [{lo}, {hi}] m/s, allowed [0, 60]")
        if self.speed_period <= 0 or self.offset_period <= 0:
            raise InvalidSceneSpec("motion periods must be positive")

    def speed(self, t):
        return self.speed_mps + self.speed_amplitude * np.sin(2 * math.pi * t / self.speed_period)

    def distance(self, t):
        """Integral of :meth:`speed` from 0 to ``t``."""
        w = 2 * math.pi / self.speed_period
        return self.speed_mps * t + self.speed_amplitude * (1 - np.cos(w * t)) / w

    def lateral_offset(self, t):
        return self.offset_bias + self.offset_amplitude * np.sin(2 * math.pi * t / self.offset_period + self.offset_phase)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "Motion":
        try:
            return cls(**(d or {}))
        except TypeError as exc:
            raise InvalidSceneSpec(str(exc)) from None

