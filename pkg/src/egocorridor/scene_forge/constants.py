"""Rendering constants for the synthetic highway scenes.

All intensities are on the 0-255 gray scale. Degradation parameters are given
at severity 1 and scale linearly with severity.
"""

FRAME_RATE_HZ = 15.0
SPEED_RATE_HZ = 50.0
SEQUENCE_SECONDS = 30.0
FRAMES_PER_SEQUENCE = 450
SPEED_SAMPLES_PER_SEQUENCE = 1500

SUPERSAMPLE = 2

# geometry (metres)
LANE_WIDTH_RANGE = (2.5, 4.5)
MAX_ABS_CURVATURE = 0.003
MARKING_WIDTH = 0.15
DASH_LENGTH = 6.0
DASH_GAP = 12.0
SHOULDER_WIDTH = 0.75
MASK_MAX_DISTANCE = 100.0
VEHICLE_HEIGHT = 1.4

# base intensities
SKY_TOP = 210.0
SKY_HORIZON = 180.0
ROAD = 92.0
MARKING = 215.0
GRASS = 62.0
HAZE = 168.0
HAZE_DISTANCE = 260.0  # e-folding distance of atmospheric haze
ROAD_TEXTURE = 5.0
GRASS_TEXTURE = 12.0
TEXTURE_CELL = 0.4  # metres per texture cell on the ground
VEHICLE_BODY = 48.0
VEHICLE_WINDOW = 28.0
VEHICLE_LIGHT = 150.0
SENSOR_NOISE = 2.0

# degradations, values at severity 1
HEAVY_RAIN = {
    "road_darkening": 18.0,
    "marking_contrast_loss": 0.8,
    "haze_blend": 0.35,
    "haze_level": 150.0,
    "streak_rate": 180.0,  # Poisson mean per 160x96 frame
    "streak_length": (4, 14),
    "streak_gain": (30.0, 70.0),
    "drop_rate": 25.0,
    "drop_radius": (1.5, 5.0),
    "spray_blobs": 6.0,
    "spray_gain": 60.0,
    "blur_sigma": 1.2,
    "extra_noise": 5.0,
}

SUN_AFTER_RAIN = {
    "reflection_gain": 150.0,
    "reflection_rows": 0.22,  # band half-height as a fraction of the ground rows
    "glitter_gain": 90.0,
    "marking_contrast_loss": 0.5,
}

DIRECT_SUNLIGHT = {
    "glare_gain": 130.0,
    "glare_sigma": 0.35,  # fraction of image width
    "veil": 0.4,
    "flare_gain": 60.0,
    "flare_radius": 0.06,  # fraction of image width
    "marking_contrast_loss": 0.55,
}

TAR_SEAMS = {
    "count": (2, 4),
    "width": (0.08, 0.16),
    "darkening": 40.0,
    "wander_amplitude": 0.6,
    "wander_length": (25.0, 70.0),
}

SHADOWS = {
    "period": (25.0, 60.0),
    "length": (3.0, 12.0),
    "attenuation": 0.55,
}
