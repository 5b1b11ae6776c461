"""Ego-lane corridor segmentation with a small fully convolutional network.

Submodules: ``tensor_core`` (layer kernels), ``corridor_net`` (network spec,
forward/backward, checkpoints), ``trainer`` (Adam training loop),
``scene_forge`` (synthetic highway data), ``hough_baseline`` (classical
comparator), ``corridor_eval`` (corridor geometry and KPIs) and ``cli``.
"""
from .camera import CameraModel, default_camera, ground_to_pixel, pixel_to_ground
from .corridor_net import Network, NetworkSpec, build_network, desk_spec, load_checkpoint, reference_spec, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "Network",
    "NetworkSpec",
    "build_network",
    "default_camera",
    "desk_spec",
    "ground_to_pixel",
    "load_checkpoint",
    "pixel_to_ground",
    "reference_spec",
    "save_checkpoint",
]
