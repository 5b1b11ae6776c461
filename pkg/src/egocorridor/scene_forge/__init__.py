"""Procedural highway scenes with ego-corridor labels."""
from ..camera import CameraModel, default_camera, ground_to_pixel, ground_to_pixel_array
from .render import bottom_component, marking_gain, render_frame
from .scene import DegradationKind, Motion, SceneSpec
from .sequence import (
    Sequence,
    bench_catalog,
    build_dataset,
    dataset_frame_indices,
    desk_catalog,
    generate_sequence,
    load_dataset,
    random_scene,
    read_manifest,
    read_sequence,
    speed_trace,
    challenge_catalog,
    CHALLENGE_COUNTS,
    write_sequence,
)

__all__ = [
    "CameraModel",
    "DegradationKind",
    "Motion",
    "SceneSpec",
    "Sequence",
    "bench_catalog",
    "bottom_component",
    "build_dataset",
    "dataset_frame_indices",
    "default_camera",
    "desk_catalog",
    "generate_sequence",
    "ground_to_pixel",
    "ground_to_pixel_array",
    "load_dataset",
    "marking_gain",
    "random_scene",
    "read_manifest",
    "read_sequence",
    "render_frame",
    "speed_trace",
    "challenge_catalog",
    "CHALLENGE_COUNTS",
    "write_sequence",
]
