"""Binary PGM (P5) and PPM (P6) with 8-bit samples."""
from __future__ import annotations

import re

import numpy as np

_HEADER = re.compile(rb"\A(P[56])(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def _write(path, magic: bytes, data: np.ndarray) -> None:
    if data.dtype != np.uint8:
        if np.issubdtype(data.dtype, np.floating):
            raise TypeError("netpbm writer expects uint8 samples; quantise first")
        if data.min(initial=0) < 0 or data.max(initial=0) > 255:
            raise ValueError("samples out of 8-bit range")
        data = data.astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"%s\n%d %d\n255\n" % (magic, w, h))
        fh.write(np.ascontiguousarray(data).tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {image.shape}")
    _write(path, b"P5", image)


def write_ppm(path, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) array, got shape {image.shape}")
    _write(path, b"P6", image)


def read_netpbm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    m = _HEADER.match(raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    n = w * h * channels
    body = raw[m.end() : m.end() + n]
    if len(body) != n:
        raise ValueError(f"{path}: expected {n} sample bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=np.uint8)
    return data.reshape(h, w) if channels == 1 else data.reshape(h, w, 3)


def read_pgm(path) -> np.ndarray:
    img = read_netpbm(path)
    if img.ndim != 2:
        raise ValueError(f"{path}: expected a grayscale P5 image")
    return img.copy()
