"""Dense kernels with hand-written backward passes.

The public functions take plain ``numpy.ndarray`` tensors shaped ``(batch,
channels, height, width)``. Every kernel is pure: inputs are never mutated and
results come back in the input dtype, so float64 runs serve gradient checks
and float32 runs serve training and inference.

Internally everything runs channels-last (``N, H, W, C``): im2col is built in
cache-sized row blocks and fed to one GEMM per block. The network calls the
``*_nhwc`` variants directly and only converts layout at its input and output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvenKernel, IndivisibleShape, ShapeMismatch

__all__ = [
    "ConvParams",
    "PoolParams",
    "PoolIndex",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool_forward",
    "maxpool_backward",
    "upsample_nearest",
    "upsample_backward",
    "activation",
    "activation_backward",
    "relu",
    "sigmoid",
    "conv_nhwc",
    "conv_backward_nhwc",
    "maxpool_nhwc",
    "maxpool_backward_nhwc",
    "upsample_nhwc",
    "upsample_backward_nhwc",
]

# pixels per im2col block; keeps the column buffer inside L2 for typical widths
_BLOCK_PIXELS = 4096


@dataclass
class ConvParams:
    """Stride-1, zero same-padded convolution weights.

    ``weights`` has shape ``(out_channels, in_channels, kh, kw)`` and ``bias``
    shape ``(out_channels,)``.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeMismatch(f"conv weights must be rank 4, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} output channels"
            )
        kh, kw = self.kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise EvenKernel(f"kernel {kh}x{kw} has no centered same-padding")

    @classmethod
    def zeros(cls, kernel, in_channels, out_channels, dtype=np.float64) -> "ConvParams":
        kh, kw = kernel
        return cls(
            np.zeros((out_channels, in_channels, kh, kw), dtype=dtype),
            np.zeros(out_channels, dtype=dtype),
        )

    @property
    def kernel(self) -> tuple[int, int]:
        return int(self.weights.shape[2]), int(self.weights.shape[3])

    @property
    def in_channels(self) -> int:
        return int(self.weights.shape[1])

    @property
    def out_channels(self) -> int:
        return int(self.weights.shape[0])

    @property
    def param_count(self) -> int:
        kh, kw = self.kernel
        return (kh * kw * self.in_channels + 1) * self.out_channels


@dataclass(frozen=True)
class PoolParams:
    factor: tuple[int, int]

    def __post_init__(self):
        ph, pw = self.factor
        if ph < 1 or pw < 1:
            raise IndivisibleShape(f"pool factor must be >= 1, got {self.factor}")


@dataclass(frozen=True)
class PoolIndex:
    """Window-local argmax positions recorded by max pooling.

    ``local`` holds, per output cell, the row-major offset ``dy * pw + dx`` of
    the winning element inside its window. Its layout follows the pooled
    tensor (NCHW from the public API, NHWC from the internal one).
    """

    local: np.ndarray
    factor: tuple[int, int]
    input_shape: tuple[int, int, int, int]


def _check_rank4(x: np.ndarray, name: str = "input"):
    if x.ndim != 4:
        raise ShapeMismatch(f"{name} must be rank 4, got shape {x.shape}")


def _to_nhwc(x):
    return x.transpose(0, 2, 3, 1)


def _to_nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


# --------------------------------------------------------------------------
# convolution

def _pad(x: np.ndarray, py: int, px: int) -> np.ndarray:
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2 * py, w + 2 * px, c), dtype=x.dtype)
    xp[:, py : py + h, px : px + w] = x
    return xp


def _blocks(h: int, w: int):
    rows = max(1, _BLOCK_PIXELS // w)
    for y0 in range(0, h, rows):
        yield y0, min(rows, h - y0)


def _fill_cols(buf: np.ndarray, xp_img: np.ndarray, y0: int, r: int, w: int) -> np.ndarray:
    # buf: (rows, w, kh, kw, c); column order (dy, dx, c)
    _, _, kh, kw, c = buf.shape
    cb = buf[:r]
    for dy in range(kh):
        for dx in range(kw):
            cb[:, :, dy, dx, :] = xp_img[y0 + dy : y0 + dy + r, dx : dx + w, :]
    return cb.reshape(r * w, kh * kw * c)


def _weight_matrix(weights: np.ndarray) -> np.ndarray:
    o, c, kh, kw = weights.shape
    return np.ascontiguousarray(weights.transpose(2, 3, 1, 0).reshape(kh * kw * c, o))


def conv_nhwc(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-padded stride-1 convolution of an ``(N, H, W, C)`` tensor."""
    n, h, w, c = x.shape
    o, ci, kh, kw = weights.shape
    if ci != c:
        raise ShapeMismatch(f"input has {c} channels, conv expects {ci}")
    wmat = _weight_matrix(weights.astype(x.dtype, copy=False))
    xp = _pad(x, kh // 2, kw // 2)
    out = np.empty((n, h, w, o), dtype=x.dtype)
    buf = np.empty((max(1, _BLOCK_PIXELS // w), w, kh, kw, c), dtype=x.dtype)
    for i in range(n):
        for y0, r in _blocks(h, w):
            cols = _fill_cols(buf, xp[i], y0, r, w)
            np.matmul(cols, wmat, out=out[i, y0 : y0 + r].reshape(r * w, o))
    if bias is not None:
        out += bias.astype(x.dtype, copy=False)
    return out


def conv_backward_nhwc(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray, need_input_grad: bool = True):
    n, h, w, c = x.shape
    o, _, kh, kw = weights.shape
    if grad_out.shape != (n, h, w, o):
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != forward output shape {(n, h, w, o)}")
    xp = _pad(x, kh // 2, kw // 2)
    buf = np.empty((max(1, _BLOCK_PIXELS // w), w, kh, kw, c), dtype=x.dtype)
    gmat = np.zeros((kh * kw * c, o), dtype=x.dtype)
    for i in range(n):
        for y0, r in _blocks(h, w):
            cols = _fill_cols(buf, xp[i], y0, r, w)
            gmat += cols.T @ grad_out[i, y0 : y0 + r].reshape(r * w, o)
    grad_w = np.ascontiguousarray(gmat.reshape(kh, kw, c, o).transpose(3, 2, 0, 1))
    grad_b = grad_out.reshape(-1, o).sum(axis=0)
    grad_x = None
    if need_input_grad:
        # stride 1 with centred padding: the input gradient is a convolution
        # with the spatially flipped kernel, in/out channels swapped
        flipped = weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).astype(x.dtype)
        grad_x = conv_nhwc(grad_out, flipped)
    return grad_x, grad_w, grad_b


def conv2d_forward(x: np.ndarray, params: ConvParams) -> np.ndarray:
    _check_rank4(x)
    if x.shape[1] != params.in_channels:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, conv expects {params.in_channels}")
    return _to_nchw(conv_nhwc(_to_nhwc(x), params.weights, params.bias))


def conv2d_backward(x: np.ndarray, params: ConvParams, grad_out: np.ndarray, need_input_grad: bool = True):
    """Gradients of ``sum(grad_out * conv2d_forward(x, params))``.

    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is false.
    """
    _check_rank4(x)
    _check_rank4(grad_out, "grad_out")
    n, c, h, w = x.shape
    if c != params.in_channels:
        raise ShapeMismatch(f"input has {c} channels, conv expects {params.in_channels}")
    if grad_out.shape != (n, params.out_channels, h, w):
        raise ShapeMismatch(
            f"grad_out shape {grad_out.shape} != forward output shape {(n, params.out_channels, h, w)}"
        )
    gx, gw, gb = conv_backward_nhwc(
        np.ascontiguousarray(_to_nhwc(x)), params.weights, np.ascontiguousarray(_to_nhwc(grad_out)), need_input_grad
    )
    return (None if gx is None else _to_nchw(gx)), gw.astype(x.dtype), gb


# --------------------------------------------------------------------------
# pooling and upsampling

def _windows_nhwc(x: np.ndarray, factor) -> np.ndarray:
    n, h, w, c = x.shape
    ph, pw = factor
    if h % ph or w % pw:
        raise IndivisibleShape(f"spatial dims {h}x{w} not divisible by pool factor {ph}x{pw}")
    return x.reshape(n, h // ph, ph, w // pw, pw, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, h // ph, w // pw, c, ph * pw
    )


def maxpool_nhwc(x: np.ndarray, factor) -> tuple[np.ndarray, PoolIndex]:
    win = _windows_nhwc(x, factor)
    local = np.argmax(win, axis=-1)  # first maximum wins ties
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    return out, PoolIndex(local, tuple(factor), tuple(x.shape))


def maxpool_backward_nhwc(index: PoolIndex, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != index.local.shape:
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != pooled shape {index.local.shape}")
    n, h, w, c = index.input_shape
    ph, pw = index.factor
    win = np.zeros(grad_out.shape + (ph * pw,), dtype=grad_out.dtype)
    np.put_along_axis(win, index.local[..., None], grad_out[..., None], axis=-1)
    return np.ascontiguousarray(
        win.reshape(n, h // ph, w // pw, c, ph, pw).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
    )


def upsample_nhwc(x: np.ndarray, factor) -> np.ndarray:
    ph, pw = factor
    if ph < 1 or pw < 1:
        raise ShapeMismatch(f"upsample factor must be >= 1, got {factor}")
    return np.repeat(np.repeat(x, ph, axis=1), pw, axis=2)


def upsample_backward_nhwc(grad_out: np.ndarray, factor) -> np.ndarray:
    n, h, w, c = grad_out.shape
    ph, pw = factor
    if h % ph or w % pw:
        raise ShapeMismatch(f"grad_out dims {h}x{w} not a multiple of upsample factor {factor}")
    return grad_out.reshape(n, h // ph, ph, w // pw, pw, c).sum(axis=(2, 4))


def maxpool_forward(x: np.ndarray, params: PoolParams) -> tuple[np.ndarray, PoolIndex]:
    """Non-overlapping max pooling (stride equals window size).

    Ties resolve to the first element in row-major scan order of the window.
    """
    _check_rank4(x)
    out, idx = maxpool_nhwc(_to_nhwc(x), params.factor)
    local = np.ascontiguousarray(idx.local.transpose(0, 3, 1, 2))
    return _to_nchw(out), PoolIndex(local, idx.factor, tuple(x.shape))


def maxpool_backward(index: PoolIndex, grad_out: np.ndarray) -> np.ndarray:
    _check_rank4(grad_out, "grad_out")
    if grad_out.shape != index.local.shape:
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != pooled shape {index.local.shape}")
    n, c, h, w = index.input_shape
    nhwc_index = PoolIndex(index.local.transpose(0, 2, 3, 1), index.factor, (n, h, w, c))
    return _to_nchw(maxpool_backward_nhwc(nhwc_index, _to_nhwc(grad_out)))


def upsample_nearest(x: np.ndarray, factor: tuple[int, int]) -> np.ndarray:
    _check_rank4(x)
    return _to_nchw(upsample_nhwc(_to_nhwc(x), factor))


def upsample_backward(grad_out: np.ndarray, factor: tuple[int, int]) -> np.ndarray:
    _check_rank4(grad_out, "grad_out")
    return _to_nchw(upsample_backward_nhwc(_to_nhwc(grad_out), factor))


# --------------------------------------------------------------------------
# activations (layout-free)

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, clamped so results stay strictly inside (0, 1)."""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    info = np.finfo(x.dtype)
    return np.clip(out, info.tiny, 1.0 - info.epsneg, out=out)


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(out: np.ndarray, grad_out: np.ndarray, kind: str) -> np.ndarray:
    """Backward pass expressed through the stored forward output."""
    if out.shape != grad_out.shape:
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != activation shape {out.shape}")
    if kind == "relu":
        return np.where(out > 0, grad_out, 0).astype(grad_out.dtype, copy=False)
    if kind == "sigmoid":
        return grad_out * out * (1 - out)
    raise ValueError(f"unknown activation {kind!r}")
