"""Symmetric fully convolutional ego-corridor network.

The reference topology is::

    input
    3 x [conv+relu, conv+relu, pool]          encoder
    [conv+relu, conv+relu]                    bottleneck (encoder side)
    [deconv+relu, deconv+relu]                bottleneck (decoder side)
    3 x [upsample, deconv+relu, deconv+relu]  decoder
    conv 1x1 + sigmoid                        projection

Every entry of ``NetworkSpec.layers`` counts as one layer, the input layer
included, which gives 41 for the reference stack. Deconvolutions are stride-1
same-padded convolutions; spatial restoration is done by the upsampling layers.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor_core as tc
from .blobio import read_container, write_container
from .errors import (
    AsymmetricSpec,
    CorruptCheckpoint,
    ParamBudgetViolation,
    ShapeFlowError,
    ShapeMismatch,
)

LAYER_KINDS = ("input", "conv", "deconv", "pool", "upsample", "relu", "sigmoid")
FULL_INPUT = (360, 652)
DESK_INPUT = (96, 160)
POOL_FACTORS = ((2, 2), (2, 2), (3, 1))
# channel widths per encoder stage and bottleneck
DEFAULT_WIDTHS = (8, 32, 64, 142)
REFERENCE_LAYER_COUNT = 41
PARAM_BUDGET = (600_000, 720_000)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: tuple[int, int] | None = None
    in_ch: int | None = None
    out_ch: int | None = None
    factor: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        weighted = self.kind in ("conv", "deconv")
        if weighted and (self.kernel is None or self.in_ch is None or self.out_ch is None):
            raise ValueError(f"{self.kind} layer needs kernel, in_ch and out_ch")
        if self.kind in ("pool", "upsample") and self.factor is None:
            raise ValueError(f"{self.kind} layer needs a factor")

    @property
    def weighted(self) -> bool:
        return self.kind in ("conv", "deconv")

    @property
    def param_count(self) -> int:
        if not self.weighted:
            return 0
        kh, kw = self.kernel
        return (kh * kw * self.in_ch + 1) * self.out_ch

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        for key in ("kernel", "factor"):
            if d.get(key) is not None:
                d[key] = tuple(int(v) for v in d[key])
        return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    input_height: int
    input_width: int
    layers: tuple[LayerSpec, ...]

    @property
    def input_shape(self) -> tuple[int, int]:
        return self.input_height, self.input_width

    @property
    def is_full_size(self) -> bool:
        return self.input_shape == FULL_INPUT

    def resized(self, height: int, width: int) -> "NetworkSpec":
        return NetworkSpec(height, width, self.layers)

    def to_dict(self) -> dict:
        return {
            "input_height": self.input_height,
            "input_width": self.input_width,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        if "preset" in d:
            preset = d["preset"]
            widths = tuple(d.get("widths", DEFAULT_WIDTHS))
            if preset == "full":
                return reference_spec(*FULL_INPUT, widths=widths)
            if preset == "desk":
                return reference_spec(*DESK_INPUT, widths=widths)
            raise ValueError(f"unknown network preset {preset!r}")
        return cls(
            int(d["input_height"]),
            int(d["input_width"]),
            tuple(LayerSpec.from_dict(layer) for layer in d["layers"]),
        )


def reference_spec(height: int = FULL_INPUT[0], width: int = FULL_INPUT[1], widths=DEFAULT_WIDTHS) -> NetworkSpec:
    c1, c2, c3, c4 = widths
    k = (3, 3)

    def conv(kind, a, b):
        return [LayerSpec(kind, kernel=k, in_ch=a, out_ch=b), LayerSpec("relu")]

    layers = [LayerSpec("input")]
    stages = [(1, c1), (c1, c2), (c2, c3)]
    for (a, b), factor in zip(stages, POOL_FACTORS):
        layers += conv("conv", a, b) + conv("conv", b, b) + [LayerSpec("pool", factor=factor)]
    layers += conv("conv", c3, c4) + conv("conv", c4, c4)
    layers += conv("deconv", c4, c4) + conv("deconv", c4, c3)
    up = [(c3, c2), (c2, c1), (c1, c1)]
    for (a, b), factor in zip(up, reversed(POOL_FACTORS)):
        layers += [LayerSpec("upsample", factor=factor)] + conv("deconv", a, a) + conv("deconv", a, b)
    layers += [LayerSpec("conv", kernel=(1, 1), in_ch=c1, out_ch=1), LayerSpec("sigmoid")]
    return NetworkSpec(height, width, tuple(layers))


def desk_spec(widths=DEFAULT_WIDTHS) -> NetworkSpec:
    return reference_spec(*DESK_INPUT, widths=widths)


def count_layers(spec: NetworkSpec) -> int:
    return len(spec.layers)


def count_params(spec: NetworkSpec) -> int:
    return sum(layer.param_count for layer in spec.layers)


def check_spec(spec: NetworkSpec) -> None:
    """Raise if the spec breaks symmetry, shape flow, or the parameter budget."""
    layers = spec.layers
    if not layers or layers[-1].kind != "sigmoid":
        raise AsymmetricSpec("final layer must be a sigmoid")
    weighted = [layer for layer in layers if layer.weighted]
    if not weighted or weighted[-1].kind != "conv" or weighted[-1].kernel != (1, 1) or weighted[-1].out_ch != 1:
        raise AsymmetricSpec("last weighted layer must be a 1x1 conv projecting to one channel")
    n_conv = sum(1 for layer in weighted[:-1] if layer.kind == "conv")
    n_deconv = sum(1 for layer in weighted if layer.kind == "deconv")
    if n_conv != n_deconv:
        raise AsymmetricSpec(f"{n_conv} conv layers but {n_deconv} deconv layers")
    pools = [layer.factor for layer in layers if layer.kind == "pool"]
    ups = [layer.factor for layer in layers if layer.kind == "upsample"]
    if len(pools) != len(ups):
        raise AsymmetricSpec(f"{len(pools)} pool layers but {len(ups)} upsample layers")
    if list(reversed(pools)) != ups:
        raise AsymmetricSpec(f"upsample factors {ups} do not mirror pool factors {pools}")

    h, w, ch = spec.input_height, spec.input_width, 1
    for i, layer in enumerate(layers):
        if layer.weighted:
            if layer.in_ch != ch:
                raise ShapeFlowError(f"layer {i} expects {layer.in_ch} channels, receives {ch}")
            ch = layer.out_ch
        elif layer.kind == "pool":
            ph, pw = layer.factor
            if h % ph or w % pw:
                raise ShapeFlowError(f"layer {i}: pool {ph}x{pw} does not divide {h}x{w}")
            h, w = h // ph, w // pw
        elif layer.kind == "upsample":
            h, w = h * layer.factor[0], w * layer.factor[1]
    if (h, w, ch) != (spec.input_height, spec.input_width, 1):
        raise ShapeFlowError(f"output shape {(ch, h, w)} differs from input {(1, spec.input_height, spec.input_width)}")

    if spec.is_full_size:
        n = count_params(spec)
        lo, hi = PARAM_BUDGET
        if not lo <= n <= hi:
            raise ParamBudgetViolation(f"full-size network has {n} trainable parameters, outside [{lo}, {hi}]")


def _followed_by_relu(layers, i) -> bool:
    return i + 1 < len(layers) and layers[i + 1].kind == "relu"


@dataclass
class Network:
    spec: NetworkSpec
    params: list  # ConvParams for weighted layers, None elsewhere
    metadata: dict = field(default_factory=dict)

    @property
    def layer_count(self) -> int:
        return count_layers(self.spec)

    @property
    def param_count(self) -> int:
        return sum(p.param_count for p in self.params if p is not None)

    def weighted(self) -> Iterator[tuple[int, tc.ConvParams]]:
        for i, p in enumerate(self.params):
            if p is not None:
                yield i, p

    def with_input_size(self, height: int, width: int) -> "Network":
        """Same weights, different input resolution (fully convolutional)."""
        spec = self.spec.resized(height, width)
        check_spec(spec)
        return Network(spec, self.params, dict(self.metadata))

    def copy(self) -> "Network":
        return Network(self.spec, copy.deepcopy(self.params), copy.deepcopy(self.metadata))

    def _check_input(self, x: np.ndarray):
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeMismatch(f"expected (batch, 1, H, W) grayscale input, got {x.shape}")
        if x.shape[2:] != self.spec.input_shape:
            raise ShapeMismatch(f"input dims {x.shape[2:]} != network input dims {self.spec.input_shape}")

    def forward_train(self, x: np.ndarray):
        """Forward pass on an ``(N, 1, H, W)`` batch keeping backward caches."""
        self._check_input(x)
        h = x.reshape(x.shape[0], *x.shape[2:], 1)  # channels-last
        caches = []
        for layer, p in zip(self.spec.layers, self.params):
            kind = layer.kind
            if kind == "input":
                caches.append(None)
            elif p is not None:
                caches.append(h)
                h = tc.conv_nhwc(h, p.weights, p.bias)
            elif kind == "pool":
                h, idx = tc.maxpool_nhwc(h, layer.factor)
                caches.append(idx)
            elif kind == "upsample":
                caches.append(None)
                h = tc.upsample_nhwc(h, layer.factor)
            else:
                h = tc.activation(h, kind)
                caches.append(h)
        return h.reshape(x.shape), caches

    def backward(self, caches, grad_out: np.ndarray) -> list:
        """Per-layer ``(grad_weights, grad_bias)``; None for unweighted layers."""
        grads = [None] * len(self.params)
        g = grad_out.reshape(grad_out.shape[0], *grad_out.shape[2:], 1)
        first_weighted = next(i for i, p in enumerate(self.params) if p is not None)
        for i in range(len(self.params) - 1, first_weighted - 1, -1):
            layer, p, cache = self.spec.layers[i], self.params[i], caches[i]
            kind = layer.kind
            if p is not None:
                g, gw, gb = tc.conv_backward_nhwc(cache, p.weights, g, need_input_grad=i != first_weighted)
                grads[i] = (gw, gb)
            elif kind == "pool":
                g = tc.maxpool_backward_nhwc(cache, g)
            elif kind == "upsample":
                g = tc.upsample_backward_nhwc(g, layer.factor)
            else:
                g = tc.activation_backward(cache, g, kind)
        return grads

    def predict(self, x: np.ndarray) -> np.ndarray:
        self._check_input(x)
        h = x.reshape(x.shape[0], *x.shape[2:], 1)
        for layer, p in zip(self.spec.layers, self.params):
            kind = layer.kind
            if kind == "input":
                continue
            if p is not None:
                h = tc.conv_nhwc(h, p.weights, p.bias)
            elif kind == "pool":
                h, _ = tc.maxpool_nhwc(h, layer.factor)
            elif kind == "upsample":
                h = tc.upsample_nhwc(h, layer.factor)
            else:
                h = tc.activation(h, kind)
        return h.reshape(x.shape)


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Validate ``spec`` and initialise weights.

    Weights are zero-mean uniform with bound ``sqrt(6 / fan_in)`` in front of a
    ReLU and ``sqrt(1 / fan_in)`` otherwise; biases start at zero.
    """
    check_spec(spec)
    rng = np.random.default_rng(seed)
    params = []
    for i, layer in enumerate(spec.layers):
        if not layer.weighted:
            params.append(None)
            continue
        kh, kw = layer.kernel
        fan_in = kh * kw * layer.in_ch
        bound = np.sqrt((6.0 if _followed_by_relu(spec.layers, i) else 1.0) / fan_in)
        w = rng.uniform(-bound, bound, size=(layer.out_ch, layer.in_ch, kh, kw)).astype(dtype)
        params.append(tc.ConvParams(w, np.zeros(layer.out_ch, dtype=dtype)))
    return Network(spec, params, {"seed": seed})


def as_batch(image: np.ndarray) -> np.ndarray:
    """Accept ``(H, W)``, ``(1, H, W)`` or ``(N, 1, H, W)`` images."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image[None, None]
    if image.ndim == 3:
        return image[:, None] if image.shape[0] != 1 else image[None]
    return image


def normalize_gray(image: np.ndarray) -> np.ndarray:
    """8-bit gray to float32 in [0, 1]."""
    return np.asarray(image, dtype=np.float32) / np.float32(255.0)


def forward(network: Network, image: np.ndarray) -> np.ndarray:
    """Probability mask for a normalised grayscale image (or batch).

    A 2-D input returns a 2-D mask; batched input returns ``(N, 1, H, W)``.
    """
    batch = as_batch(image)
    dtype = network.params[next(i for i, _ in network.weighted())].weights.dtype
    out = network.predict(batch.astype(dtype, copy=False))
    return out[0, 0] if np.ndim(image) == 2 else out


@dataclass
class Checkpoint:
    spec: NetworkSpec
    weights: list  # (weights, bias) per weighted layer, layer order
    metadata: dict

    @classmethod
    def from_network(cls, network: Network, **metadata) -> "Checkpoint":
        meta = dict(network.metadata)
        meta.update(metadata)
        weights = [(p.weights.copy(), p.bias.copy()) for _, p in network.weighted()]
        return cls(network.spec, weights, meta)

    def to_network(self) -> Network:
        check_spec(self.spec)
        it = iter(self.weights)
        params = []
        for layer in self.spec.layers:
            if layer.weighted:
                w, b = next(it)
                params.append(tc.ConvParams(w.copy(), b.copy()))
            else:
                params.append(None)
        return Network(self.spec, params, dict(self.metadata))


def save_checkpoint(network: Network | Checkpoint, path, **metadata) -> None:
    ckpt = network if isinstance(network, Checkpoint) else Checkpoint.from_network(network)
    meta = dict(ckpt.metadata)
    meta.update(metadata)
    blobs = []
    for w, b in ckpt.weights:
        blobs += [w, b]
    write_container(path, {"kind": "network", "spec": ckpt.spec.to_dict(), "metadata": meta}, blobs)


def load_checkpoint(path) -> Network:
    header, blobs = read_container(Path(path))
    if header.get("kind") != "network":
        raise CorruptCheckpoint(f"{path}: not a network checkpoint (kind={header.get('kind')!r})")
    try:
        spec = NetworkSpec.from_dict(header["spec"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed network spec ({exc})") from None
    expected = []
    for layer in spec.layers:
        if layer.weighted:
            kh, kw = layer.kernel
            expected += [(layer.out_ch, layer.in_ch, kh, kw), (layer.out_ch,)]
    if [b.shape for b in blobs] != expected:
        raise CorruptCheckpoint(f"{path}: weight blobs do not match the layer stack")
    weights = list(zip(blobs[0::2], blobs[1::2]))
    return Checkpoint(spec, weights, header.get("metadata", {})).to_network()
