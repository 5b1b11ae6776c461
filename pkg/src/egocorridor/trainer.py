"""Supervised training with Adam on a whole-batch RMSE loss."""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .corridor_net import Checkpoint, Network, NetworkSpec, build_network, normalize_gray
from .errors import EmptyDataset, ShapeMismatch

log = logging.getLogger(__name__)

EPS_LOSS = 1e-12
FULL_SCALE_EPOCHS = 250
DESK_SCALE_EPOCHS = 60


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int | None = None  # None: 250 for the full-size input, 60 otherwise
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")

    def resolved_epochs(self, spec: NetworkSpec) -> int:
        if self.epochs is not None:
            return self.epochs
        return FULL_SCALE_EPOCHS if spec.is_full_size else DESK_SCALE_EPOCHS

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    """In-memory frames: 8-bit gray images and {0, 1} corridor masks."""

    ids: list[str]
    images: np.ndarray  # (N, H, W) uint8
    masks: np.ndarray  # (N, H, W) uint8

    def __post_init__(self):
        if self.images.shape != self.masks.shape or self.images.ndim != 3:
            raise ShapeMismatch(f"images {self.images.shape} and masks {self.masks.shape} must both be (N, H, W)")
        if len(self.ids) != len(self.images):
            raise ShapeMismatch(f"{len(self.ids)} ids for {len(self.images)} frames")

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([self.ids[i] for i in idx], self.images[idx], self.masks[idx])

    def digest(self) -> str:
        h = hashlib.sha256()
        for fid in self.ids:
            h.update(fid.encode() + b"\0")
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.masks).tobytes())
        return h.hexdigest()


@dataclass
class LossHistory:
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        """1-based epoch with the lowest validation RMSE (first on ties)."""
        if not self.val_rmse:
            raise ValueError("empty loss history")
        return int(np.argmin(self.val_rmse)) + 1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["epoch", "train_rmse", "val_rmse"])
            for i, (tr, va) in enumerate(zip(self.train_rmse, self.val_rmse), start=1):
                out.writerow([i, repr(tr), repr(va)])

    @classmethod
    def read_csv(cls, path) -> "LossHistory":
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                hist.train_rmse.append(float(row["train_rmse"]))
                hist.val_rmse.append(float(row["val_rmse"]))
        return hist


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    history: LossHistory
    train_ids: list[str]
    val_ids: list[str]


def rmse_loss(pred: np.ndarray, target: np.ndarray, eps_loss: float = EPS_LOSS):
    """Root mean squared error over the whole batch tensor and its gradient.

    The gradient ``(p - y) / (N * loss)`` is defined as zero once the loss
    drops below ``eps_loss``.
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target.astype(pred.dtype, copy=False)
    mse = float(np.mean(np.square(diff, dtype=np.float64)))
    loss = float(np.sqrt(mse))
    if loss < eps_loss:
        return loss, np.zeros_like(pred)
    return loss, (diff / (diff.size * loss)).astype(pred.dtype, copy=False)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and Adam state must have the same length")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape} vs state {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)).astype(p.dtype, copy=False)
    return params, state


def _unit_hash(frame_id: str) -> float:
    digest = hashlib.sha256(frame_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def split_ids(ids: list[str], val_fraction: float) -> tuple[list[int], list[int]]:
    """Hash-based train/validation split.

    Membership depends only on the frame id, so adding frames never moves an
    existing frame between the two sides. If no id hashes into the validation
    range, the single lowest-hash frame is used for validation.
    """
    u = [_unit_hash(i) for i in ids]
    val = [k for k, x in enumerate(u) if x < val_fraction]
    if not val and len(ids) > 1:
        val = [int(np.argmin(u))]
    vset = set(val)
    return [k for k in range(len(ids)) if k not in vset], val


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    # counter-based stream: epoch k's order never depends on earlier epochs
    rng = np.random.Generator(np.random.Philox(key=seed, counter=epoch))
    return rng.permutation(n)


def _batch(dataset: Dataset, idx, dtype=np.float32):
    x = normalize_gray(dataset.images[idx])[:, None].astype(dtype, copy=False)
    y = dataset.masks[idx][:, None].astype(dtype)
    return x, y


def evaluate_rmse(network: Network, dataset: Dataset, batch_size: int = 16) -> float:
    sq, count = 0.0, 0
    for s in range(0, len(dataset), batch_size):
        x, y = _batch(dataset, np.arange(s, min(s + batch_size, len(dataset))))
        d = network.predict(x) - y
        sq += float(np.sum(np.square(d, dtype=np.float64)))
        count += d.size
    return float(np.sqrt(sq / count))


def train(dataset: Dataset, net_spec: NetworkSpec, config: TrainConfig | None = None, progress=None) -> TrainResult:
    """Train from scratch; keep the best-validation and the final weights.

    ``progress`` is an optional ``callable(epoch, train_rmse, val_rmse)``.
    """
    config = config or TrainConfig()
    if len(dataset) < 2 * config.batch_size:
        raise EmptyDataset(f"need at least {2 * config.batch_size} frames, got {len(dataset)}")
    if dataset.images.shape[1:] != net_spec.input_shape:
        raise ShapeMismatch(f"frames are {dataset.images.shape[1:]}, network expects {net_spec.input_shape}")

    train_idx, val_idx = split_ids(dataset.ids, config.val_fraction)
    train_ids = [dataset.ids[i] for i in train_idx]
    val_ids = [dataset.ids[i] for i in val_idx]
    assert not set(train_ids) & set(val_ids)
    if len(train_idx) < config.batch_size:
        raise EmptyDataset(f"only {len(train_idx)} training frames for batch size {config.batch_size}")
    train_set, val_set = dataset.subset(train_idx), dataset.subset(val_idx)

    net = build_network(net_spec, seed=config.seed)
    weights = [a for _, p in net.weighted() for a in (p.weights, p.bias)]
    state = AdamState.for_params(weights)
    history = LossHistory()
    best, best_val = None, np.inf
    epochs = config.resolved_epochs(net_spec)
    n_batches = len(train_set) // config.batch_size  # trailing partial batch dropped

    for epoch in range(1, epochs + 1):
        perm = epoch_permutation(len(train_set), config.seed, epoch)
        losses = []
        for b in range(n_batches):
            x, y = _batch(train_set, np.sort(perm[b * config.batch_size : (b + 1) * config.batch_size]))
            out, caches = net.forward_train(x)
            loss, grad = rmse_loss(out, y)
            grads = net.backward(caches, grad)
            flat = [a for g in grads if g is not None for a in g]
            adam_step(weights, flat, state, config)
            losses.append(loss)
        train_rmse = float(np.mean(losses))
        val_rmse = evaluate_rmse(net, val_set)
        history.train_rmse.append(train_rmse)
        history.val_rmse.append(val_rmse)
        log.info("epoch %d/%d train_rmse %.5f val_rmse %.5f", epoch, epochs, train_rmse, val_rmse)
        if progress is not None:
            progress(epoch, train_rmse, val_rmse)
        if val_rmse < best_val:
            best_val = val_rmse
            best = Checkpoint.from_network(net, epoch=epoch, val_rmse=val_rmse, seed=config.seed)

    final = Checkpoint.from_network(net, epoch=epochs, val_rmse=history.val_rmse[-1], seed=config.seed)
    return TrainResult(best, final, history, train_ids, val_ids)
