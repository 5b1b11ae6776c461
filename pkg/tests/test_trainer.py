import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egocorridor.corridor_net import reference_spec
from egocorridor.errors import EmptyDataset, ShapeMismatch
from egocorridor.trainer import (
    AdamState,
    Dataset,
    LossHistory,
    TrainConfig,
    adam_step,
    epoch_permutation,
    rmse_loss,
    split_ids,
    train,
)

SMALL = reference_spec(12, 8, widths=(2, 3, 2, 3))


def _toy_dataset(n=40, seed=0):
    """Bright lower-centre block on noise; the block is the target."""
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 90, (n, 12, 8)).astype(np.uint8)
    masks = np.zeros((n, 12, 8), dtype=np.uint8)
    for i in range(n):
        top = rng.integers(3, 8)
        masks[i, top:, 2:6] = 1
        images[i, top:, 2:6] += 140
    return Dataset([f"toy-{i:03d}" for i in range(n)], images, masks)


def test_rmse_zero_case():
    y = np.array([[0.0, 1.0], [1.0, 0.0]])
    loss, grad = rmse_loss(y.copy(), y)
    assert loss == 0.0 and np.all(grad == 0)


def test_rmse_single_pixel():
    d = 0.25
    loss, _ = rmse_loss(np.array([1 - d]), np.array([0.0]))
    assert loss == pytest.approx(1 - d)


@pytest.mark.parametrize("seed", range(5))
def test_rmse_gradient_finite_difference(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, (2, 1, 3, 4))
    y = (rng.random(p.shape) > 0.5).astype(float)
    _, grad = rmse_loss(p, y)
    fd = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + 1e-6
        a = rmse_loss(p, y)[0]
        p[idx] = old - 1e-6
        b = rmse_loss(p, y)[0]
        p[idx] = old
        fd[idx] = (a - b) / 2e-6
    assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) < 1e-4


def test_rmse_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        rmse_loss(np.zeros(3), np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_rmse_nonnegative_and_zero_only_on_exact_fit(seed):
    rng = np.random.default_rng(seed)
    y = (rng.random(6) > 0.5).astype(float)
    p = rng.uniform(0.01, 0.99, 6)
    loss, _ = rmse_loss(p, y)
    assert loss > 0
    assert rmse_loss(y.copy(), y)[0] == 0.0


def test_adam_zero_gradient_is_fixed_point():
    cfg = TrainConfig()
    p = [np.array([1.0, -2.0])]
    state = AdamState.for_params(p)
    for _ in range(10):
        adam_step(p, [np.zeros(2)], state, cfg)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])
    assert state.t == 10


def test_adam_first_step_by_hand():
    cfg = TrainConfig(learning_rate=1e-3)
    p = [np.array([0.0])]
    adam_step(p, [np.array([1.0])], AdamState.for_params(p), cfg)
    # m_hat = 1, v_hat = 1
    assert p[0][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_second_step_by_hand():
    cfg = TrainConfig(learning_rate=0.1)
    p = [np.array([0.0])]
    state = AdamState.for_params(p)
    adam_step(p, [np.array([1.0])], state, cfg)
    adam_step(p, [np.array([-2.0])], state, cfg)
    m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0
    m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
    expected = -0.1 / (1 + 1e-8) - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p[0][0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("c", [1e-3, 0.5, 10.0, 1e4])
def test_adam_first_step_scale_invariant(c):
    cfg = TrainConfig()
    g = np.array([0.3, -1.2, 2.0])
    p1, p2 = [np.zeros(3)], [np.zeros(3)]
    adam_step(p1, [g], AdamState.for_params(p1), cfg)
    adam_step(p2, [c * g], AdamState.for_params(p2), cfg)
    np.testing.assert_allclose(p1[0], p2[0], rtol=1e-4)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)
    assert TrainConfig().resolved_epochs(reference_spec()) == 250
    assert TrainConfig().resolved_epochs(SMALL) == 60


def test_split_is_stable_under_growth():
    ids = [f"f{i}" for i in range(200)]
    tr, va = split_ids(ids, 0.1)
    assert not set(tr) & set(va) and len(tr) + len(va) == 200
    assert 5 <= len(va) <= 40
    tr2, va2 = split_ids(ids + [f"g{i}" for i in range(100)], 0.1)
    assert {ids[i] for i in va} == {ids[i] for i in va2 if i < 200}


def test_split_never_empty():
    tr, va = split_ids(["a", "b"], 0.01)
    assert len(va) == 1 and len(tr) == 1


def test_epoch_permutation_counter_based():
    a = epoch_permutation(50, seed=3, epoch=7)
    assert sorted(a) == list(range(50))
    np.testing.assert_array_equal(a, epoch_permutation(50, 3, 7))
    assert not np.array_equal(a, epoch_permutation(50, 3, 8))


def test_loss_history_csv(tmp_path):
    h = LossHistory([0.5, 0.3, 0.2], [0.4, 0.25, 0.25])
    assert h.best_epoch == 2
    h.write_csv(tmp_path / "loss.csv")
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "epoch,train_rmse,val_rmse"
    assert LossHistory.read_csv(tmp_path / "loss.csv") == h


def test_train_deterministic_and_learns():
    ds = _toy_dataset()
    cfg = TrainConfig(batch_size=8, epochs=5, learning_rate=5e-3, seed=1)
    a = train(ds, SMALL, cfg)
    b = train(ds, SMALL, cfg)
    assert a.history == b.history
    assert not set(a.train_ids) & set(a.val_ids)
    best = a.history.best_epoch
    assert best == int(np.argmin(a.history.val_rmse)) + 1
    assert a.best.metadata["epoch"] == best
    assert a.history.train_rmse[best - 1] < a.history.train_rmse[0]


def test_train_guards():
    ds = _toy_dataset(10)
    with pytest.raises(EmptyDataset):
        train(ds, SMALL, TrainConfig(batch_size=8, epochs=1))
    with pytest.raises(ShapeMismatch):
        train(_toy_dataset(40), reference_spec(24, 8), TrainConfig(batch_size=8, epochs=1))
