import dataclasses

import numpy as np
import pytest

from egocorridor.blobio import MAGIC
from egocorridor.corridor_net import (
    LayerSpec,
    NetworkSpec,
    build_network,
    check_spec,
    count_layers,
    count_params,
    desk_spec,
    forward,
    load_checkpoint,
    reference_spec,
    save_checkpoint,
)
from egocorridor.errors import (
    AsymmetricSpec,
    CorruptCheckpoint,
    ParamBudgetViolation,
    ShapeFlowError,
    ShapeMismatch,
    VersionMismatch,
)

TINY = reference_spec(12, 8, widths=(2, 3, 2, 3))


def _oracle_params(spec):
    total = 0
    for layer in spec.layers:
        if layer.kind in ("conv", "deconv"):
            kh, kw = layer.kernel
            total += (kh * kw * layer.in_ch + 1) * layer.out_ch
    return total


def test_full_reference_counts():
    spec = reference_spec()
    check_spec(spec)
    assert count_layers(spec) == 41
    n = count_params(spec)
    assert n == _oracle_params(spec)
    assert 600_000 <= n <= 720_000


def test_desk_matches_full_topology():
    full, desk = reference_spec(), desk_spec()
    check_spec(desk)
    assert count_layers(desk) == count_layers(full)
    assert count_params(desk) == count_params(full)
    assert build_network(desk).param_count == count_params(desk)


def test_layer_param_counts():
    assert LayerSpec("conv", kernel=(3, 3), in_ch=1, out_ch=16).param_count == 160
    assert LayerSpec("conv", kernel=(1, 1), in_ch=16, out_ch=1).param_count == 17
    for kind, kw in [("pool", {"factor": (2, 2)}), ("upsample", {"factor": (2, 2)}), ("relu", {}), ("sigmoid", {})]:
        assert LayerSpec(kind, **kw).param_count == 0


def test_missing_upsample_is_asymmetric():
    layers = list(desk_spec().layers)
    i = next(k for k, layer in enumerate(layers) if layer.kind == "upsample")
    del layers[i]
    with pytest.raises(AsymmetricSpec):
        check_spec(NetworkSpec(96, 160, tuple(layers)))


def test_pool_not_dividing_input():
    with pytest.raises(ShapeFlowError):
        check_spec(reference_spec(96, 162))


def test_param_budget_enforced_for_full_size():
    with pytest.raises(ParamBudgetViolation):
        build_network(reference_spec(widths=(8, 32, 64, 160)))
    # the same widths at desk size carry no budget
    check_spec(reference_spec(96, 160, widths=(8, 32, 64, 160)))


def test_spec_dict_round_trip():
    spec = desk_spec()
    assert NetworkSpec.from_dict(spec.to_dict()) == spec
    assert NetworkSpec.from_dict({"preset": "full"}) == reference_spec()


def test_forward_shape_and_range():
    net = build_network(desk_spec(), seed=3)
    img = np.random.default_rng(0).integers(0, 256, (96, 160), dtype=np.uint8)
    out = forward(net, img)
    assert out.shape == img.shape
    assert np.all(out > 0) and np.all(out < 1)


def test_forward_rejects_wrong_shape():
    net = build_network(desk_spec())
    with pytest.raises(ShapeMismatch):
        forward(net, np.zeros((96, 161), dtype=np.uint8))


def test_fresh_network_outputs_near_half():
    rng = np.random.default_rng(5)
    x = rng.random((1, 1, 96, 160)).astype(np.float32)
    for seed in range(10):
        m = float(build_network(desk_spec(), seed=seed).predict(x).mean())
        assert 0.3 <= m <= 0.7


def test_forward_deterministic():
    net = build_network(desk_spec(), seed=1)
    x = np.random.default_rng(2).random((2, 1, 96, 160)).astype(np.float32)
    np.testing.assert_array_equal(net.predict(x), net.predict(x))


def test_shape_flow_through_encoder():
    net = build_network(TINY, seed=0, dtype=np.float64)
    x = np.random.default_rng(0).random((1, 1, 12, 8))
    out, caches = net.forward_train(x)
    assert out.shape == x.shape


def test_backward_matches_finite_differences():
    net = build_network(TINY, seed=4, dtype=np.float64)
    rng = np.random.default_rng(9)
    # positive biases keep activations off the relu kink and out of pool ties
    for _, p in net.weighted():
        p.bias[:] = rng.uniform(0.5, 1.0, p.bias.shape)
    x = rng.random((2, 1, 12, 8))
    go = rng.normal(size=x.shape)
    out, caches = net.forward_train(x)
    grads = net.backward(caches, go)
    analytic = [g for g in grads if g is not None]
    params = [p for _, p in net.weighted()]
    assert len(analytic) == len(params)

    def loss():
        return float(np.sum(go * net.forward_train(x)[0]))

    eps = 1e-6
    for (gw, gb), p in zip(analytic, params):
        for arr, g in ((p.weights, gw), (p.bias, gb)):
            flat = arr.reshape(-1)
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + eps
                fp = loss()
                flat[k] = old - eps
                fm = loss()
                flat[k] = old
                fd = (fp - fm) / (2 * eps)
                assert abs(g.reshape(-1)[k] - fd) <= 1e-4 * max(1.0, abs(fd))


def test_checkpoint_round_trip_bitwise(tmp_path):
    net = build_network(desk_spec(), seed=7)
    x = np.random.default_rng(1).random((1, 1, 96, 160)).astype(np.float32)
    before = net.predict(x)
    path = tmp_path / "net.ecnw"
    save_checkpoint(net, path, epoch=3)
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(loaded.predict(x), before)
    assert loaded.metadata["epoch"] == 3


def test_desk_checkpoint_runs_at_full_size(tmp_path):
    path = tmp_path / "net.ecnw"
    save_checkpoint(build_network(desk_spec()), path)
    net = load_checkpoint(path).with_input_size(360, 652)
    out = net.predict(np.zeros((1, 1, 360, 652), dtype=np.float32))
    assert out.shape == (1, 1, 360, 652)


def test_truncated_checkpoint(tmp_path):
    path = tmp_path / "net.ecnw"
    save_checkpoint(build_network(TINY), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_flipped_weight_byte(tmp_path):
    path = tmp_path / "net.ecnw"
    save_checkpoint(build_network(TINY), path)
    raw = bytearray(path.read_bytes())
    raw[-20] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "net.ecnw"
    save_checkpoint(build_network(TINY), path)
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXXX" + raw[len(MAGIC):])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "v2").write_bytes(b"ECNW2" + raw[len(MAGIC):])
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path / "v2")


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("dense")
    with pytest.raises(ValueError):
        LayerSpec("conv", kernel=(3, 3))
    spec = dataclasses.replace(desk_spec(), layers=desk_spec().layers[:-1])
    with pytest.raises(AsymmetricSpec):
        check_spec(spec)
