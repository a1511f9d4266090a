"""Optimizer behavior and checkpoint round-trips."""

import numpy as np
import pytest

from graftnet import autodiff as ad
from graftnet.autodiff import Value
from graftnet.errors import NumericFault
from graftnet.params import (CHECKPOINT_TAG, ParamStore, load_checkpoint,
                             save_checkpoint)


def test_zero_gradient_leaves_parameters_unchanged():
    store = ParamStore()
    p = store.add("p", np.array([1.0, 2.0], dtype=np.float32))
    store.adam_step()
    assert np.array_equal(p.data, [1.0, 2.0])
    assert store.step_count == 1


def test_constant_gradient_moves_parameter_against_its_sign():
    store = ParamStore()
    p = store.add("p", np.array([0.0], dtype=np.float32))
    for _ in range(50):
        p.grad = np.array([2.5], dtype=np.float32)
        store.adam_step(learning_rate=0.01)
    assert p.data[0] < -0.2


def test_adam_converges_on_scalar_quadratic():
    # loss (x - c)^2 has its minimizer at c
    target = 0.5
    store = ParamStore()
    x = store.add("x", np.zeros(1, dtype=np.float32))
    for _ in range(200):
        diff = ad.add(x, Value(np.array([-target], dtype=np.float32)))
        loss = ad.dot(diff, diff)
        loss.backward()
        store.adam_step(learning_rate=0.01)
    assert abs(float(x.data[0]) - target) < 1e-2


def test_adam_refuses_nan_gradient():
    store = ParamStore()
    p = store.add("p", np.zeros(2, dtype=np.float32))
    p.grad = np.array([np.nan, 0.0], dtype=np.float32)
    before = p.data.copy()
    with pytest.raises(NumericFault):
        store.adam_step()
    assert np.array_equal(p.data, before)
    assert store.step_count == 0


def test_adam_clears_gradients_after_step():
    store = ParamStore()
    p = store.add("p", np.ones(2, dtype=np.float32))
    p.grad = np.ones(2, dtype=np.float32)
    store.adam_step()
    assert p.grad is None


def test_duplicate_parameter_names_rejected():
    store = ParamStore()
    store.add("p", np.zeros(1))
    with pytest.raises(ValueError):
        store.add("p", np.zeros(1))


def test_checkpoint_round_trip(tmp_path):
    store = ParamStore()
    rng = np.random.default_rng(0)
    store.add("alpha", rng.normal(size=(3, 4)).astype(np.float32))
    store.add("beta.w", rng.normal(size=7).astype(np.float32))
    store.add("gamma", np.float32(rng.normal()))  # 0-d scalar parameter

    base = tmp_path / "model.ckpt"
    save_checkpoint(store, base)
    manifest = (tmp_path / "model.ckpt.manifest").read_text()
    assert manifest.splitlines()[0] == CHECKPOINT_TAG

    loaded = load_checkpoint(base)
    assert set(loaded) == {"alpha", "beta.w", "gamma"}
    for name, value in store.items():
        assert loaded[name].shape == value.data.shape
        assert np.array_equal(loaded[name], value.data)


def test_checkpoint_bytes_are_deterministic(tmp_path):
    store = ParamStore()
    store.add("b", np.arange(6, dtype=np.float32).reshape(2, 3))
    store.add("a", np.ones(2, dtype=np.float32))
    save_checkpoint(store, tmp_path / "one.ckpt")
    save_checkpoint(store, tmp_path / "two.ckpt")
    assert (tmp_path / "one.ckpt.bin").read_bytes() == (tmp_path / "two.ckpt.bin").read_bytes()
    assert (tmp_path / "one.ckpt.manifest").read_text() == (tmp_path / "two.ckpt.manifest").read_text()


def test_load_arrays_validates_shapes():
    store = ParamStore()
    store.add("p", np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(Exception):
        store.load_arrays({"p": np.zeros(3, dtype=np.float32)})
