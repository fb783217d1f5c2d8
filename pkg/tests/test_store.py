import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from diffgan_tts.errors import CheckpointError, ShapeError
from diffgan_tts.store import (
    AdamState,
    ParameterStore,
    adam_update,
    checkpoint_path,
    latest_checkpoint,
    list_checkpoints,
)
from diffgan_tts.tensor import Tensor
from diffgan_tts.tensorio import write_tensors


def param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_adam_first_step_moves_by_lr_times_sign():
    p = param([1.0, -2.0, 0.5])
    grad = np.array([3.0, -0.25, 1e-3])
    state = AdamState.zeros_like(p.data)
    assert adam_update(p, grad, state, lr=0.01, eps=1e-12)
    assert_allclose(p.data - np.array([1.0, -2.0, 0.5]), -0.01 * np.sign(grad), rtol=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_leaves_param():
    p = param([0.3, 0.7])
    state = AdamState.zeros_like(p.data)
    adam_update(p, np.zeros(2), state, lr=0.1)
    assert_array_equal(p.data, [0.3, 0.7])


def test_adam_two_step_oracle():
    p = param([1.0])
    state = AdamState.zeros_like(p.data)
    b1, b2, lr, eps = 0.5, 0.9, 0.1, 1e-8
    g1, g2 = 2.0, -1.0
    adam_update(p, np.array([g1]), state, lr, (b1, b2), eps)
    adam_update(p, np.array([g2]), state, lr, (b1, b2), eps)
    x = 1.0 - lr * g1 / (abs(g1) + eps)
    m = b1 * (1 - b1) * g1 + (1 - b1) * g2
    v = b2 * (1 - b2) * g1**2 + (1 - b2) * g2**2
    x -= lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
    assert p.data[0] == pytest.approx(x, rel=1e-14)


def test_adam_rejects_non_finite_gradient():
    p = param([1.0, 2.0])
    state = AdamState.zeros_like(p.data)
    assert not adam_update(p, np.array([np.nan, 1.0]), state, lr=0.1)
    assert_array_equal(p.data, [1.0, 2.0])
    assert state.step == 0
    with pytest.raises(ShapeError):
        adam_update(p, np.zeros(3), state, lr=0.1)


def test_create_kinds(tiny_cfg):
    diffgan = ParameterStore.create(tiny_cfg, seed=1)
    assert diffgan.groups() == ["generator", "discriminator"]
    assert diffgan.frozen_names() == []
    with pytest.raises(KeyError):
        diffgan.module("basic")
    basic = ParameterStore.create(tiny_cfg, seed=1, kind="basic")
    assert basic.groups() == ["basic"]
    with pytest.raises(ValueError):
        ParameterStore.create(tiny_cfg, kind="vocoder")


def test_two_stage_trainable_excludes_frozen(tiny_cfg):
    store = ParameterStore.create(tiny_cfg, seed=1, kind="two-stage")
    frozen = store.frozen_names()
    assert frozen and all(n.startswith("basic.") for n in frozen)
    trainable = store.trainable("generator")
    assert not set(frozen) & set(trainable)
    assert len(frozen) + len(trainable) == len(store.generator.named_parameters())


def test_apply_gradients_skips_everything_on_nan(tiny_cfg):
    store = ParameterStore.create(tiny_cfg, seed=2)
    params = store.trainable("discriminator")
    before = {n: p.data.copy() for n, p in params.items()}
    grads = {n: np.ones_like(p.data) for n, p in params.items()}
    grads[next(iter(grads))][...] = np.inf
    assert not store.apply_gradients("discriminator", grads, 0.1, (0.5, 0.9), 1e-8)
    for n, p in params.items():
        assert_array_equal(p.data, before[n])


def test_save_load_round_trip(tiny_cfg, tmp_path):
    store = ParameterStore.create(tiny_cfg, seed=4)
    params = store.trainable("generator")
    store.apply_gradients("generator", {n: np.full(p.shape, 0.5) for n, p in params.items()}, 1e-3, (0.5, 0.9), 1e-8)
    store.step = 7
    path = store.save(checkpoint_path(tmp_path, store.step))
    assert path.name == "ckpt_000007.dgtt"
    loaded = ParameterStore.load(path)
    assert (loaded.kind, loaded.step, loaded.cfg) == ("diffgan", 7, store.cfg)
    for group in ("generator", "discriminator"):
        for name, value in store.module(group).state_arrays().items():
            assert_array_equal(loaded.module(group).state_arrays()[name], value.astype(np.float32).astype(np.float64))
    states = loaded.adam["generator"]
    assert set(states) == set(params)
    assert {st.step for st in states.values()} == {1}


def test_load_rejects_unknown_kind(tmp_path):
    path = write_tensors(tmp_path / "odd.dgtt", {"x": np.zeros(2)}, {"kind": "vocoder"})
    with pytest.raises(CheckpointError, match="kind"):
        ParameterStore.load(path)


def test_load_reports_missing_tensors(tiny_cfg, tmp_path):
    store = ParameterStore.create(tiny_cfg, seed=0, kind="basic")
    tensors = store.to_tensors()
    tensors.pop(next(iter(tensors)))
    path = write_tensors(tmp_path / "partial.dgtt", tensors, store.meta())
    with pytest.raises(CheckpointError, match="missing"):
        ParameterStore.load(path)


def test_checkpoint_listing(tmp_path):
    assert latest_checkpoint(tmp_path) is None
    assert latest_checkpoint(tmp_path / "absent") is None
    for step in (10, 2, 100):
        checkpoint_path(tmp_path, step).write_bytes(b"")
    (tmp_path / "ckpt_x.dgtt").write_bytes(b"")
    (tmp_path / "notes.txt").write_text("x")
    assert [p.name for p in list_checkpoints(tmp_path)] == ["ckpt_000002.dgtt", "ckpt_000010.dgtt", "ckpt_000100.dgtt"]
    assert latest_checkpoint(tmp_path).name == "ckpt_000100.dgtt"
