import copy
import struct

import numpy as np
import pytest

from ccrl import nn
from ccrl.checkpoint import (
    CKPT_MAGIC,
    load_checkpoint,
    read_checkpoint_records,
    save_checkpoint,
)
from ccrl.model import EmaConfig, init_model, momentum_update, queue_push
from ccrl.optim import adam_step, init_adam
from ccrl.seeding import substream


def configs():
    bcfg = nn.BackboneConfig(input_size=16, in_channels=3, stages=((8, 1), (8, 1)),
                             stage_strides=(2, 2), feature_dim=16, groups=4)
    hcfg = nn.HeadConfig(projector=(16, 8, 4), predictor=(4, 4, 4))
    return bcfg, hcfg


def trained_like_state(seed=0, prediction_head=True):
    """A model mid-training: moved weights, a partly full queue, nonzero steps."""
    bcfg, hcfg = configs()
    state = init_model(bcfg, hcfg, seed=seed, prediction_head=prediction_head,
                       queue_capacity=12)
    rng = np.random.default_rng(seed + 100)
    adam = init_adam(state.q_params)
    for _ in range(3):
        for p in state.q_params.values():
            p.grad = rng.standard_normal(p.shape).astype(np.float32)
        adam_step(state.q_params, adam, lr=0.01, weight_decay=0.0001)
        momentum_update(state, EmaConfig(m=0.9))
    keys = rng.standard_normal((7, 4)).astype(np.float32)
    keys /= np.linalg.norm(keys, axis=1, keepdims=True)
    queue_push(state.queue, keys)
    state.step = 3
    return state, adam


def test_round_trip_is_exact(tmp_path):
    state, adam = trained_like_state()
    rngs = {"shuffle": substream(7, "shuffle"), "augment": substream(7, "augment")}
    draws_before = {n: r.random(3).copy() for n, r in
                    {"shuffle": substream(7, "shuffle"), "augment": substream(7, "augment")}.items()}
    path = tmp_path / "ck.ccrl"
    save_checkpoint(path, state, adam, rngs)

    bcfg, hcfg = configs()
    bundle = load_checkpoint(path, bcfg, hcfg)
    for name, p in state.q_params.items():
        assert np.array_equal(bundle.state.q_params[name].data, p.data), name
        assert bundle.state.q_params[name].requires_grad
    for name, p in state.k_params.items():
        assert np.array_equal(bundle.state.k_params[name].data, p.data), name
        assert not bundle.state.k_params[name].requires_grad
    assert np.array_equal(bundle.state.queue.view(), state.queue.view())
    assert bundle.state.queue.capacity == state.queue.capacity
    assert bundle.state.step == 3
    assert bundle.adam.step == adam.step
    assert bundle.adam.beta1 == adam.beta1 and bundle.adam.eps == adam.eps
    for name in adam.m:
        assert np.array_equal(bundle.adam.m[name], adam.m[name])
        assert np.array_equal(bundle.adam.v[name], adam.v[name])
    # restored generators continue the streams from where the originals started
    for name, want in draws_before.items():
        np.testing.assert_array_equal(bundle.rngs[name].random(3), want)


def test_rng_streams_resume_mid_sequence(tmp_path):
    state, adam = trained_like_state()
    rng = substream(3, "augment")
    rng.random(17)  # consume an odd amount, including a cached uint32 half
    rng.integers(0, 1000, 5)
    future = copy.deepcopy(rng).random(8)
    save_checkpoint(tmp_path / "c.ccrl", state, adam, {"augment": rng})
    bundle = load_checkpoint(tmp_path / "c.ccrl", *configs())
    np.testing.assert_array_equal(bundle.rngs["augment"].random(8), future)


def test_prediction_head_ablation_round_trip(tmp_path):
    state, adam = trained_like_state(prediction_head=False)
    assert not any(n.startswith("pred.") for n in state.q_params)
    path = tmp_path / "nopred.ccrl"
    save_checkpoint(path, state, adam)
    records = read_checkpoint_records(path)
    assert not any(".pred." in n or n.startswith("q.pred") for n in records)
    bundle = load_checkpoint(path, *configs())
    assert bundle.state.prediction_head is False
    assert set(bundle.state.q_params) == set(state.q_params)


def test_architecture_mismatch_rejected(tmp_path):
    state, adam = trained_like_state()
    path = tmp_path / "ck.ccrl"
    save_checkpoint(path, state)
    wrong_b = nn.BackboneConfig(input_size=16, in_channels=3, stages=((4, 1),),
                                stage_strides=(2,), feature_dim=16, groups=4)
    _, hcfg = configs()
    with pytest.raises(ValueError, match="mismatch"):
        load_checkpoint(path, wrong_b, hcfg)


def test_not_a_checkpoint(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        read_checkpoint_records(p)


def test_truncated_file(tmp_path):
    state, adam = trained_like_state()
    path = tmp_path / "ck.ccrl"
    save_checkpoint(path, state, adam)
    blob = path.read_bytes()
    clipped = tmp_path / "clipped.ccrl"
    clipped.write_bytes(blob[: len(blob) // 2])
    with pytest.raises((ValueError, struct.error)):
        read_checkpoint_records(clipped)


def test_file_header_layout(tmp_path):
    state, _ = trained_like_state()
    path = tmp_path / "ck.ccrl"
    save_checkpoint(path, state)
    raw = path.read_bytes()
    assert raw[:4] == CKPT_MAGIC
    version, count = struct.unpack("<II", raw[4:12])
    assert version == 1
    assert count == len(read_checkpoint_records(path))
