"""Autodiff core: forward values, gradients vs finite differences, tape rules."""

import io

import numpy as np
import pytest

from ccrl import tensor as T
from ccrl.tensor import NonFiniteError, Tape, TapeError, Tensor, no_grad

from helpers import grad_close, numeric_grad


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def check_grads(build, *arrays, seed=0):
    """Compare tape gradients of scalar build(*leaves) against finite differences."""
    rng = np.random.default_rng(seed)
    leaves = [leaf(a) for a in arrays]
    with Tape() as tape:
        out = build(*leaves)
    weights = rng.standard_normal(out.shape)
    with Tape() as tape:
        out = build(*leaves)
        loss = T.tsum(T.mul(out, Tensor(weights)))
        tape.backward(loss)
    for lf, arr in zip(leaves, arrays):
        def f(lf=lf):
            with no_grad():
                return float(T.tsum(T.mul(build(*leaves), Tensor(weights))).data)
        num = numeric_grad(f, lf.data)
        assert grad_close(lf.grad, num), f"gradient mismatch for input of shape {arr.shape}"


# ---------------------------------------------------------------------------
# forward values


def test_matmul_identity():
    a = np.arange(9, dtype=np.float32).reshape(3, 3)
    out = T.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(a))
    assert np.array_equal(out.data, a)


def test_relu_definition():
    out = T.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_l2_normalize_345():
    out = T.l2_normalize(Tensor([3.0, 4.0]))
    assert np.allclose(out.data, [0.6, 0.8])


def test_l2_normalize_unit_norm_property():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.standard_normal((4, 7)).astype(np.float32)
        x[np.abs(x).sum(axis=1) == 0] += 1.0
        out = T.l2_normalize(Tensor(x))
        assert np.all(np.abs(np.linalg.norm(out.data, axis=-1) - 1.0) <= 1e-6)


def test_l2_normalize_zero_vector_is_error():
    with pytest.raises(ValueError):
        T.l2_normalize(Tensor([[1.0, 2.0], [0.0, 0.0]]))


def test_forward_deterministic():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((5, 6)).astype(np.float32)
    w = rng.standard_normal((6, 3)).astype(np.float32)
    a = T.matmul(Tensor(x), Tensor(w)).data
    b = T.matmul(Tensor(x), Tensor(w)).data
    assert np.array_equal(a, b)


def test_non_finite_surfaced():
    with pytest.raises(NonFiniteError):
        T.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        T.div(Tensor([1.0]), Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        T.exp(Tensor([1000.0]))


def test_shape_mismatch_errors():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.ones((1, 3, 8, 8), np.float32)), Tensor(np.ones((4, 2, 3, 3), np.float32)))


def test_dtype_mismatch_errors():
    with pytest.raises(ValueError):
        T.add(Tensor(np.ones(3, np.float32)), Tensor(np.ones(3, np.float64)))


# ---------------------------------------------------------------------------
# tape rules


def test_square_sum_gradient():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        loss = T.tsum(T.mul(x, x))
        tape.backward(loss)
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_twice_is_error():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        loss = T.tsum(T.mul(x, x))
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_non_scalar_is_error():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = T.mul(x, x)
    with pytest.raises(TapeError):
        tape.backward(y)


def test_backward_off_tape_is_error():
    x = leaf([1.0, 2.0])
    y = T.tsum(T.mul(x, x))  # no tape active: constant
    tape = Tape()
    with tape:
        pass
    with pytest.raises(TapeError):
        tape.backward(y)


def test_no_grad_blocks_recording():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        with no_grad():
            y = T.mul(x, x)
        assert not y.requires_grad
        loss = T.tsum(T.mul(x, Tensor(np.array([1.0, 1.0]))))
        tape.backward(loss)
    assert np.allclose(x.grad, [1.0, 1.0])


def test_grad_accumulates_across_uses():
    x = leaf([3.0])
    with Tape() as tape:
        loss = T.tsum(T.add(T.mul(x, x), x))  # x^2 + x -> 2x + 1 = 7
        tape.backward(loss)
    assert np.allclose(x.grad, [7.0])


def test_l2_normalize_grad_orthogonal_for_unit_input():
    # d/dx of (n(x) . c) is orthogonal to x when |x| = 1
    x = leaf(np.array([0.6, 0.8]))
    c = Tensor(np.array([0.5, -1.0]))
    with Tape() as tape:
        loss = T.tsum(T.mul(T.l2_normalize(x), c))
        tape.backward(loss)
    assert abs(float(np.dot(x.grad, x.data))) < 1e-12


# ---------------------------------------------------------------------------
# gradients vs finite differences, op by op

RNG = np.random.default_rng(42)


def rand(*shape, positive=False, offset=0.0):
    a = RNG.standard_normal(shape)
    if positive:
        a = np.abs(a) + 0.5
    return a + offset


@pytest.mark.parametrize("trial", range(3))
def test_grad_add_mul_sub_div(trial):
    a, b = rand(4, 5), rand(4, 5, positive=True)
    check_grads(T.add, a, b, seed=trial)
    check_grads(T.mul, a, b, seed=trial)
    check_grads(T.sub, a, b, seed=trial)
    check_grads(T.div, a, b, seed=trial)


def test_grad_broadcast_ops():
    check_grads(T.add, rand(4, 5), rand(5))
    check_grads(T.mul, rand(2, 3, 4), rand(3, 1))
    check_grads(T.div, rand(4, 5), rand(1, 5, positive=True))


def test_grad_unary_ops():
    check_grads(T.relu, rand(6, 3, offset=0.1))
    check_grads(T.exp, rand(4, 4) * 0.5)
    check_grads(T.log, rand(4, 4, positive=True))
    check_grads(T.sqrt, rand(4, 4, positive=True))


def test_grad_matmul():
    check_grads(T.matmul, rand(3, 4), rand(4, 2))


def test_grad_reductions_and_shape():
    check_grads(lambda x: T.tsum(x, axis=1), rand(3, 4))
    check_grads(lambda x: T.tmean(x, axis=0), rand(3, 4))
    check_grads(lambda x: T.tmean(x, axis=(1, 2), keepdims=True), rand(2, 3, 4))
    check_grads(lambda x: T.reshape(x, (6, 2)), rand(3, 4))
    check_grads(T.flatten, rand(2, 3, 2))


def test_grad_concat():
    check_grads(lambda a, b: T.concat([a, b], axis=1), rand(2, 3), rand(2, 4))


def test_grad_conv2d():
    for stride, padding in [(1, 1), (2, 1), (1, 0), (2, 0)]:
        check_grads(
            lambda x, w: T.conv2d(x, w, stride=stride, padding=padding),
            rand(2, 3, 6, 6),
            rand(4, 3, 3, 3),
        )


def test_grad_conv2d_1x1():
    check_grads(lambda x, w: T.conv2d(x, w, stride=2), rand(2, 3, 6, 6), rand(5, 3, 1, 1))


def test_grad_avg_pool():
    check_grads(lambda x: T.avg_pool2d(x, 2), rand(2, 3, 6, 6))
    check_grads(lambda x: T.avg_pool2d(x, 3, stride=1), rand(1, 2, 5, 5))


def test_grad_l2_normalize():
    check_grads(T.l2_normalize, rand(4, 6) + 0.1)


# ---------------------------------------------------------------------------
# blob format


def test_blob_round_trip():
    rng = np.random.default_rng(3)
    for arr in [rng.standard_normal((3, 4)).astype(np.float32),
                rng.standard_normal((2, 3, 4)).astype(np.float64),
                np.float64(7.5)]:
        buf = io.BytesIO()
        T.write_tensor(buf, np.asarray(arr))
        buf.seek(0)
        back = T.read_tensor(buf)
        assert back.dtype == np.asarray(arr).dtype
        assert np.array_equal(back, np.asarray(arr))


def test_blob_layout():
    buf = io.BytesIO()
    T.write_tensor(buf, np.zeros((2, 3), dtype=np.float32))
    raw = buf.getvalue()
    assert raw[:4] == b"CCRT"
    assert int.from_bytes(raw[4:8], "little") == 1  # version
    assert int.from_bytes(raw[8:12], "little") == 2  # rank
    assert int.from_bytes(raw[12:20], "little") == 2
    assert int.from_bytes(raw[20:28], "little") == 3
    assert raw[28] == 0  # f32 code
    assert len(raw) == 29 + 6 * 4


def test_blob_bad_magic():
    with pytest.raises(ValueError):
        T.read_tensor(io.BytesIO(b"NOPE" + b"\0" * 32))
