"""Dense float tensors with reverse-mode automatic differentiation.

A small Wengert-list engine on top of numpy, covering exactly the ops the
twin-encoder model and its contrastive loss need: matmul, 2-D convolution,
elementwise arithmetic with broadcasting, relu/exp/log/sqrt, reductions,
average pooling, concatenation, reshape and L2 normalization.

Recording only happens inside a ``with Tape() as tape:`` block; anything
computed outside a tape (or inside ``no_grad()``) is a constant, which is how
the momentum/key branch gets its stop-gradient semantics for free.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf (surfaced immediately, never propagated)."""


class TapeError(RuntimeError):
    """Misuse of the recording tape (double backward, dead node, ...)."""


_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _active_tape():
    stack = _tape_stack()
    if not stack:
        return None
    tape = stack[-1]
    return tape if tape is not None else None


class no_grad:
    """Context manager that suppresses recording even inside an active tape."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _check_finite(arr: np.ndarray, who: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{who} produced non-finite values")


class Tensor:
    """N-d array of float32/float64 values, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        # ascontiguousarray promotes 0-d to 1-d, so guard scalars
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        _check_finite(self.data, "Tensor()")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class Tape:
    """Ordered record of ops (a Wengert list); creation order is topological.

    One backward pass per recording: a second ``backward`` on the same tape
    raises ``TapeError``.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False
        self._out_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape stack corrupted (exited out of order)")
        stack.pop()
        return False

    def _record(self, out: Tensor, parents: tuple, backward: Callable) -> None:
        self.records.append((out, parents, backward))
        self._out_ids.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf parameter."""
        if self.consumed:
            raise TapeError("tape already consumed; re-record before backward")
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._out_ids:
            raise TapeError("loss is not on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, backward in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in self._out_ids:
                    if pid in grads:
                        grads[pid] += pg
                    else:
                        grads[pid] = pg
                else:  # leaf parameter
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += pg


def _result(out_data: np.ndarray, parents: tuple, backward: Callable, name: str) -> Tensor:
    _check_finite(out_data, name)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = False
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._record(out, parents, backward)
    return out


def _binary_dtype(a: Tensor, b: Tensor, op: str):
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_dtype(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_dtype(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_dtype(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_dtype(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _result(out, (a, b), backward, "div")


def relu(a: Tensor) -> Tensor:
    def backward(g):
        return (g * (a.data > 0),)

    return _result(np.maximum(a.data, 0), (a,), backward, "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _result(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _result(out, (a,), backward, "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        return (g * (0.5 / out),)

    return _result(out, (a,), backward, "sqrt")


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        return (g.reshape(a.shape),)

    return _result(np.reshape(a.data, shape).copy(), (a,), backward, "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    for t in tensors[1:]:
        _binary_dtype(tensors[0], t, "concat")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), backward, "mean")


# ---------------------------------------------------------------------------
# linear algebra / conv


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _binary_dtype(a, b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """Return (cols, out_h, out_w); cols is (N*out_h*out_w, C*kh*kw)."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    # (N, C, kh, kw, out_h, out_w) gathered from strided views, then packed
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + out_h * stride : stride, j : j + out_w * stride : stride]
    cols = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, c * kh * kw)
    return cols, out_h, out_w


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add column gradients back to input layout (inverse of _im2col)."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    cols = cols.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    gx = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + out_h * stride : stride, j : j + out_w * stride : stride] += cols[:, :, i, j]
    if padding:
        gx = gx[:, :, padding : hp - padding, padding : wp - padding]
    return np.ascontiguousarray(gx)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation); x is NCHW, w is (F, C, kh, kw)."""
    _binary_dtype(x, w, "conv2d")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d needs 4-D operands, got {x.shape}, {w.shape}")
    f, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[1]}, weight {c}")
    n = x.shape[0]
    cols, out_h, out_w = _im2col(x.data, kh, kw, stride, padding)
    wf = w.data.reshape(f, c * kh * kw).T
    out = (cols @ wf).reshape(n, out_h, out_w, f).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * out_h * out_w, f)
        # recompute cols instead of keeping them alive on the tape
        cols_b, _, _ = _im2col(x.data, kh, kw, stride, padding)
        gw = (cols_b.T @ gmat).T.reshape(f, c, kh, kw)
        gcols = gmat @ wf.T
        gx = _col2im(gcols, x.shape, kh, kw, stride, padding)
        return gx, gw

    return _result(np.ascontiguousarray(out), (x, w), backward, "conv2d")


def avg_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Average pooling over kernel*kernel windows of an NCHW tensor."""
    if x.data.ndim != 4:
        raise ValueError(f"avg_pool2d needs a 4-D input, got {x.shape}")
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(f"avg_pool2d kernel {kernel} too large for input {x.shape}")
    acc = np.zeros((n, c, out_h, out_w), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            acc += x.data[:, :, i : i + out_h * stride : stride, j : j + out_w * stride : stride]
    scale = 1.0 / (kernel * kernel)

    def backward(g):
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        gs = g * scale
        for i in range(kernel):
            for j in range(kernel):
                gx[:, :, i : i + out_h * stride : stride, j : j + out_w * stride : stride] += gs
        return (gx,)

    return _result(acc * x.dtype.type(scale), (x,), backward, "avg_pool2d")


def l2_normalize(a: Tensor) -> Tensor:
    """Normalize rows (last axis) to unit Euclidean norm; zero rows are an error."""
    norms = np.linalg.norm(a.data, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("l2_normalize: zero-norm row")
    out = a.data / norms

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - out * dot) / norms,)

    return _result(out, (a,), backward, "l2_normalize")


# ---------------------------------------------------------------------------
# binary blob format: magic "CCRT", version u32 LE, rank u32, dims u64 each,
# dtype code u8 (0 = f32, 1 = f64), then raw little-endian values.

BLOB_MAGIC = b"CCRT"
BLOB_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensor(f, arr: np.ndarray) -> None:
    """Append one tensor blob to a binary stream."""
    arr = np.asarray(arr)
    if arr.ndim:
        arr = np.ascontiguousarray(arr)
    if arr.dtype == np.float32:
        code, dt = 0, np.dtype("<f4")
    elif arr.dtype == np.float64:
        code, dt = 1, np.dtype("<f8")
    else:
        raise ValueError(f"unsupported dtype {arr.dtype} for tensor blob")
    f.write(BLOB_MAGIC)
    f.write(struct.pack("<II", BLOB_VERSION, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(struct.pack("<B", code))
    f.write(arr.astype(dt, copy=False).tobytes())


def read_tensor(f) -> np.ndarray:
    """Read one tensor blob from a binary stream."""
    magic = f.read(4)
    if magic != BLOB_MAGIC:
        raise ValueError(f"bad tensor blob magic {magic!r}")
    version, rank = struct.unpack("<II", f.read(8))
    if version != BLOB_VERSION:
        raise ValueError(f"unsupported tensor blob version {version}")
    shape = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
    (code,) = struct.unpack("<B", f.read(1))
    if code not in _DTYPE_CODES:
        raise ValueError(f"unknown dtype code {code}")
    dt = _DTYPE_CODES[code]
    count = int(np.prod(shape)) if shape else 1
    raw = f.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise ValueError("truncated tensor blob")
    return np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("=")).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)
