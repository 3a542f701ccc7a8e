"""Training checkpoints: a magic-tagged file of named tensor records.

Layout: magic ``CCRL``, version u32, record count u32, then per record a
u16 name length + UTF-8 name + one tensor blob. Records cover the query and
key parameters (``q.*`` / ``k.*``), queue contents, step counters, Adam
moments, and RNG states, so a resumed run continues bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .model import ModelState, init_model
from .optim import AdamState
from .seeding import generator_from_state_array, generator_state_to_array
from .tensor import read_tensor, write_tensor

CKPT_MAGIC = b"CCRL"
CKPT_VERSION = 1


@dataclass
class CheckpointBundle:
    state: ModelState
    adam: AdamState | None = None
    rngs: dict[str, np.random.Generator] = field(default_factory=dict)


def _write_record(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ValueError(f"record name too long: {name!r}")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    write_tensor(f, np.asarray(arr))


def _scalar(value) -> np.ndarray:
    return np.asarray(float(value), dtype=np.float64)


def checkpoint_records(state: ModelState, adam: AdamState | None = None,
                       rngs: dict[str, np.random.Generator] | None = None) -> dict[str, np.ndarray]:
    """Flatten everything restorable into an ordered name -> array map."""
    records: dict[str, np.ndarray] = {}
    for name in sorted(state.q_params):
        records[f"q.{name}"] = state.q_params[name].data
    for name in sorted(state.k_params):
        records[f"k.{name}"] = state.k_params[name].data
    records["queue.entries"] = state.queue.view()
    records["queue.capacity"] = _scalar(state.queue.capacity)
    records["step"] = _scalar(state.step)
    if adam is not None:
        for name in sorted(adam.m):
            records[f"adam.m.{name}"] = adam.m[name]
        for name in sorted(adam.v):
            records[f"adam.v.{name}"] = adam.v[name]
        records["adam.step"] = _scalar(adam.step)
        records["adam.beta1"] = _scalar(adam.beta1)
        records["adam.beta2"] = _scalar(adam.beta2)
        records["adam.eps"] = _scalar(adam.eps)
    for name, rng in (rngs or {}).items():
        records[f"rng.{name}"] = generator_state_to_array(rng)
    return records


def save_checkpoint(path, state: ModelState, adam: AdamState | None = None,
                    rngs: dict[str, np.random.Generator] | None = None) -> None:
    records = checkpoint_records(state, adam, rngs)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(records)))
        for name, arr in records.items():
            _write_record(f, name, arr)


def read_checkpoint_records(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version, count = struct.unpack("<II", f.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        records: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            if name in records:
                raise ValueError(f"duplicate checkpoint record {name!r}")
            records[name] = read_tensor(f)
        if f.read(1):
            raise ValueError("trailing bytes after last checkpoint record")
    return records


def load_checkpoint(path, backbone_cfg: nn.BackboneConfig,
                    head_cfg: nn.HeadConfig) -> CheckpointBundle:
    """Rebuild ModelState (+ optimizer, + RNG streams) from a checkpoint.

    The architecture implied by the configs must match the stored tensor
    shapes exactly; any mismatch is reported by record name.
    """
    records = read_checkpoint_records(path)
    prediction_head = any(n.startswith("q.pred.") for n in records)
    capacity = int(records["queue.capacity"])
    state = init_model(backbone_cfg, head_cfg, seed=0,
                       prediction_head=prediction_head, queue_capacity=capacity)

    expected_q = {f"q.{n}" for n in state.q_params}
    expected_k = {f"k.{n}" for n in state.k_params}
    stored_params = {n for n in records if n.startswith(("q.", "k."))}
    if stored_params != expected_q | expected_k:
        missing = sorted((expected_q | expected_k) - stored_params)
        extra = sorted(stored_params - (expected_q | expected_k))
        raise ValueError(f"checkpoint/config architecture mismatch: "
                         f"missing {missing}, unexpected {extra}")

    for name, p in state.q_params.items():
        _assign(p, records[f"q.{name}"], f"q.{name}")
    for name, p in state.k_params.items():
        _assign(p, records[f"k.{name}"], f"k.{name}")

    entries = records["queue.entries"].astype(np.float32)
    n_entries = entries.shape[0] if entries.ndim == 2 else 0
    if n_entries > capacity or (n_entries and entries.shape[1] != state.queue.dim):
        raise ValueError(f"queue.entries shape {entries.shape} does not fit "
                         f"capacity {capacity} x dim {state.queue.dim}")
    # written verbatim (not re-pushed) so entries stay bit-identical: a second
    # normalization inside queue_push could flip last-ulp bits
    state.queue.buf[:n_entries] = entries
    state.queue.count = n_entries
    state.queue._head = 0
    state.step = int(records["step"])

    adam = None
    if "adam.step" in records:
        adam = AdamState(step=int(records["adam.step"]),
                         beta1=float(records["adam.beta1"]),
                         beta2=float(records["adam.beta2"]),
                         eps=float(records["adam.eps"]))
        for name, p in state.q_params.items():
            for moment, store in (("m", adam.m), ("v", adam.v)):
                key = f"adam.{moment}.{name}"
                if key not in records:
                    raise ValueError(f"checkpoint missing optimizer record {key!r}")
                arr = records[key].astype(np.float32)
                if arr.shape != p.shape:
                    raise ValueError(f"checkpoint record {key!r} has shape {arr.shape}, "
                                     f"expected {p.shape}")
                store[name] = arr

    rngs = {name[len("rng."):]: generator_from_state_array(arr)
            for name, arr in records.items() if name.startswith("rng.")}
    return CheckpointBundle(state=state, adam=adam, rngs=rngs)


def _assign(param, arr: np.ndarray, name: str) -> None:
    if arr.shape != param.shape:
        raise ValueError(f"checkpoint record {name!r} has shape {arr.shape}, "
                         f"expected {param.shape}")
    param.data[...] = arr.astype(param.data.dtype)
