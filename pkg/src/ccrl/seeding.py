"""Named random substreams and serializable generator state.

Every source of randomness in a run is derived from one master seed through
a named substream (init, augment, shuffle, kmeans, synth, ...), so whole runs
are reproducible bit-for-bit and individual stages can be replayed alone.
"""

from __future__ import annotations

import zlib

import numpy as np

_LIMB = 32  # PCG64 state words are 128-bit; store as exact 32-bit limbs in f64


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for (seed, name); stable across runs and platforms."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed for a per-item generator."""
    return int(rng.integers(0, 2**63))


def _int_to_limbs(value: int, n_limbs: int) -> list[float]:
    mask = (1 << _LIMB) - 1
    return [float((value >> (_LIMB * i)) & mask) for i in range(n_limbs)]


def _limbs_to_int(limbs) -> int:
    return sum(int(v) << (_LIMB * i) for i, v in enumerate(limbs))


def generator_state_to_array(rng: np.random.Generator) -> np.ndarray:
    """Encode a PCG64 generator state as an exact float64 vector."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported bit generator {st['bit_generator']}")
    parts = _int_to_limbs(st["state"]["state"], 4) + _int_to_limbs(st["state"]["inc"], 4)
    parts += [float(st["has_uint32"]), float(st["uinteger"])]
    return np.asarray(parts, dtype=np.float64)


def generator_from_state_array(arr: np.ndarray) -> np.random.Generator:
    """Rebuild a PCG64 generator from ``generator_state_to_array`` output."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != (10,):
        raise ValueError(f"expected a 10-element state vector, got shape {arr.shape}")
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": _limbs_to_int(arr[0:4]), "inc": _limbs_to_int(arr[4:8])},
        "has_uint32": int(arr[8]),
        "uinteger": int(arr[9]),
    }
    return rng
