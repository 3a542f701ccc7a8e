"""Twin query/key networks with a momentum-updated key branch and a FIFO
negative-sample queue.

The query path is backbone -> projector -> predictor and is trained by
gradient descent; the key path is backbone -> projector only, receives no
gradients ever, and tracks the query weights through an exponential moving
average. Key embeddings from past batches are kept in the queue and reused
as negatives by the contrastive loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .seeding import substream
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class EmaConfig:
    """Momentum factor of the key-branch moving average."""

    m: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.m <= 1.0:
            raise ValueError(f"momentum factor must be in [0, 1], got {self.m}")


class NegativeQueue:
    """Fixed-capacity FIFO of unit-norm key embeddings (a ring buffer)."""

    def __init__(self, capacity: int = 65536, dim: int = 64):
        if capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self.buf = np.zeros((capacity, dim), dtype=np.float32)
        self.count = 0
        self._head = 0  # index of the oldest entry

    def view(self) -> np.ndarray:
        """Current entries, oldest first; shape (count, dim)."""
        if self.count < self.capacity:
            return self.buf[: self.count].copy()
        return np.concatenate([self.buf[self._head :], self.buf[: self._head]])

    def push(self, keys: np.ndarray) -> None:
        queue_push(self, keys)


def queue_push(queue: NegativeQueue, keys: np.ndarray) -> None:
    """Append unit-norm keys in batch order, evicting oldest entries past capacity."""
    keys = np.asarray(keys, dtype=np.float32)
    if keys.ndim != 2 or keys.shape[1] != queue.dim:
        raise ValueError(f"expected (N, {queue.dim}) keys, got {keys.shape}")
    norms = np.linalg.norm(keys, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-4):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"queue_push requires unit-norm keys (max norm deviation {worst:.2e})")
    keys = keys / norms[:, None]  # tighten to 1 +- 1e-5 exactly
    if keys.shape[0] >= queue.capacity:
        # only the last `capacity` items of an oversized batch survive
        queue.buf[:] = keys[-queue.capacity :]
        queue.count = queue.capacity
        queue._head = 0
        return
    write = (queue._head + queue.count) % queue.capacity
    n = keys.shape[0]
    first = min(n, queue.capacity - write)
    queue.buf[write : write + first] = keys[:first]
    if n > first:
        queue.buf[: n - first] = keys[first:]
    overflow = max(0, queue.count + n - queue.capacity)
    queue.count = min(queue.count + n, queue.capacity)
    queue._head = (queue._head + overflow) % queue.capacity


class ModelState:
    """All trainable and tracked state: query params, key params, queue, step."""

    def __init__(self, q_params, k_params, queue, backbone_cfg, head_cfg, prediction_head=True, step=0):
        self.q_params: dict[str, Tensor] = q_params
        self.k_params: dict[str, Tensor] = k_params
        self.queue = queue
        self.backbone_cfg = backbone_cfg
        self.head_cfg = head_cfg
        self.prediction_head = prediction_head
        self.step = step

    def query_param_names(self):
        return sorted(self.q_params)

    def key_param_names(self):
        return sorted(self.k_params)


def init_model(
    backbone_cfg: nn.BackboneConfig,
    head_cfg: nn.HeadConfig,
    seed: int,
    prediction_head: bool = True,
    queue_capacity: int = 65536,
) -> ModelState:
    """Build a fresh model; the key branch starts as an exact copy of the query
    backbone + projector, the queue starts empty, and the step counter at 0."""
    if backbone_cfg.feature_dim != head_cfg.projector[0]:
        raise ValueError(
            f"backbone output width {backbone_cfg.feature_dim} != projector input {head_cfg.projector[0]}"
        )
    rng = substream(seed, "init")
    q_params = nn.init_backbone(backbone_cfg, rng, prefix="backbone")
    q_params.update(nn.init_mlp(head_cfg.projector, rng, prefix="proj"))
    if prediction_head:
        q_params.update(nn.init_mlp(head_cfg.predictor, rng, prefix="pred"))
    k_params = {
        name: Tensor(q_params[name].data.copy(), requires_grad=False)
        for name in q_params
        if not name.startswith("pred.")
    }
    queue = NegativeQueue(queue_capacity, head_cfg.embed_dim)
    return ModelState(q_params, k_params, queue, backbone_cfg, head_cfg, prediction_head)


def _check_batch(state: ModelState, x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float32))
    cfg = state.backbone_cfg
    if x.data.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.input_size, cfg.input_size):
        raise ValueError(
            f"expected batch shaped (N, {cfg.in_channels}, {cfg.input_size}, {cfg.input_size}), got {x.shape}"
        )
    return x


def forward_query(state: ModelState, x) -> Tensor:
    """Query-branch embeddings (N, 64): predictor(projector(backbone(x))).

    Output is NOT normalized; the loss normalizes. With the prediction head
    ablated the path is backbone + projector only.
    """
    x = _check_batch(state, x)
    h = nn.backbone_forward(state.q_params, x, state.backbone_cfg, prefix="backbone")
    h = nn.mlp_forward(state.q_params, h, prefix="proj")
    if state.prediction_head:
        h = nn.mlp_forward(state.q_params, h, prefix="pred")
    return h


def forward_key(state: ModelState, x) -> Tensor:
    """Key-branch embeddings (N, 64): key_projector(key_backbone(x)).

    Runs with recording suppressed, so the result is a constant and nothing
    upstream can ever receive gradients through it.
    """
    x = _check_batch(state, x)
    with no_grad():
        h = nn.backbone_forward(state.k_params, x, state.backbone_cfg, prefix="backbone")
        return nn.mlp_forward(state.k_params, h, prefix="proj")


def momentum_update(state: ModelState, ema: EmaConfig) -> None:
    """theta_k <- m * theta_k + (1 - m) * theta_q for key backbone AND key projector."""
    m = np.float32(ema.m)
    one_minus = np.float32(1.0) - m
    for name, k in state.k_params.items():
        q = state.q_params[name]
        if k.data.shape != q.data.shape:
            raise ValueError(f"shape mismatch for {name}: {k.data.shape} vs {q.data.shape}")
        k.data *= m
        k.data += one_minus * q.data


def embed_for_inference(
    state: ModelState,
    x,
    use_ensemble: bool = True,
    use_projected: bool = False,
    chunk: int = 256,
) -> np.ndarray:
    """Inference embeddings for a batch of images.

    use_ensemble=True reads the momentum (key) branch, False the query branch.
    By default the 512-d backbone features are returned; use_projected=True
    appends the matching projector for 64-d embeddings instead.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float32)
    params = state.k_params if use_ensemble else state.q_params
    outs = []
    with no_grad():
        for lo in range(0, x.shape[0], chunk):
            xb = _check_batch(state, x[lo : lo + chunk])
            h = nn.backbone_forward(params, xb, state.backbone_cfg, prefix="backbone")
            if use_projected:
                h = nn.mlp_forward(params, h, prefix="proj")
            outs.append(h.data)
    return np.concatenate(outs, axis=0)
