"""Temperature-scaled contrastive objective over query/key pairs and queue
negatives.

For each query q_i the positive is its own key k_i and the negatives are the
other keys in the batch plus everything currently in the queue (the
``queue_only`` variant drops the in-batch keys). Embeddings are L2-normalized
before the cosine logits, and gradients flow only through the queries: keys
and queue entries enter as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, concat, exp, l2_normalize, log, matmul, reshape, tmean, tsum

NEGATIVE_MODES = ("batch+queue", "queue_only")


@dataclass
class ContrastiveBatch:
    """One loss evaluation's inputs: raw queries/keys, queue snapshot, temperature."""

    q: Tensor
    k: Tensor | np.ndarray
    queue_view: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.float32))
    temperature: float = 0.07
    negatives: str = "batch+queue"


def info_nce(
    q: Tensor,
    k,
    queue_view: np.ndarray | None = None,
    temperature: float = 0.07,
    negatives: str = "batch+queue",
) -> Tensor:
    """Mean InfoNCE loss (scalar Tensor, differentiable through q only).

    q, k: (N, D) raw embeddings, normalized here. queue_view: (Q, D) unit
    vectors or None/empty. The positive for row i sits at candidate index i
    (or index 0 in queue_only mode).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if negatives not in NEGATIVE_MODES:
        raise ValueError(f"negatives must be one of {NEGATIVE_MODES}")
    k_data = np.asarray(k.data if isinstance(k, Tensor) else k, dtype=q.dtype)
    if q.data.ndim != 2 or k_data.shape != q.shape:
        raise ValueError(f"q and k must both be (N, D), got {q.shape} and {k_data.shape}")
    n, dim = q.shape

    k_norms = np.linalg.norm(k_data, axis=1, keepdims=True)
    if np.any(k_norms == 0):
        raise ValueError("info_nce: zero-norm key row")
    k_unit = k_data / k_norms

    if queue_view is None:
        queue = np.zeros((0, dim), dtype=q.data.dtype)
    else:
        queue = np.asarray(queue_view, dtype=q.data.dtype).reshape(-1, dim)

    qn = l2_normalize(q)
    inv_t = Tensor(np.asarray(1.0 / temperature, dtype=q.data.dtype))

    if negatives == "batch+queue":
        candidates = np.concatenate([k_unit, queue], axis=0)  # (N + Q, D)
        logits = matmul(qn, Tensor(candidates.T)) * inv_t
        # pull the positive out of the logit matrix itself (row i, column i) so
        # lse - pos is exactly 0 when there is nothing else to contrast against
        mask = np.zeros((n, n + queue.shape[0]), dtype=q.data.dtype)
        mask[np.arange(n), np.arange(n)] = 1.0
        pos = tsum(logits * Tensor(mask), axis=1)
    else:
        # positive logit per row: cos(q_i, k_i) / t, at candidate index 0
        pos = tsum(qn * Tensor(k_unit), axis=1) * inv_t
        if queue.shape[0]:
            neg = matmul(qn, Tensor(queue.T)) * inv_t
            logits = concat([reshape(pos, (n, 1)), neg], axis=1)
        else:
            logits = reshape(pos, (n, 1))

    # stabilized log-sum-exp; the row max is a detached constant
    row_max = logits.data.max(axis=1)
    lse = log(tsum(exp(logits - Tensor(row_max[:, None])), axis=1)) + Tensor(row_max)
    return tmean(lse - pos)


def info_nce_batch(batch: ContrastiveBatch) -> Tensor:
    return info_nce(batch.q, batch.k, batch.queue_view, batch.temperature, batch.negatives)
