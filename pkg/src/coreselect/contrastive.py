"""Contrastive objectives and the cosine-similarity primitive.

Two loss modes share one result type: an NT-Xent loss over 2B stacked views,
and an InfoNCE loss where keys come from a momentum encoder and negatives
from a FIFO queue. Both report the raw (un-tempered) positive-pair cosine
per example; that stream is what the scoring module accumulates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, StateError


@dataclass(frozen=True)
class ContrastiveBatchResult:
    loss: float
    pair_cossims: list[tuple[int, float]]
    grad_on_projections: np.ndarray


def cossim(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ConfigurationError(f"cossim needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cossim of a zero vector is undefined")
    return float(u @ v / (nu * nv))


def _log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (log-probs, probs); masked entries get probability zero."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    if mask is not None:
        expd = expd * mask
    total = expd.sum(axis=1, keepdims=True)
    probs = expd / total
    logp = shifted - np.log(total)
    return logp, probs


def ntxent_loss(
    projections: np.ndarray,
    temperature: float,
    example_indices: np.ndarray | None = None,
) -> ContrastiveBatchResult:
    """Normalized-temperature cross entropy over 2B views.

    Row i pairs with row (i + B) mod 2B; every other row in the batch is a
    negative. `example_indices` (length B) labels the pair_cossims entries;
    defaults to 0..B-1.
    """
    z = np.asarray(projections, dtype=np.float64)
    if temperature <= 0.0:
        raise ConfigurationError("temperature must be positive")
    if z.ndim != 2 or z.shape[0] % 2 != 0:
        raise ConfigurationError(f"expected a 2B x d projection matrix, got {z.shape}")
    two_b = z.shape[0]
    if two_b < 4:
        raise ConfigurationError(
            "NT-Xent needs at least two examples (2B >= 4); a lone pair has no negatives"
        )
    b = two_b // 2
    if example_indices is None:
        example_indices = np.arange(b)
    if len(example_indices) != b:
        raise ConfigurationError("example_indices must have one entry per pair")

    sims = z @ z.T
    pair_of = (np.arange(two_b) + b) % two_b
    mask = 1.0 - np.eye(two_b)
    logp, probs = _log_softmax(sims / temperature, mask)
    loss = -logp[np.arange(two_b), pair_of].mean()

    # d(loss)/d(sims): softmax weight minus the one-hot positive, tempered
    grad_sims = probs.copy()
    grad_sims[np.arange(two_b), pair_of] -= 1.0
    grad_sims /= temperature * two_b
    grad = (grad_sims + grad_sims.T) @ z

    positives = sims[np.arange(b), np.arange(b) + b]
    pairs = [(int(k), float(c)) for k, c in zip(example_indices, positives)]
    return ContrastiveBatchResult(loss=float(loss), pair_cossims=pairs, grad_on_projections=grad)


@dataclass
class NegativeQueue:
    """FIFO ring buffer of unit-norm key vectors."""

    capacity: int
    dim: int
    _buffer: np.ndarray = field(init=False)
    _head: int = field(default=0, init=False)
    _size: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if self.capacity < 1 or self.dim < 1:
            raise ConfigurationError("queue capacity and dim must be positive")
        self._buffer = np.zeros((self.capacity, self.dim), dtype=np.float64)

    def __len__(self) -> int:
        return self._size

    def entries(self) -> np.ndarray:
        """Stored keys, oldest first."""
        if self._size < self.capacity:
            return self._buffer[: self._size].copy()
        order = (np.arange(self.capacity) + self._head) % self.capacity
        return self._buffer[order].copy()


def queue_push(queue: NegativeQueue, key_projections: np.ndarray) -> NegativeQueue:
    """Insert keys in order, evicting the oldest once capacity is exceeded."""
    keys = np.atleast_2d(np.asarray(key_projections, dtype=np.float64))
    if keys.shape[1] != queue.dim:
        raise ConfigurationError(f"key dim {keys.shape[1]} != queue dim {queue.dim}")
    for row in keys:
        queue._buffer[queue._head] = row
        queue._head = (queue._head + 1) % queue.capacity
        queue._size = min(queue._size + 1, queue.capacity)
    return queue


def moco_loss(
    query_projections: np.ndarray,
    key_projections: np.ndarray,
    queue: NegativeQueue,
    temperature: float,
    example_indices: np.ndarray | None = None,
) -> ContrastiveBatchResult:
    """InfoNCE with the matching key as positive and queue entries as negatives.

    Keys and queue entries are constants; the gradient flows only to the
    query projections (shape B x d in the result).
    """
    q = np.asarray(query_projections, dtype=np.float64)
    k = np.asarray(key_projections, dtype=np.float64)
    if temperature <= 0.0:
        raise ConfigurationError("temperature must be positive")
    if q.shape != k.shape or q.ndim != 2:
        raise ConfigurationError(f"query/key shapes differ: {q.shape} vs {k.shape}")
    if len(queue) == 0:
        raise StateError("negative queue is empty")
    b = q.shape[0]
    if example_indices is None:
        example_indices = np.arange(b)
    if len(example_indices) != b:
        raise ConfigurationError("example_indices must have one entry per query")

    negatives = queue.entries()
    pos = (q * k).sum(axis=1, keepdims=True)
    neg = q @ negatives.T
    logits = np.concatenate([pos, neg], axis=1) / temperature
    logp, probs = _log_softmax(logits)
    loss = -logp[:, 0].mean()

    grad_logits = probs.copy()
    grad_logits[:, 0] -= 1.0
    grad_logits /= temperature * b
    grad_q = grad_logits[:, :1] * k + grad_logits[:, 1:] @ negatives

    pairs = [(int(i), float(c)) for i, c in zip(example_indices, pos[:, 0])]
    return ContrastiveBatchResult(loss=float(loss), pair_cossims=pairs, grad_on_projections=grad_q)
