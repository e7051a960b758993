"""Comparison selectors: uniform-random subsets, forgetting events, k-centers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ConfigurationError, ProtocolError
from .rng import keyed_stream


def random_subset(n: int, subset_size: int, seed: int) -> np.ndarray:
    """Uniform sample of `subset_size` indices without replacement."""
    if subset_size > n:
        raise BoundsError(f"cannot draw {subset_size} of {n} examples")
    if subset_size < 0:
        raise BoundsError("subset size must be nonnegative")
    return keyed_stream(seed, 0x5B).permutation(n)[:subset_size]


@dataclass
class ForgettingTable:
    """Counts correct -> incorrect transitions per example across epochs."""

    n: int
    forget_count: np.ndarray = field(default=None)  # type: ignore[assignment]
    prev_correct: np.ndarray = field(default=None)  # type: ignore[assignment]
    epochs_seen: int = 0

    def __post_init__(self) -> None:
        if self.forget_count is None:
            self.forget_count = np.zeros(self.n, dtype=np.int64)
        if self.prev_correct is None:
            self.prev_correct = np.zeros(self.n, dtype=bool)


def forgetting_update(table: ForgettingTable, correct: np.ndarray) -> ForgettingTable:
    """Record one epoch of per-example correctness booleans."""
    correct = np.asarray(correct, dtype=bool)
    if correct.shape != (table.n,):
        raise ProtocolError(
            f"correctness vector has shape {correct.shape}, expected ({table.n},)"
        )
    table.forget_count += table.prev_correct & ~correct
    table.prev_correct = correct.copy()
    table.epochs_seen += 1
    return table


@dataclass(frozen=True)
class CenterSet:
    chosen: np.ndarray  # selection order
    min_dist: np.ndarray  # distance of every example to its nearest center


def kcenters_greedy(
    features: np.ndarray,
    subset_size: int,
    seed: int,
    first: int | None = None,
) -> CenterSet:
    """Greedy farthest-point selection in feature space.

    The first center is a seed-chosen random index (or `first` when given);
    each subsequent center is the example farthest from all chosen centers,
    ties broken by ascending index.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if subset_size > n:
        raise BoundsError(f"cannot choose {subset_size} centers from {n} points")
    if subset_size < 1:
        raise BoundsError("need at least one center")
    if not np.all(np.isfinite(features)):
        raise ConfigurationError("k-centers requires finite features")

    start = int(keyed_stream(seed, 0xC2).integers(n)) if first is None else int(first)
    chosen = [start]
    min_dist = np.linalg.norm(features - features[start], axis=1)
    for _ in range(subset_size - 1):
        nxt = int(np.argmax(min_dist))  # argmax takes the first max: ascending-index ties
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(features - features[nxt], axis=1))
    return CenterSet(chosen=np.array(chosen, dtype=np.int64), min_dist=min_dist)
