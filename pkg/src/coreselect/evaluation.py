"""Evaluation battery: downstream classifier, stride/cross/consistency/imbalance
protocols, and cosine-distribution statistics.

The desk-scale classifier reuses the encoder trunk shape (flatten -> affine
-> ReLU -> affine) plus a fresh affine softmax head, trained with SGD +
momentum and a cosine schedule on exactly the given subset. Independent
runs may execute in parallel threads (capped by CORESELECT_THREADS); every
run is a pure function of its seed, so thread count never changes results.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._mlp import StackSpec, init_flat, stack_backward, stack_forward
from .errors import ConfigurationError, DataError
from .data import Dataset
from .numerics import init_optimizer, sgd_step
from .rng import keyed_stream
from .scoring import CoresetRanking, select

REPORT_HEADER = ["method", "L", "stride", "run", "seed", "test_accuracy", "runtime_seconds"]
COSSIM_HIST_BINS = 50


@dataclass(frozen=True)
class ClassifierConfig:
    hidden_dim: int = 128
    feature_dim: int = 128
    epochs: int = 30
    batch_size: int = 64
    base_lr: float = 0.02
    momentum: float = 0.9

    def stack_spec(self, input_dim: int, num_classes: int) -> StackSpec:
        return StackSpec(
            dims=(input_dim, self.hidden_dim, self.feature_dim, num_classes),
            relu_after=(True, False, False),
        )


@dataclass(frozen=True)
class EvalReport:
    method: str
    subset_size: int
    stride: int | None
    seeds: tuple[int, ...]
    accuracies: tuple[float, ...]
    run_seconds: tuple[float, ...]

    @property
    def test_accuracy_mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def test_accuracy_std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def runtime_seconds(self) -> float:
        return float(np.sum(self.run_seconds))


@dataclass(frozen=True)
class ClassFractionHistogram:
    counts: np.ndarray
    total: int

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.total

    def fractions_exact(self) -> list[Fraction]:
        return [Fraction(int(c), self.total) for c in self.counts]


def max_workers() -> int:
    """Worker cap from CORESELECT_THREADS; defaults to serial execution."""
    raw = os.environ.get("CORESELECT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_parallel(jobs):
    """Run zero-argument callables, preserving order; results are seed-pure."""
    workers = max_workers()
    if workers == 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: job(), jobs))


def _flatten(pixels: np.ndarray) -> np.ndarray:
    return pixels.reshape(len(pixels), -1)


def classifier_features_logits(
    spec: StackSpec, flat: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    acts = stack_forward(spec, flat, x)
    return acts[2], acts[3]


def train_classifier(
    subset_indices: np.ndarray,
    train_set: Dataset,
    test_set: Dataset,
    cfg: ClassifierConfig,
    seed: int,
    epoch_end=None,
) -> tuple[np.ndarray, float]:
    """Minimize mean cross entropy over exactly the given indices.

    Returns the flat classifier parameters and top-1 accuracy on the test
    split. Bit-reproducible for a fixed seed. `epoch_end(spec, flat, epoch)`
    is invoked after each epoch (used by the forgetting-events baseline).
    """
    # the subset is a set: canonicalize order so callers cannot affect training
    subset_indices = np.sort(np.asarray(subset_indices, dtype=np.int64))
    if len(subset_indices) == 0:
        raise ConfigurationError("cannot train a classifier on an empty subset")
    if train_set.labels is None or test_set.labels is None:
        raise ConfigurationError("classifier training needs labeled train and test splits")
    if subset_indices.min() < 0 or subset_indices.max() >= len(train_set):
        raise ConfigurationError("subset index outside the training set")

    x_all = _flatten(train_set.pixels[subset_indices])
    y_all = train_set.labels[subset_indices]
    num_classes = train_set.num_classes
    spec = cfg.stack_spec(x_all.shape[1], num_classes)

    flat = init_flat(spec, keyed_stream(seed, 0xC1))
    state = init_optimizer(spec.param_count(), cfg.base_lr, cfg.momentum, cfg.epochs)

    count = len(subset_indices)
    for epoch in range(cfg.epochs):
        order = keyed_stream(seed, 0xC1, epoch + 1).permutation(count)
        for start in range(0, count, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acts = stack_forward(spec, flat, x_all[batch])
            logits = acts[-1]
            shifted = logits - logits.max(axis=1, keepdims=True)
            expd = np.exp(shifted)
            probs = expd / expd.sum(axis=1, keepdims=True)
            grad_logits = probs
            grad_logits[np.arange(len(batch)), y_all[batch]] -= 1.0
            grad_logits /= len(batch)
            grads = stack_backward(spec, flat, acts, grad_logits)
            flat, state = sgd_step(flat, grads, state, epoch)
        if epoch_end is not None:
            epoch_end(spec, flat, epoch)

    _, test_logits = classifier_features_logits(spec, flat, _flatten(test_set.pixels))
    predictions = test_logits.argmax(axis=1)
    accuracy = float((predictions == test_set.labels).mean())
    return flat, accuracy


def supervised_signals(
    train_set: Dataset, cfg: ClassifierConfig, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Train on the full labeled set; return (penultimate features, forget counts).

    Correctness is evaluated on the training set at each epoch end, which is
    what the forgetting-events selector consumes; features come from the
    trained classifier's feature layer, which is what k-centers consumes.
    """
    from .baselines import ForgettingTable, forgetting_update

    if train_set.labels is None:
        raise ConfigurationError("supervised baselines need a labeled training set")
    x_all = _flatten(train_set.pixels)
    table = ForgettingTable(n=len(train_set))

    def epoch_end(spec, flat, epoch):
        _, logits = classifier_features_logits(spec, flat, x_all)
        forgetting_update(table, logits.argmax(axis=1) == train_set.labels)

    all_indices = np.arange(len(train_set))
    flat, _ = train_classifier(all_indices, train_set, train_set, cfg, seed,
                               epoch_end=epoch_end)
    spec = cfg.stack_spec(x_all.shape[1], train_set.num_classes)
    features, _ = classifier_features_logits(spec, flat, x_all)
    return features, table.forget_count.copy()


def _timed_accuracy(subset, train_set, test_set, cfg, seed) -> tuple[float, float]:
    started = time.perf_counter()
    _, accuracy = train_classifier(subset, train_set, test_set, cfg, seed)
    return accuracy, time.perf_counter() - started


def _collect(jobs, method, subset_size, stride, seeds) -> EvalReport:
    results = run_parallel(jobs)
    return EvalReport(
        method=method, subset_size=subset_size, stride=stride, seeds=seeds,
        accuracies=tuple(acc for acc, _ in results),
        run_seconds=tuple(sec for _, sec in results),
    )


def stride_experiment(
    ranking: CoresetRanking,
    train_set: Dataset,
    test_set: Dataset,
    subset_size: int,
    strides: list[int],
    runs: int,
    cfg: ClassifierConfig,
    seed: int = 0,
) -> list[EvalReport]:
    """Train on each ranking slice, plus a paired random baseline of equal size.

    Classifier seeds are shared across arms (paired comparison); the random
    baseline re-samples its subset independently for every run.
    """
    reports = []
    classifier_seeds = tuple(seed + 1000 * (r + 1) for r in range(runs))
    for stride in strides:
        subset = select(ranking, subset_size, stride)
        jobs = [(lambda s=s: _timed_accuracy(subset, train_set, test_set, cfg, s))
                for s in classifier_seeds]
        reports.append(_collect(jobs, "coreset", subset_size, stride, classifier_seeds))

    jobs = [
        (lambda r=r, s=s: _timed_accuracy(
            _random_subset_for_run(len(train_set), subset_size, seed, r),
            train_set, test_set, cfg, s))
        for r, s in enumerate(classifier_seeds)
    ]
    reports.append(_collect(jobs, "random", subset_size, None, classifier_seeds))
    return reports


def _random_subset_for_run(n: int, subset_size: int, seed: int, run: int) -> np.ndarray:
    from .baselines import random_subset

    return random_subset(n, subset_size, seed + 7919 * (run + 1))


def cross_test(
    ranking: CoresetRanking,
    train_set: Dataset,
    train_frac: float,
    test_frac: float,
    runs: int,
    cfg: ClassifierConfig,
    seed: int = 0,
) -> tuple[EvalReport, EvalReport]:
    """Paired C->N and N->C reports.

    C->N trains on the top `train_frac` of the ranking and tests on the
    bottom `test_frac`; N->C is the mirror image. Both slices come from the
    training split and are checked for overlap before any training happens.
    """
    n = ranking.n
    train_count = int(round(train_frac * n))
    test_count = int(round(test_frac * n))
    if train_count + test_count > n:
        raise ConfigurationError(
            f"train fraction {train_frac} and test fraction {test_frac} overlap"
        )
    if train_count < 1 or test_count < 1:
        raise ConfigurationError("cross test slices must be nonempty")

    top_train = select(ranking, train_count, 0)
    bottom_test = select(ranking, test_count, n - test_count)
    bottom_train = select(ranking, train_count, n - train_count)
    top_test = select(ranking, test_count, 0)
    assert not np.intersect1d(top_train, bottom_test).size
    assert not np.intersect1d(bottom_train, top_test).size

    classifier_seeds = tuple(seed + 1000 * (r + 1) for r in range(runs))

    def run_direction(train_idx: np.ndarray, test_idx: np.ndarray, method: str) -> EvalReport:
        held_out = Dataset(
            pixels=train_set.pixels[test_idx],
            labels=train_set.labels[test_idx],
            num_classes=train_set.num_classes,
            split="test", name=f"{train_set.name}-{method}",
        )
        jobs = [(lambda s=s: _timed_accuracy(train_idx, train_set, held_out, cfg, s))
                for s in classifier_seeds]
        return _collect(jobs, method, train_count, None, classifier_seeds)

    return (
        run_direction(top_train, bottom_test, "C->N"),
        run_direction(bottom_train, top_test, "N->C"),
    )


def consistency(rankings: list[CoresetRanking], subset_size: int) -> float:
    """Size of the common top-L set across runs, divided by L."""
    if len(rankings) < 2:
        raise ConfigurationError("consistency needs at least two rankings")
    n = rankings[0].n
    if any(r.n != n for r in rankings):
        raise ConfigurationError("rankings cover different dataset sizes")
    common = set(select(rankings[0], subset_size, 0).tolist())
    for ranking in rankings[1:]:
        common &= set(select(ranking, subset_size, 0).tolist())
    return len(common) / subset_size


def imbalance(subset_indices: np.ndarray, labels: np.ndarray, num_classes: int) -> ClassFractionHistogram:
    """Per-class fraction of the subset; counts stay exact integers."""
    subset_indices = np.asarray(subset_indices, dtype=np.int64)
    if len(subset_indices) == 0:
        raise ConfigurationError("imbalance of an empty subset is undefined")
    chosen = np.asarray(labels)[subset_indices]
    if chosen.min() < 0 or chosen.max() >= num_classes:
        raise DataError("label outside [0, num_classes)")
    counts = np.bincount(chosen, minlength=num_classes)
    return ClassFractionHistogram(counts=counts, total=len(subset_indices))


def cossim_stats(values: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
    """(mean, median, histogram counts, bin edges) over fixed [-1, 1] bins."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigurationError("cossim statistics of an empty array are undefined")
    if values.min() < -1.0 - 1e-9 or values.max() > 1.0 + 1e-9:
        raise ConfigurationError("average cossim values must lie in [-1, 1]")
    edges = np.linspace(-1.0, 1.0, COSSIM_HIST_BINS + 1)
    counts, _ = np.histogram(values, bins=edges)
    return float(values.mean()), float(np.median(values)), counts, edges
