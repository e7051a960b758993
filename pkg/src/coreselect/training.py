"""Contrastive training loop with per-epoch score accumulation and resume.

One epoch visits every example exactly once (the trailing short batch is
folded into its predecessor so no batch degenerates), commits the epoch's
cosine stream to the score table transactionally, and rewrites the on-disk
artifacts. All randomness is keyed by (seed, epoch, ...) so a resumed run
is bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scoring
from .augment import AugmentConfig, make_views
from .contrastive import NegativeQueue, moco_loss, ntxent_loss, queue_push
from .data import Dataset
from .errors import ConfigurationError, FormatError, NumericError
from .numerics import (
    EncoderDims,
    EncoderParams,
    OptimizerState,
    backward,
    forward,
    init_encoder,
    init_optimizer,
    momentum_update,
    replace_state,
    save_params,
    sgd_step,
)
from .rng import keyed_stream

STATE_MAGIC = b"CSTR"
STATE_VERSION = 1

SCORES_FILE = "scores.cscr"
COSSIM_LOG_FILE = "cossim_log.csv"
RANKING_FILE = "ranking.csv"
ENCODER_FILE = "encoder.csel"
STATE_FILE = "trainer_state.bin"


@dataclass(frozen=True)
class TrainSettings:
    loss_mode: str = "simclr"
    epochs: int = 40
    batch_size: int = 128
    temperature: float = 0.5
    momentum_m: float = 0.99
    queue_capacity: int = 1024
    base_lr: float = 0.3
    optimizer_momentum: float = 0.9
    hidden_dim: int = 256
    feature_dim: int = 128
    projection_dim: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.loss_mode not in ("simclr", "moco"):
            raise ConfigurationError(f"loss_mode must be simclr or moco, got {self.loss_mode!r}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1 (nothing to accumulate)")
        if self.loss_mode == "simclr" and self.batch_size < 4:
            raise ConfigurationError("simclr mode needs batch_size >= 4")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.temperature <= 0.0:
            raise ConfigurationError("temperature must be positive")
        if not 0.0 <= self.momentum_m < 1.0:
            raise ConfigurationError("momentum_m must lie in [0, 1)")
        if self.queue_capacity < 1:
            raise ConfigurationError("queue_capacity must be positive")


@dataclass
class TrainerState:
    params: EncoderParams
    optimizer: OptimizerState
    key_params: EncoderParams | None
    queue: NegativeQueue | None
    epochs_done: int


def _epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches covering [0, n) exactly once; no length-1 batch."""
    order = keyed_stream(seed, 0xBA, epoch).permutation(n)
    batches = [order[s : s + batch_size] for s in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def init_trainer(dataset: Dataset, settings: TrainSettings,
                 augment_cfg: AugmentConfig) -> TrainerState:
    channels = dataset.image_shape[0]
    out_h, out_w = augment_cfg.output_size
    dims = EncoderDims(
        input_dim=channels * out_h * out_w,
        hidden_dim=settings.hidden_dim,
        feature_dim=settings.feature_dim,
        projection_dim=settings.projection_dim,
    )
    params = init_encoder(dims, keyed_stream(settings.seed, 0x1E))
    optimizer = init_optimizer(dims.param_count(), settings.base_lr,
                               settings.optimizer_momentum, settings.epochs)
    key_params = None
    queue = None
    if settings.loss_mode == "moco":
        key_params = params.with_flat(params.flat.copy())
        queue = NegativeQueue(capacity=settings.queue_capacity, dim=settings.projection_dim)
        fill = keyed_stream(settings.seed, 0x9E).normal(
            size=(settings.queue_capacity, settings.projection_dim))
        fill /= np.linalg.norm(fill, axis=1, keepdims=True)
        queue_push(queue, fill)
    return TrainerState(params=params, optimizer=optimizer, key_params=key_params,
                        queue=queue, epochs_done=0)


def run_epoch(
    dataset: Dataset,
    settings: TrainSettings,
    augment_cfg: AugmentConfig,
    state: TrainerState,
    epoch: int,
    normalize_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[list[tuple[int, float]], float]:
    """One full pass; returns the epoch's (index, cossim) stream and mean loss."""
    n = len(dataset)
    pair_cossims: list[tuple[int, float]] = []
    losses = []
    for batch_idx in _epoch_batches(n, settings.batch_size, settings.seed, epoch):
        views_a, views_b = [], []
        for k in batch_idx:
            pair = make_views(dataset.pixels[k], int(k), augment_cfg, settings.seed, epoch)
            views_a.append(pair.view_a)
            views_b.append(pair.view_b)
        xa = np.stack(views_a).reshape(len(batch_idx), -1)
        xb = np.stack(views_b).reshape(len(batch_idx), -1)
        if normalize_stats is not None:
            mean, std = normalize_stats
            c = dataset.image_shape[0]
            per_px_mean = np.repeat(mean, xa.shape[1] // c)
            per_px_std = np.repeat(std, xa.shape[1] // c)
            xa = (xa - per_px_mean) / per_px_std
            xb = (xb - per_px_mean) / per_px_std

        if settings.loss_mode == "simclr":
            stacked = np.concatenate([xa, xb])
            _, projections = forward(state.params, stacked)
            result = ntxent_loss(projections, settings.temperature, batch_idx)
            grads = backward(state.params, stacked, result.grad_on_projections)
        else:
            state.key_params = momentum_update(state.key_params, state.params,
                                               settings.momentum_m)
            _, queries = forward(state.params, xa)
            _, keys = forward(state.key_params, xb)
            result = moco_loss(queries, keys, state.queue, settings.temperature, batch_idx)
            grads = backward(state.params, xa, result.grad_on_projections)

        if not np.isfinite(result.loss):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        flat, state.optimizer = sgd_step(state.params.flat, grads, state.optimizer, epoch)
        state.params = state.params.with_flat(flat)
        if settings.loss_mode == "moco":
            queue_push(state.queue, keys)
        pair_cossims.extend(result.pair_cossims)
        losses.append(result.loss)
    return pair_cossims, float(np.mean(losses))


def _write_state(state: TrainerState, path: Path) -> None:
    """Deterministic little-endian dump of everything resume needs."""
    p = state.params.flat.astype("<f8").tobytes()
    v = state.optimizer.velocity.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(STATE_MAGIC)
        fh.write(struct.pack("<IIQ", STATE_VERSION, state.epochs_done, len(state.params.flat)))
        fh.write(p)
        fh.write(v)
        if state.key_params is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(state.key_params.flat.astype("<f8").tobytes())
            entries = state.queue.entries()
            fh.write(struct.pack("<QQ", state.queue.capacity, entries.shape[0]))
            fh.write(entries.astype("<f8").tobytes())


def _read_state(path: Path, template: TrainerState) -> TrainerState:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != STATE_MAGIC:
        raise FormatError(f"bad trainer state magic {blob[:4]!r}")
    version, epochs_done, count = struct.unpack("<IIQ", blob[4:20])
    if version != STATE_VERSION:
        raise FormatError(f"unsupported trainer state version {version}")
    if count != len(template.params.flat):
        raise FormatError("trainer state parameter count does not match configuration")
    offset = 20
    flat = np.frombuffer(blob[offset : offset + 8 * count], dtype="<f8").copy()
    offset += 8 * count
    velocity = np.frombuffer(blob[offset : offset + 8 * count], dtype="<f8").copy()
    offset += 8 * count
    (has_key,) = struct.unpack("<B", blob[offset : offset + 1])
    offset += 1
    key_params = None
    queue = None
    if has_key:
        key_flat = np.frombuffer(blob[offset : offset + 8 * count], dtype="<f8").copy()
        offset += 8 * count
        capacity, size = struct.unpack("<QQ", blob[offset : offset + 16])
        offset += 16
        dim = template.params.dims.projection_dim
        entries = np.frombuffer(blob[offset : offset + 8 * size * dim],
                                dtype="<f8").reshape(size, dim)
        key_params = template.params.with_flat(key_flat)
        queue = NegativeQueue(capacity=int(capacity), dim=dim)
        queue_push(queue, entries)
    return TrainerState(
        params=template.params.with_flat(flat),
        optimizer=replace_state(template.optimizer, velocity),
        key_params=key_params,
        queue=queue,
        epochs_done=int(epochs_done),
    )


def train_and_score(
    dataset: Dataset,
    settings: TrainSettings,
    augment_cfg: AugmentConfig,
    out_dir,
    config_hash: bytes = b"\x00" * 32,
    resume: bool = False,
    progress=None,
    normalize_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[scoring.ScoreTable, scoring.CoresetRanking]:
    """Full training run: per-epoch score commits, checkpoints, final ranking.

    With `resume`, continues from the last committed epoch in `out_dir`;
    artifacts end up identical to an uninterrupted run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scores_path = out / SCORES_FILE
    log_path = out / COSSIM_LOG_FILE
    state_path = out / STATE_FILE

    state = init_trainer(dataset, settings, augment_cfg)
    table = scoring.ScoreTable(n=len(dataset), seed=settings.seed,
                               loss_mode=settings.loss_mode, config_hash=config_hash)

    if resume and state_path.exists() and scores_path.exists():
        state = _read_state(state_path, state)
        loaded = scoring.load_scores(scores_path)
        if loaded.n != table.n or loaded.epochs_seen != state.epochs_done:
            raise FormatError("resume artifacts disagree with the configuration")
        table.m = loaded.m.copy()
        table.epochs_seen = loaded.epochs_seen
        table.config_hash = loaded.config_hash
        # drop any log rows past the last committed epoch (mid-epoch crash)
        rows = [r for r in scoring.read_cossim_log(log_path) if r[0] < state.epochs_done]
        scoring.append_cossim_log(log_path, 0, [], write_header=True)
        for epoch in range(state.epochs_done):
            scoring.append_cossim_log(log_path, epoch,
                                      [(k, c) for e, k, c in rows if e == epoch])
    else:
        scoring.append_cossim_log(log_path, 0, [], write_header=True)

    for epoch in range(state.epochs_done, settings.epochs):
        pair_cossims, mean_loss = run_epoch(dataset, settings, augment_cfg, state,
                                            epoch, normalize_stats)
        scoring.accumulate(table, pair_cossims)
        state.epochs_done = epoch + 1
        scoring.append_cossim_log(log_path, epoch, pair_cossims)
        scoring.save_scores(table, scores_path)
        _write_state(state, state_path)
        save_params(state.params, out / ENCODER_FILE)
        if progress is not None:
            mean_cossim = np.mean([c for _, c in pair_cossims])
            progress(f"epoch {epoch} loss {mean_loss:.6f} mean_cossim {mean_cossim:.6f}")

    ranking = scoring.rank(table)
    scoring.write_ranking_csv(ranking, out / RANKING_FILE)
    return table, ranking
