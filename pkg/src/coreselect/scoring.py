"""Per-example coreset scores: accumulation, ranking, selection, persistence.

Each epoch every example contributes exactly one positive-pair cosine; its
negative value is added to that example's running score. High score means
persistently low cosine, i.e. a hard example. Ranking sorts scores
descending (ties by ascending index), so position 0 is the hardest example
and the coreset is the leading slice.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ConfigurationError, FormatError, ProtocolError

SCORE_MAGIC = b"CSCR"
SCORE_VERSION = 1
HASH_BYTES = 32

COSSIM_LOG_HEADER = ["epoch", "example_index", "cossim"]
RANKING_HEADER = ["rank", "example_index", "score", "mean_cossim"]


@dataclass
class ScoreTable:
    n: int
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    epochs_seen: int = 0
    seed: int | None = None
    loss_mode: str | None = None
    config_hash: bytes = b"\x00" * HASH_BYTES

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigurationError("score table needs at least one example")
        if self.m is None:
            self.m = np.zeros(self.n, dtype=np.float64)
        if self.m.shape != (self.n,):
            raise ConfigurationError(f"score array shape {self.m.shape} != ({self.n},)")
        if len(self.config_hash) != HASH_BYTES:
            raise ConfigurationError(f"config hash must be {HASH_BYTES} bytes")


@dataclass(frozen=True)
class CoresetRanking:
    a: np.ndarray  # permutation of [0, N), hardest example first
    score_snapshot: np.ndarray
    epochs_seen: int = 0

    @property
    def n(self) -> int:
        return len(self.a)


def accumulate(table: ScoreTable, pair_cossims: list[tuple[int, float]]) -> ScoreTable:
    """Commit one full epoch: m[k] -= cossim_k for every example exactly once."""
    if len(pair_cossims) != table.n:
        raise ProtocolError(
            f"epoch stream has {len(pair_cossims)} entries for {table.n} examples"
        )
    seen = np.zeros(table.n, dtype=bool)
    values = np.empty(table.n, dtype=np.float64)
    for k, c in pair_cossims:
        if not 0 <= k < table.n:
            raise ProtocolError(f"example index {k} outside [0, {table.n})")
        if seen[k]:
            raise ProtocolError(f"example index {k} appears twice in one epoch")
        seen[k] = True
        values[k] = c
    table.m -= values
    table.epochs_seen += 1
    return table


def rank(table: ScoreTable) -> CoresetRanking:
    """Sort descending by score; equal scores break by ascending index."""
    if table.epochs_seen < 1:
        raise ConfigurationError("cannot rank before any epoch has been accumulated")
    order = np.argsort(-table.m, kind="stable")
    return CoresetRanking(a=order, score_snapshot=table.m.copy(),
                          epochs_seen=table.epochs_seen)


def select(ranking: CoresetRanking, subset_size: int, stride: int = 0) -> np.ndarray:
    """Indices ranking.a[stride : stride + subset_size]; stride 0 is the coreset."""
    n = ranking.n
    if subset_size < 0 or stride < 0:
        raise BoundsError("subset size and stride must be nonnegative")
    if stride + subset_size > n:
        raise BoundsError(f"slice [{stride}, {stride + subset_size}) exceeds N={n}")
    return ranking.a[stride : stride + subset_size].copy()


def mean_cossim(table: ScoreTable) -> np.ndarray:
    """Average positive-pair cosine per example: -m[k] / epochs_seen."""
    if table.epochs_seen < 1:
        raise ConfigurationError("mean cossim undefined before the first epoch")
    return -table.m / table.epochs_seen


def save_scores(table: ScoreTable, path) -> None:
    """Little-endian: magic, version u32, N u64, epochs u32, scores, 32-byte hash."""
    with open(path, "wb") as fh:
        fh.write(SCORE_MAGIC)
        fh.write(struct.pack("<IQI", SCORE_VERSION, table.n, table.epochs_seen))
        fh.write(table.m.astype("<f8").tobytes())
        fh.write(table.config_hash)


def load_scores(path) -> ScoreTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SCORE_MAGIC:
        raise FormatError(f"bad score checkpoint magic {blob[:4]!r}")
    header_end = 4 + 16
    if len(blob) < header_end:
        raise FormatError("score checkpoint header truncated")
    version, n, epochs_seen = struct.unpack("<IQI", blob[4:header_end])
    if version != SCORE_VERSION:
        raise FormatError(f"unsupported score checkpoint version {version}")
    expected = header_end + 8 * n + HASH_BYTES
    if len(blob) != expected:
        raise FormatError(f"score checkpoint holds {len(blob)} bytes, expected {expected}")
    m = np.frombuffer(blob[header_end : header_end + 8 * n], dtype="<f8").astype(np.float64)
    table = ScoreTable(n=int(n), m=m, epochs_seen=int(epochs_seen),
                       config_hash=blob[expected - HASH_BYTES :])
    return table


def append_cossim_log(path, epoch: int, pair_cossims: list[tuple[int, float]],
                      write_header: bool = False) -> None:
    """One CSV row per example per epoch; floats use round-trip repr."""
    mode = "w" if write_header else "a"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if write_header:
            writer.writerow(COSSIM_LOG_HEADER)
        for k, c in sorted(pair_cossims):
            writer.writerow([epoch, k, repr(float(c))])


def read_cossim_log(path) -> list[tuple[int, int, float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COSSIM_LOG_HEADER:
            raise FormatError(f"unexpected cossim log header {header}")
        for row in reader:
            rows.append((int(row[0]), int(row[1]), float(row[2])))
    return rows


def replay_scores(n: int, log_rows: list[tuple[int, int, float]]) -> np.ndarray:
    """Recompute m from a cossim log by per-epoch subtraction, oldest first."""
    m = np.zeros(n, dtype=np.float64)
    for _, k, c in sorted(log_rows, key=lambda r: (r[0], r[1])):
        m[k] -= c
    return m


def write_ranking_csv(ranking: CoresetRanking, path, method: str | None = None) -> None:
    """Ranking export; a `method` column is prepended for baseline selectors."""
    header = RANKING_HEADER if method is None else ["method"] + RANKING_HEADER
    epochs = max(ranking.epochs_seen, 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for pos, k in enumerate(ranking.a):
            score = float(ranking.score_snapshot[k])
            mean_c = repr(-score / epochs) if ranking.epochs_seen >= 1 else ""
            row = [pos, int(k), repr(score), mean_c]
            writer.writerow(row if method is None else [method] + row)


def read_ranking_csv(path) -> CoresetRanking:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-4:] != RANKING_HEADER:
            raise FormatError(f"unexpected ranking header {header}")
        offset = len(header) - 4
        order, scores = [], []
        for row in reader:
            order.append(int(row[offset + 1]))
            scores.append(float(row[offset + 2]))
    if not order:
        raise FormatError("ranking file holds no rows")
    a = np.array(order, dtype=np.int64)
    snapshot = np.zeros(len(order), dtype=np.float64)
    if a.min() < 0 or a.max() >= len(order) or len(np.unique(a)) != len(order):
        raise FormatError("ranking example_index column is not a permutation")
    snapshot[a] = scores
    return CoresetRanking(a=a, score_snapshot=snapshot, epochs_seen=1)
