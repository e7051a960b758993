"""Run configuration: line-oriented `key = value` files with dotted sections.

Unknown keys are rejected (they are almost always typos), every value is
validated with a field-level message, and the fully resolved configuration
can be echoed back out canonically; the sha256 of that echo is the config
hash embedded in score checkpoints.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .augment import AugmentConfig
from .data import Dataset, SyntheticSpec, channel_stats, load_cifar_binary, load_idx, make_synthetic, normalize
from .errors import ConfigurationError
from .evaluation import ClassifierConfig
from .training import TrainSettings


def parse_kv_text(text: str) -> dict[str, str]:
    """`key = value` lines; blank lines and #-comments are ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


class _Fields:
    """Typed access to a raw key/value mapping with consumption tracking."""

    def __init__(self, raw: dict[str, str]):
        self.raw = dict(raw)
        self.used: set[str] = set()

    def _get(self, key: str, default):
        self.used.add(key)
        return self.raw.get(key, default)

    def get_str(self, key: str, default: str | None = None) -> str | None:
        value = self._get(key, default)
        return value

    def get_int(self, key: str, default: int | None = None) -> int | None:
        value = self._get(key, None)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}") from None

    def get_float(self, key: str, default: float | None = None) -> float | None:
        value = self._get(key, None)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigurationError(f"{key}: expected a number, got {value!r}") from None

    def get_bool(self, key: str, default: bool) -> bool:
        value = self._get(key, None)
        if value is None:
            return default
        lowered = str(value).lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{key}: expected true/false, got {value!r}")

    def get_floats(self, key: str, default: tuple[float, ...]) -> tuple[float, ...]:
        value = self._get(key, None)
        if value is None:
            return default
        try:
            return tuple(float(part) for part in str(value).split(",") if part.strip())
        except ValueError:
            raise ConfigurationError(f"{key}: expected comma-separated numbers, got {value!r}") from None

    def get_paths(self, key: str) -> tuple[str, ...]:
        value = self._get(key, None)
        if value is None:
            return ()
        return tuple(part.strip() for part in str(value).split(",") if part.strip())

    def reject_unknown(self) -> None:
        unknown = sorted(set(self.raw) - self.used)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    seed: int = 1234
    n: int = 2000
    image_size: int = 16
    num_classes: int = 4
    hard_fraction: float = 0.1
    test_n: int = 500
    test_hard_fraction: float = 0.4
    limit: int = 0
    normalize: bool = False
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    files: tuple[str, ...] = ()
    test_files: tuple[str, ...] = ()


@dataclass(frozen=True)
class EvalConfig:
    fraction: float = 0.3
    strides: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6)
    runs: int = 5
    train_frac: float = 0.3
    test_frac: float = 0.3
    method: str = "random"
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    ranking: str | None = None
    rankings: tuple[str, ...] = ()
    scores: str | None = None
    subset: str | None = None


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    train: TrainSettings
    augment: AugmentConfig
    evaluation: EvalConfig
    output_dir: str = "runs/exp"

    @staticmethod
    def from_text(text: str) -> "RunConfig":
        return _build_config(parse_kv_text(text))

    @staticmethod
    def from_file(path) -> "RunConfig":
        return RunConfig.from_text(Path(path).read_text())

    def canonical_text(self) -> str:
        """Sorted `key = value` lines for every resolved field."""
        lines = []
        lines.append(f"output_dir = {self.output_dir}")
        for name, obj, skip in (
            ("dataset", self.dataset, ()),
            ("", self.train, ()),
            ("augment", self.augment, ()),
            ("eval", self.evaluation, ("classifier",)),
            ("eval.classifier", self.evaluation.classifier, ()),
        ):
            for f in fields(obj):
                if f.name in skip:
                    continue
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                key = f"{name}.{f.name}" if name else f.name
                lines.append(f"{key} = {value}")
        return "\n".join(sorted(lines)) + "\n"

    def config_hash(self) -> bytes:
        return hashlib.sha256(self.canonical_text().encode()).digest()


def _build_config(raw: dict[str, str]) -> RunConfig:
    f = _Fields(raw)

    dataset = DatasetConfig(
        source=f.get_str("dataset.source", "synthetic"),
        seed=f.get_int("dataset.seed", 1234),
        n=f.get_int("dataset.n", 2000),
        image_size=f.get_int("dataset.image_size", 16),
        num_classes=f.get_int("dataset.num_classes", 4),
        hard_fraction=f.get_float("dataset.hard_fraction", 0.1),
        test_n=f.get_int("dataset.test_n", 500),
        test_hard_fraction=f.get_float("dataset.test_hard_fraction", 0.4),
        limit=f.get_int("dataset.limit", 0),
        normalize=f.get_bool("dataset.normalize", False),
        images=f.get_str("dataset.images"),
        labels=f.get_str("dataset.labels"),
        test_images=f.get_str("dataset.test_images"),
        test_labels=f.get_str("dataset.test_labels"),
        files=f.get_paths("dataset.files"),
        test_files=f.get_paths("dataset.test_files"),
    )
    if dataset.source not in ("synthetic", "idx", "cifar"):
        raise ConfigurationError(
            f"dataset.source: expected synthetic, idx, or cifar, got {dataset.source!r}"
        )

    loss_mode = f.get_str("loss_mode", "simclr")
    default_temp = 0.5 if loss_mode == "simclr" else 0.2
    train = TrainSettings(
        loss_mode=loss_mode,
        epochs=f.get_int("epochs", 40),
        batch_size=f.get_int("batch_size", 128),
        temperature=f.get_float("temperature", default_temp),
        momentum_m=f.get_float("momentum_m", 0.99),
        queue_capacity=f.get_int("queue_capacity", 1024),
        base_lr=f.get_float("optimizer.base_lr", 0.3),
        optimizer_momentum=f.get_float("optimizer.momentum", 0.9),
        hidden_dim=f.get_int("model.hidden_dim", 256),
        feature_dim=f.get_int("model.feature_dim", 128),
        projection_dim=f.get_int("model.projection_dim", 64),
        seed=f.get_int("seed", 0),
    )

    out_size = f.get_int("augment.output_size", dataset.image_size)
    augment = AugmentConfig(
        crop_scale_range=(f.get_float("augment.crop_scale_lo", 0.2),
                          f.get_float("augment.crop_scale_hi", 1.0)),
        flip_prob=f.get_float("augment.flip_prob", 0.5),
        jitter_strength=f.get_float("augment.jitter_strength", 0.4),
        grayscale_prob=f.get_float("augment.grayscale_prob", 0.2),
        output_size=(out_size, out_size),
    )

    classifier = ClassifierConfig(
        hidden_dim=f.get_int("eval.classifier.hidden_dim", 128),
        feature_dim=f.get_int("eval.classifier.feature_dim", 128),
        epochs=f.get_int("eval.classifier.epochs", 30),
        batch_size=f.get_int("eval.classifier.batch_size", 64),
        base_lr=f.get_float("eval.classifier.base_lr", 0.02),
        momentum=f.get_float("eval.classifier.momentum", 0.9),
    )
    evaluation = EvalConfig(
        fraction=f.get_float("eval.fraction", 0.3),
        strides=f.get_floats("eval.strides", (0.0, 0.2, 0.4, 0.6)),
        runs=f.get_int("eval.runs", 5),
        train_frac=f.get_float("eval.train_frac", 0.3),
        test_frac=f.get_float("eval.test_frac", 0.3),
        method=f.get_str("eval.method", "random"),
        classifier=classifier,
        ranking=f.get_str("artifacts.ranking"),
        rankings=f.get_paths("artifacts.rankings"),
        scores=f.get_str("artifacts.scores"),
        subset=f.get_str("artifacts.subset"),
    )

    output_dir = f.get_str("output_dir", "runs/exp")
    f.reject_unknown()
    return RunConfig(dataset=dataset, train=train, augment=augment,
                     evaluation=evaluation, output_dir=output_dir)


def build_datasets(cfg: DatasetConfig) -> tuple[Dataset, Dataset | None, SyntheticSpec | None]:
    """(train split, test split or None, synthetic ground truth or None)."""
    if cfg.source == "synthetic":
        train, info = make_synthetic(SyntheticSpec(
            n=cfg.n, image_size=cfg.image_size, num_classes=cfg.num_classes,
            hard_fraction=cfg.hard_fraction, seed=cfg.seed))
        test = None
        if cfg.test_n > 0:
            test, _ = make_synthetic(SyntheticSpec(
                n=cfg.test_n, image_size=cfg.image_size, num_classes=cfg.num_classes,
                hard_fraction=cfg.test_hard_fraction, seed=cfg.seed + 1))
            test = Dataset(pixels=test.pixels, labels=test.labels,
                           num_classes=test.num_classes, split="test", name=test.name)
        return train, test, info
    if cfg.source == "idx":
        if not cfg.images or not cfg.labels:
            raise ConfigurationError("dataset.images and dataset.labels are required for idx")
        train = load_idx(cfg.images, cfg.labels, split="train")
        test = None
        if cfg.test_images and cfg.test_labels:
            test = load_idx(cfg.test_images, cfg.test_labels, split="test")
        return _limit(train, cfg.limit), _limit(test, cfg.limit), None
    if not cfg.files:
        raise ConfigurationError("dataset.files is required for cifar")
    train = load_cifar_binary(list(cfg.files), split="train")
    test = load_cifar_binary(list(cfg.test_files), split="test") if cfg.test_files else None
    return _limit(train, cfg.limit), _limit(test, cfg.limit), None


def _limit(dataset: Dataset | None, limit: int) -> Dataset | None:
    if dataset is None or limit <= 0 or len(dataset) <= limit:
        return dataset
    return Dataset(pixels=dataset.pixels[:limit],
                   labels=None if dataset.labels is None else dataset.labels[:limit],
                   num_classes=dataset.num_classes, split=dataset.split, name=dataset.name)


def normalization_stats(cfg: DatasetConfig, train: Dataset):
    """Training-split channel stats when normalization is enabled."""
    if not cfg.normalize:
        return None
    mean, std = channel_stats(train)
    if (std <= 0.0).any():
        raise ConfigurationError("dataset.normalize: a channel has zero variance")
    return mean, std


def normalized_pair(cfg: DatasetConfig, train: Dataset, test: Dataset | None):
    """Apply training-split normalization to both splits when enabled."""
    stats = normalization_stats(cfg, train)
    if stats is None:
        return train, test
    mean, std = stats
    return normalize(train, mean, std), None if test is None else normalize(test, mean, std)
