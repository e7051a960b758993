"""Dataset ingestion, normalization, and the planted-hard synthetic generator.

Supported on-disk formats: IDX (big-endian, MNIST convention) and the CIFAR
binary layout (3073-byte records, channel-major pixels). The synthetic
generator produces class textures that are constant along image columns, so
the two halves of a normal example look alike while a planted hard example
carries two different class textures in its left/right halves; that is the
ground truth the acceptance experiments recover.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DataError, FormatError
from .rng import keyed_stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073
CIFAR_SHAPE = (3, 32, 32)

# class tints (channel weights) used by the generator; together with the
# row-profile phases they keep every pair of class textures below 0.5
# pixel-space cosine (worst pair: a pure tint vs the gray tint, ~0.41)
_TINTS = np.array([
    [1.000, 0.020, 0.020],
    [0.020, 1.000, 0.020],
    [0.020, 0.020, 1.000],
    [0.577, 0.577, 0.577],
])
_NOISE_RANGE = (0.01, 0.10)


@dataclass(frozen=True)
class Example:
    pixels: np.ndarray  # C x H x W, values in [0, 1] before normalization
    index: int
    label: int | None = None


@dataclass(frozen=True)
class Dataset:
    pixels: np.ndarray  # N x C x H x W
    labels: np.ndarray | None
    num_classes: int
    split: str = "train"
    name: str = "dataset"

    def __post_init__(self) -> None:
        if self.pixels.ndim != 4:
            raise DataError(f"pixels must be N x C x H x W, got shape {self.pixels.shape}")
        if self.labels is not None:
            if len(self.labels) != len(self.pixels):
                raise DataError("label count does not match example count")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise DataError("labels outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.pixels.shape[1:]

    def example(self, k: int) -> Example:
        label = None if self.labels is None else int(self.labels[k])
        return Example(pixels=self.pixels[k], index=k, label=label)


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 2000
    image_size: int = 16
    num_classes: int = 4
    hard_fraction: float = 0.1
    seed: int = 0
    hard_indices: tuple[int, ...] | None = None  # filled by the generator

    def __post_init__(self) -> None:
        if self.image_size < 8:
            raise ConfigurationError("synthetic images must be at least 8x8")
        if not 0.0 < self.hard_fraction < 1.0:
            raise ConfigurationError("hard_fraction must lie in (0, 1)")
        if self.n < 1 or self.num_classes < 2:
            raise ConfigurationError("need n >= 1 and at least two classes")

    @property
    def boundary_offset(self) -> int:
        """How far a hard example's texture boundary can sit from center."""
        return max(1, self.image_size // 8)

    def oracle_crop_width(self) -> int:
        """Width of side crops guaranteed clear of any texture boundary."""
        return self.image_size // 2 - self.boundary_offset - 1


def _read_exact(fh, count: int, what: str) -> bytes:
    blob = fh.read(count)
    if len(blob) != count:
        raise FormatError(f"truncated {what}: wanted {count} bytes, got {len(blob)}")
    return blob


def load_idx(images_path, labels_path, name: str = "idx", split: str = "train") -> Dataset:
    """MNIST-style IDX pair -> single-channel dataset with pixels in [0, 1]."""
    with open(images_path, "rb") as fh:
        magic, count, height, width = struct.unpack(">4i", _read_exact(fh, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        payload = _read_exact(fh, count * height * width, "image payload")
        if fh.read(1):
            raise FormatError("trailing bytes after image payload")
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">2i", _read_exact(fh, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        label_bytes = _read_exact(fh, label_count, "label payload")
        if fh.read(1):
            raise FormatError("trailing bytes after label payload")
    if count != label_count:
        raise FormatError(f"image count {count} != label count {label_count}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, 1, height, width)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if count else 10
    return Dataset(pixels=pixels.astype(np.float64) / 255.0, labels=labels,
                   num_classes=num_classes, split=split, name=name)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Inverse of load_idx; pixels are requantized to bytes."""
    n, channels, height, width = dataset.pixels.shape
    if channels != 1:
        raise ConfigurationError("IDX stores single-channel images")
    if dataset.labels is None:
        raise ConfigurationError("IDX export needs labels")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4i", IDX_IMAGES_MAGIC, n, height, width))
        fh.write(np.round(dataset.pixels * 255.0).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2i", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def load_cifar_binary(paths, name: str = "cifar", split: str = "train") -> Dataset:
    """Concatenate CIFAR-format batch files (1 label byte + 3072 pixel bytes)."""
    if isinstance(paths, (str, bytes)) or not hasattr(paths, "__iter__"):
        paths = [paths]
    records = []
    for path in paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{path}: length {len(blob)} is not a multiple of {CIFAR_RECORD_BYTES}"
            )
        records.append(np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES))
    stacked = np.concatenate(records) if records else np.zeros((0, CIFAR_RECORD_BYTES), np.uint8)
    labels = stacked[:, 0].astype(np.int64)
    pixels = stacked[:, 1:].reshape(-1, *CIFAR_SHAPE).astype(np.float64) / 255.0
    num_classes = int(labels.max()) + 1 if len(labels) else 10
    return Dataset(pixels=pixels, labels=labels, num_classes=num_classes,
                   split=split, name=name)


def write_cifar_binary(dataset: Dataset, path) -> None:
    if dataset.pixels.shape[1:] != CIFAR_SHAPE:
        raise ConfigurationError(f"CIFAR binary stores {CIFAR_SHAPE} images")
    if dataset.labels is None:
        raise ConfigurationError("CIFAR export needs labels")
    quantized = np.round(dataset.pixels * 255.0).astype(np.uint8).reshape(len(dataset), -1)
    with open(path, "wb") as fh:
        for label, flat in zip(dataset.labels, quantized):
            fh.write(bytes([int(label)]))
            fh.write(flat.tobytes())


def class_texture(class_id: int, num_classes: int, image_size: int,
                  row_shift: float = 0.0) -> np.ndarray:
    """Smooth texture for one class: a tinted full-period row profile.

    The texture depends only on the row, so the left and right halves of a
    normal example are identical, and class phases/tints are spread so that
    any two classes' textures point in clearly different pixel directions.
    `row_shift` rotates the profile cyclically (in rows); both halves of a
    hard example share one shift, which preserves their relative phase.
    """
    rows = np.arange(image_size) - row_shift
    phase = 2.0 * np.pi * class_id / num_classes
    profile = 0.05 + 0.9 * (0.5 + 0.5 * np.cos(2.0 * np.pi * rows / image_size - phase))
    tint = _TINTS[class_id % len(_TINTS)]
    texture = tint[:, None, None] * profile[None, :, None]
    return np.broadcast_to(texture, (3, image_size, image_size)).copy()


def make_synthetic(spec: SyntheticSpec) -> tuple[Dataset, SyntheticSpec]:
    """Dataset plus the spec with ground-truth hard indices filled in.

    Normal examples carry one class texture everywhere. Hard examples carry
    two different class textures split at a boundary near (but not always
    at) the vertical midline; the label follows the wider side, ties going
    left. Per-example noise amplitude varies so that normal examples also
    spread out along the difficulty axis.
    """
    size = spec.image_size
    rng = keyed_stream(spec.seed, 0xD5)
    n_hard = int(round(spec.hard_fraction * spec.n))
    hard = np.sort(rng.permutation(spec.n)[:n_hard])
    hard_mask = np.zeros(spec.n, dtype=bool)
    hard_mask[hard] = True

    textures = np.stack([class_texture(c, spec.num_classes, size)
                         for c in range(spec.num_classes)])
    offset = spec.boundary_offset

    pixels = np.empty((spec.n, 3, size, size), dtype=np.float64)
    labels = np.empty(spec.n, dtype=np.int64)
    for k in range(spec.n):
        ex_rng = keyed_stream(spec.seed, 0xE7, k)
        left_class = int(ex_rng.integers(spec.num_classes))
        image = textures[left_class].copy()
        label = left_class
        if hard_mask[k]:
            other = int(ex_rng.integers(spec.num_classes - 1))
            other = other + 1 if other >= left_class else other
            boundary = int(ex_rng.integers(size // 2 - offset, size // 2 + offset + 1))
            shift = ex_rng.uniform(-0.25, 0.25) * size
            image = class_texture(left_class, spec.num_classes, size, shift)
            image[:, :, boundary:] = class_texture(other, spec.num_classes, size,
                                                   shift)[:, :, boundary:]
            label = left_class if boundary >= size - boundary else other
        noise_scale = ex_rng.uniform(*_NOISE_RANGE)
        image += ex_rng.normal(0.0, noise_scale, size=image.shape)
        pixels[k] = np.clip(image, 0.0, 1.0)
        labels[k] = label

    dataset = Dataset(pixels=pixels, labels=labels, num_classes=spec.num_classes,
                      split="train", name=f"synthetic-{spec.seed}")
    return dataset, replace(spec, hard_indices=tuple(int(i) for i in hard))


def channel_stats(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over every pixel of the split."""
    mean = dataset.pixels.mean(axis=(0, 2, 3))
    std = dataset.pixels.std(axis=(0, 2, 3))
    return mean, std


def normalize(dataset: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    """x <- (x - mean) / std channel-wise; stats come from the training split."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    channels = dataset.pixels.shape[1]
    if mean.shape != (channels,) or std.shape != (channels,):
        raise ConfigurationError(f"need one mean/std per channel ({channels})")
    if np.any(std <= 0.0):
        raise ConfigurationError("per-channel std must be positive (constant channel?)")
    pixels = (dataset.pixels - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(dataset, pixels=pixels)
