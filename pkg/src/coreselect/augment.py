"""Seeded stochastic augmentation producing the two views of a positive pair.

Per view, in order: random resized crop, horizontal flip, per-channel
brightness/contrast jitter, grayscale. Every random draw comes from a
counter-based stream keyed by (seed, epoch, example_index, view_id), so a
view is a pure function of the example, the config, and that key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .rng import keyed_stream

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
ASPECT_RANGE = (3.0 / 4.0, 4.0 / 3.0)
CROP_ATTEMPTS = 10


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale_range: tuple[float, float] = (0.2, 1.0)
    flip_prob: float = 0.5
    jitter_strength: float = 0.4
    grayscale_prob: float = 0.2
    output_size: tuple[int, int] = (16, 16)

    def __post_init__(self) -> None:
        lo, hi = self.crop_scale_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigurationError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got {self.crop_scale_range}")
        for name in ("flip_prob", "grayscale_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        if self.jitter_strength < 0.0:
            raise ConfigurationError("jitter_strength must be nonnegative")
        if min(self.output_size) < 1:
            raise ConfigurationError("output_size must be positive")


@dataclass(frozen=True)
class ViewPair:
    view_a: np.ndarray
    view_b: np.ndarray
    example_index: int


def _sample_crop(rng: np.random.Generator, height: int, width: int,
                 scale: tuple[float, float]) -> tuple[int, int, int, int]:
    """(top, left, crop_h, crop_w); the window never degenerates below 1x1."""
    area = height * width
    log_lo, log_hi = math.log(ASPECT_RANGE[0]), math.log(ASPECT_RANGE[1])
    for _ in range(CROP_ATTEMPTS):
        target_area = rng.uniform(scale[0], scale[1]) * area
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        crop_w = max(1, int(round(math.sqrt(target_area * ratio))))
        crop_h = max(1, int(round(math.sqrt(target_area / ratio))))
        if crop_w <= width and crop_h <= height:
            top = int(rng.integers(0, height - crop_h + 1))
            left = int(rng.integers(0, width - crop_w + 1))
            return top, left, crop_h, crop_w
    # fallback: clamp the aspect ratio and center the window
    in_ratio = width / height
    if in_ratio < ASPECT_RANGE[0]:
        crop_w = width
        crop_h = min(height, max(1, int(round(crop_w / ASPECT_RANGE[0]))))
    elif in_ratio > ASPECT_RANGE[1]:
        crop_h = height
        crop_w = min(width, max(1, int(round(crop_h * ASPECT_RANGE[1]))))
    else:
        crop_h, crop_w = height, width
    return (height - crop_h) // 2, (width - crop_w) // 2, crop_h, crop_w


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of a CxHxW image (no antialiasing)."""
    _, in_h, in_w = image.shape
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()

    def axis_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.clip(np.floor(src).astype(np.int64), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(src - lo, 0.0, 1.0)
        return lo, hi, frac

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)
    top = image[:, y0][:, :, x0] * (1 - fx) + image[:, y0][:, :, x1] * fx
    bot = image[:, y1][:, :, x0] * (1 - fx) + image[:, y1][:, :, x1] * fx
    fy = fy[None, :, None]
    return top * (1 - fy) + bot * fy


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1].copy()


def render_view(pixels: np.ndarray, cfg: AugmentConfig,
                rng_key: tuple[int, int, int, int]) -> np.ndarray:
    """One augmented view of a CxHxW image in [0,1], fully determined by rng_key.

    Draws happen in a fixed order regardless of probabilities so that two
    configs differing in one stage see identical randomness elsewhere.
    """
    rng = keyed_stream(*rng_key)
    channels, height, width = pixels.shape
    out_h, out_w = cfg.output_size

    top, left, crop_h, crop_w = _sample_crop(rng, height, width, cfg.crop_scale_range)
    view = resize_bilinear(pixels[:, top : top + crop_h, left : left + crop_w], out_h, out_w)

    if rng.uniform() < cfg.flip_prob:
        view = hflip(view)

    s = cfg.jitter_strength
    brightness = rng.uniform(1.0 - s, 1.0 + s, size=channels)
    contrast = rng.uniform(1.0 - s, 1.0 + s, size=channels)
    if s > 0.0:
        view = view * brightness[:, None, None]
        means = view.mean(axis=(1, 2), keepdims=True)
        view = (view - means) * contrast[:, None, None] + means

    if rng.uniform() < cfg.grayscale_prob and channels == 3:
        luma = np.tensordot(LUMA_WEIGHTS, view, axes=(0, 0))
        view = np.repeat(luma[None, :, :], channels, axis=0)

    return np.clip(view, 0.0, 1.0)


def make_views(pixels: np.ndarray, example_index: int, cfg: AugmentConfig,
               seed: int, epoch: int) -> ViewPair:
    """The positive pair for one example: two independently augmented views."""
    if pixels.ndim != 3:
        raise ConfigurationError(f"expected CxHxW pixels, got shape {pixels.shape}")
    return ViewPair(
        view_a=render_view(pixels, cfg, (seed, epoch, example_index, 0)),
        view_b=render_view(pixels, cfg, (seed, epoch, example_index, 1)),
        example_index=example_index,
    )
