"""Shared affine-stack machinery for the encoder and the downstream classifier.

A stack is a sequence of affine layers, each optionally followed by ReLU.
All learnable scalars live in one flat float64 vector; per-layer weight and
bias arrays are views into it, laid out layer by layer as W (row-major) then b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError


@dataclass(frozen=True)
class StackSpec:
    """Architecture of an affine stack: layer i maps dims[i] -> dims[i+1]."""

    dims: tuple[int, ...]
    relu_after: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.dims) < 2:
            raise ConfigurationError("stack needs at least one layer")
        if len(self.relu_after) != self.num_layers:
            raise ConfigurationError("relu_after must have one flag per layer")
        if any(d < 1 for d in self.dims):
            raise ConfigurationError(f"layer dims must be positive, got {self.dims}")

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def param_count(self) -> int:
        return sum(i * o + o for i, o in zip(self.dims[:-1], self.dims[1:]))


def layer_views(spec: StackSpec, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(W, b) views into the flat parameter vector, in flat-address order."""
    if flat.shape != (spec.param_count(),):
        raise ConfigurationError(
            f"flat parameter vector has length {flat.shape}, expected ({spec.param_count()},)"
        )
    out = []
    offset = 0
    for fan_in, fan_out in zip(spec.dims[:-1], spec.dims[1:]):
        w = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat[offset : offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


def init_flat(spec: StackSpec, rng: np.random.Generator) -> np.ndarray:
    """He-style initialization; biases start at zero."""
    flat = np.zeros(spec.param_count(), dtype=np.float64)
    for w, _ in layer_views(spec, flat):
        fan_in = w.shape[0]
        w[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w.shape)
    return flat


def stack_forward(spec: StackSpec, flat: np.ndarray, x: np.ndarray) -> list[np.ndarray]:
    """Post-activation outputs per layer; index 0 is the input itself."""
    if x.ndim != 2 or x.shape[1] != spec.dims[0]:
        raise ConfigurationError(
            f"input has shape {x.shape}, expected (batch, {spec.dims[0]})"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in stack input")
    acts = [np.asarray(x, dtype=np.float64)]
    for (w, b), relu in zip(layer_views(spec, flat), spec.relu_after):
        h = acts[-1] @ w + b
        if relu:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def stack_backward(
    spec: StackSpec,
    flat: np.ndarray,
    acts: list[np.ndarray],
    grad_out: np.ndarray,
) -> np.ndarray:
    """Flat parameter gradient given the gradient on the final activation."""
    views = layer_views(spec, flat)
    grads = np.zeros_like(flat)
    grad_views = layer_views(spec, grads)
    g = np.asarray(grad_out, dtype=np.float64)
    for i in range(spec.num_layers - 1, -1, -1):
        w, _ = views[i]
        gw, gb = grad_views[i]
        if spec.relu_after[i]:
            g = g * (acts[i + 1] > 0.0)
        gw[...] = acts[i].T @ g
        gb[...] = g.sum(axis=0)
        if i > 0:
            g = g @ w.T
    return grads
