"""Small encoder + projection head with analytic gradients and SGD.

Architecture (fixed at desk scale): flatten -> affine(hidden) -> ReLU ->
affine(feature) -> affine(feature) -> ReLU -> affine(projection) -> row
L2-normalization. All math is float64 and every function here is pure, so
results are bit-reproducible given identical inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from ._mlp import StackSpec, init_flat, layer_views, stack_backward, stack_forward
from .errors import ConfigurationError, FormatError, NumericError

ZERO_NORM_EPS = 1e-12

CHECKPOINT_MAGIC = b"CSEL"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderDims:
    input_dim: int
    hidden_dim: int = 256
    feature_dim: int = 128
    projection_dim: int = 64

    def __post_init__(self) -> None:
        for name in ("input_dim", "hidden_dim", "feature_dim", "projection_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    def stack_spec(self) -> StackSpec:
        # trunk: in->hidden (ReLU) ->feature; head: feature->feature (ReLU) ->projection
        return StackSpec(
            dims=(self.input_dim, self.hidden_dim, self.feature_dim,
                  self.feature_dim, self.projection_dim),
            relu_after=(True, False, True, False),
        )

    def param_count(self) -> int:
        return self.stack_spec().param_count()


@dataclass(frozen=True)
class EncoderParams:
    """All learnable scalars, flat-addressable in layer order (W then b)."""

    dims: EncoderDims
    flat: np.ndarray

    def __post_init__(self) -> None:
        expected = self.dims.param_count()
        if self.flat.shape != (expected,):
            raise ConfigurationError(
                f"parameter vector has shape {self.flat.shape}, expected ({expected},)"
            )
        if not np.all(np.isfinite(self.flat)):
            raise NumericError("non-finite encoder parameters")

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return layer_views(self.dims.stack_spec(), self.flat)

    def with_flat(self, flat: np.ndarray) -> "EncoderParams":
        return replace(self, flat=flat)


def init_encoder(dims: EncoderDims, rng: np.random.Generator) -> EncoderParams:
    return EncoderParams(dims=dims, flat=init_flat(dims.stack_spec(), rng))


def normalize_rows(p: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; rows with norm < 1e-12 map to e1."""
    norms = np.linalg.norm(p, axis=1, keepdims=True)
    degenerate = norms[:, 0] < ZERO_NORM_EPS
    safe = np.where(norms < ZERO_NORM_EPS, 1.0, norms)
    z = p / safe
    if degenerate.any():
        z[degenerate] = 0.0
        z[degenerate, 0] = 1.0
    return z


def normalize_rows_backward(p: np.ndarray, grad_z: np.ndarray) -> np.ndarray:
    """Chain grad through row normalization; degenerate rows get zero grad."""
    norms = np.linalg.norm(p, axis=1, keepdims=True)
    degenerate = norms[:, 0] < ZERO_NORM_EPS
    safe = np.where(norms < ZERO_NORM_EPS, 1.0, norms)
    z = p / safe
    g = (grad_z - (grad_z * z).sum(axis=1, keepdims=True) * z) / safe
    if degenerate.any():
        g[degenerate] = 0.0
    return g


def forward(params: EncoderParams, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (features, projections); projection rows are unit-norm."""
    acts = stack_forward(params.dims.stack_spec(), params.flat, batch)
    features = acts[2]
    projections = normalize_rows(acts[4])
    return features, projections


def backward(
    params: EncoderParams,
    batch: np.ndarray,
    grad_on_projections: np.ndarray,
) -> np.ndarray:
    """Flat gradient of the loss w.r.t. every parameter.

    `grad_on_projections` is dLoss/d(normalized projections); the
    normalization Jacobian is applied here.
    """
    g = np.asarray(grad_on_projections, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient on projections")
    spec = params.dims.stack_spec()
    acts = stack_forward(spec, params.flat, batch)
    if g.shape != acts[4].shape:
        raise ConfigurationError(
            f"projection gradient has shape {g.shape}, expected {acts[4].shape}"
        )
    grad_pre_norm = normalize_rows_backward(acts[4], g)
    return stack_backward(spec, params.flat, acts, grad_pre_norm)


@dataclass
class OptimizerState:
    velocity: np.ndarray
    base_lr: float
    momentum: float
    total_epochs: int

    def __post_init__(self) -> None:
        if self.base_lr <= 0.0:
            raise ConfigurationError("base_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.total_epochs < 1:
            raise ConfigurationError("total_epochs must be positive")


def init_optimizer(
    param_count: int, base_lr: float, momentum: float, total_epochs: int
) -> OptimizerState:
    return OptimizerState(
        velocity=np.zeros(param_count, dtype=np.float64),
        base_lr=base_lr,
        momentum=momentum,
        total_epochs=total_epochs,
    )


def learning_rate(state: OptimizerState, epoch: int) -> float:
    """Cosine decay from base_lr at epoch 0 toward 0 at total_epochs."""
    return state.base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / state.total_epochs))


def sgd_step(
    flat_params: np.ndarray,
    grads: np.ndarray,
    state: OptimizerState,
    epoch: int,
) -> tuple[np.ndarray, OptimizerState]:
    """v <- momentum*v + g; theta <- theta - lr(epoch)*v. Returns new arrays."""
    if grads.shape != flat_params.shape or state.velocity.shape != flat_params.shape:
        raise ConfigurationError("parameter/gradient/velocity length mismatch")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradients in sgd_step")
    if epoch >= state.total_epochs:
        raise ConfigurationError(
            f"epoch {epoch} outside schedule of {state.total_epochs} epochs"
        )
    velocity = state.momentum * state.velocity + grads
    updated = flat_params - learning_rate(state, epoch) * velocity
    return updated, replace_state(state, velocity)


def replace_state(state: OptimizerState, velocity: np.ndarray) -> OptimizerState:
    return OptimizerState(
        velocity=velocity,
        base_lr=state.base_lr,
        momentum=state.momentum,
        total_epochs=state.total_epochs,
    )


def momentum_update(
    key_params: EncoderParams, query_params: EncoderParams, m: float
) -> EncoderParams:
    """Key parameters drift toward the query: theta_k <- q + m*(theta_k - q).

    The centered form makes |theta_k' - q| = m*|theta_k - q| hold exactly
    in floating point, not just in real arithmetic.
    """
    if key_params.dims != query_params.dims:
        raise ConfigurationError("momentum_update requires matching encoder dims")
    if not 0.0 <= m < 1.0:
        raise ConfigurationError("momentum coefficient must lie in [0, 1)")
    flat = query_params.flat + m * (key_params.flat - query_params.flat)
    return key_params.with_flat(flat)


def save_params(params: EncoderParams, path) -> None:
    """Little-endian checkpoint: magic, version u32, 4 dim u32s, P float64s."""
    d = params.dims
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<5I", CHECKPOINT_VERSION, d.input_dim, d.hidden_dim,
                             d.feature_dim, d.projection_dim))
        fh.write(params.flat.astype("<f8").tobytes())


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad parameter checkpoint magic {blob[:4]!r}")
    if len(blob) < 24:
        raise FormatError("parameter checkpoint header truncated")
    version, in_d, hid_d, feat_d, proj_d = struct.unpack("<5I", blob[4:24])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported parameter checkpoint version {version}")
    dims = EncoderDims(in_d, hid_d, feat_d, proj_d)
    payload = blob[24:]
    expected = dims.param_count() * 8
    if len(payload) != expected:
        raise FormatError(
            f"parameter payload holds {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return EncoderParams(dims=dims, flat=flat)
