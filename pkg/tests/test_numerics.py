import numpy as np
import pytest

from coreselect.errors import ConfigurationError, FormatError, NumericError
from coreselect.numerics import (
    EncoderDims,
    EncoderParams,
    backward,
    forward,
    init_encoder,
    init_optimizer,
    learning_rate,
    load_params,
    momentum_update,
    normalize_rows,
    save_params,
    sgd_step,
)
from coreselect.rng import keyed_stream

SMALL = EncoderDims(input_dim=6, hidden_dim=5, feature_dim=4, projection_dim=3)


def make_params(dims=SMALL, seed=7):
    return init_encoder(dims, keyed_stream(seed))


def reference_forward(params, batch):
    """Straight-line reimplementation with explicit loops (the oracle)."""
    layers = params.layers
    out_feat = np.zeros((len(batch), params.dims.feature_dim))
    out_proj = np.zeros((len(batch), params.dims.projection_dim))
    for r, x in enumerate(batch):
        h = np.zeros(params.dims.hidden_dim)
        w, b = layers[0]
        for j in range(len(h)):
            h[j] = max(0.0, sum(x[i] * w[i, j] for i in range(len(x))) + b[j])
        f = np.zeros(params.dims.feature_dim)
        w, b = layers[1]
        for j in range(len(f)):
            f[j] = sum(h[i] * w[i, j] for i in range(len(h))) + b[j]
        p1 = np.zeros(params.dims.feature_dim)
        w, b = layers[2]
        for j in range(len(p1)):
            p1[j] = max(0.0, sum(f[i] * w[i, j] for i in range(len(f))) + b[j])
        p2 = np.zeros(params.dims.projection_dim)
        w, b = layers[3]
        for j in range(len(p2)):
            p2[j] = sum(p1[i] * w[i, j] for i in range(len(p1))) + b[j]
        norm = np.sqrt(sum(v * v for v in p2))
        out_feat[r] = f
        out_proj[r] = p2 / norm if norm >= 1e-12 else np.eye(len(p2))[0]
    return out_feat, out_proj


def test_forward_zero_params_yields_zero_features_and_basis_projection():
    params = EncoderParams(dims=SMALL, flat=np.zeros(SMALL.param_count()))
    batch = keyed_stream(1).uniform(size=(3, SMALL.input_dim))
    features, projections = forward(params, batch)
    assert np.all(features == 0.0)
    # zero pre-normalization vectors map to the first basis vector
    expected = np.zeros((3, SMALL.projection_dim))
    expected[:, 0] = 1.0
    assert np.array_equal(projections, expected)


def test_forward_identity_one_dim_network():
    dims = EncoderDims(input_dim=1, hidden_dim=1, feature_dim=1, projection_dim=1)
    flat = np.zeros(dims.param_count())
    params = EncoderParams(dims=dims, flat=flat)
    for w, _ in params.layers:
        w[...] = 1.0
    features, projections = forward(params, np.array([[1.0]]))
    assert features[0, 0] == 1.0
    assert projections[0, 0] == 1.0


def test_forward_matches_straight_line_oracle():
    params = make_params(seed=7)
    batch = keyed_stream(7, 1).uniform(-1.0, 1.0, size=(4, SMALL.input_dim))
    features, projections = forward(params, batch)
    ref_feat, ref_proj = reference_forward(params, batch)
    assert np.allclose(features, ref_feat, atol=1e-6)
    assert np.allclose(projections, ref_proj, atol=1e-6)


def test_forward_rejects_dim_mismatch():
    params = make_params()
    with pytest.raises(ConfigurationError):
        forward(params, np.zeros((2, SMALL.input_dim + 1)))


def test_projection_rows_unit_norm():
    params = make_params(seed=11)
    batch = keyed_stream(12).normal(size=(8, SMALL.input_dim))
    _, projections = forward(params, batch)
    assert np.allclose(np.linalg.norm(projections, axis=1), 1.0, atol=1e-6)


def test_forward_deterministic():
    params = make_params(seed=3)
    batch = keyed_stream(4).normal(size=(5, SMALL.input_dim))
    f1, p1 = forward(params, batch)
    f2, p2 = forward(params, batch)
    assert np.array_equal(f1, f2) and np.array_equal(p1, p2)


def test_backward_zero_upstream_gradient_is_zero():
    params = make_params()
    batch = keyed_stream(5).normal(size=(3, SMALL.input_dim))
    grads = backward(params, batch, np.zeros((3, SMALL.projection_dim)))
    assert np.all(grads == 0.0)


def test_backward_is_linear_in_upstream_gradient():
    params = make_params()
    batch = keyed_stream(6).normal(size=(3, SMALL.input_dim))
    upstream = keyed_stream(8).normal(size=(3, SMALL.projection_dim))
    g1 = backward(params, batch, upstream)
    g2 = backward(params, batch, 2.0 * upstream)
    assert np.allclose(g2, 2.0 * g1, rtol=1e-12)


def test_backward_rejects_nonfinite_upstream():
    params = make_params()
    batch = keyed_stream(6).normal(size=(2, SMALL.input_dim))
    bad = np.full((2, SMALL.projection_dim), np.nan)
    with pytest.raises(NumericError):
        backward(params, batch, bad)


def central_difference_check(params, batch, loss_fn, grad, coords, eps=1e-4):
    """Relative error of analytic vs central-difference gradient per coordinate."""
    worst = 0.0
    for i in coords:
        flat_plus = params.flat.copy()
        flat_plus[i] += eps
        flat_minus = params.flat.copy()
        flat_minus[i] -= eps
        lp = loss_fn(params.with_flat(flat_plus), batch)
        lm = loss_fn(params.with_flat(flat_minus), batch)
        numeric = (lp - lm) / (2 * eps)
        denom = max(abs(numeric), abs(grad[i]), 1e-6)
        worst = max(worst, abs(numeric - grad[i]) / denom)
    return worst


def test_backward_matches_finite_differences():
    params = make_params(seed=21)
    batch = keyed_stream(22).normal(size=(4, SMALL.input_dim))
    target = keyed_stream(23).normal(size=(4, SMALL.projection_dim))

    def loss_fn(p, x):
        _, z = forward(p, x)
        return 0.5 * float(((z - target) ** 2).sum())

    _, z = forward(params, batch)
    grad = backward(params, batch, z - target)
    coords = keyed_stream(24).permutation(params.dims.param_count())[:80]
    assert central_difference_check(params, batch, loss_fn, grad, coords) <= 1e-3


def test_sgd_step_closed_form():
    flat = np.zeros(2)
    state = init_optimizer(2, base_lr=0.1, momentum=0.0, total_epochs=10)
    updated, state = sgd_step(flat, np.array([1.0, 1.0]), state, epoch=0)
    # lr(0) = 0.1 * 0.5 * (1 + cos 0) = 0.1
    assert np.allclose(updated, [-0.1, -0.1])


def test_sgd_schedule_endpoint_freezes_parameters():
    total = 10_000
    state = init_optimizer(2, base_lr=0.5, momentum=0.0, total_epochs=total)
    flat = np.ones(2)
    updated, _ = sgd_step(flat, np.array([1.0, 1.0]), state, epoch=total - 1)
    assert np.allclose(updated, flat, atol=1e-6)
    assert learning_rate(state, total - 1) < 1e-7


def test_sgd_rejects_epoch_past_schedule():
    state = init_optimizer(1, base_lr=0.1, momentum=0.0, total_epochs=3)
    with pytest.raises(ConfigurationError):
        sgd_step(np.zeros(1), np.zeros(1), state, epoch=3)


def test_sgd_quadratic_bowl_decreases_monotonically_after_step_two():
    # objective 0.5*||theta||^2; gradient == theta
    flat = np.array([1.0, -2.0])
    state = init_optimizer(2, base_lr=0.1, momentum=0.5, total_epochs=100)
    values = [0.5 * float(flat @ flat)]
    # scalar simulation oracle: identical recurrence in plain python
    sim = list(flat)
    sim_vel = [0.0, 0.0]
    for step in range(10):
        flat, state = sgd_step(flat, flat.copy(), state, epoch=step)
        lr = 0.1 * 0.5 * (1 + np.cos(np.pi * step / 100))
        for j in range(2):
            sim_vel[j] = 0.5 * sim_vel[j] + sim[j]
            sim[j] = sim[j] - lr * sim_vel[j]
        assert np.allclose(flat, sim, rtol=1e-12)
        values.append(0.5 * float(flat @ flat))
    assert all(b < a for a, b in zip(values[2:], values[3:]))


def test_momentum_update_zero_copies_query():
    key = make_params(seed=1)
    query = make_params(seed=2)
    updated = momentum_update(key, query, 0.0)
    assert np.array_equal(updated.flat, query.flat)


def test_momentum_update_near_one_freezes_key():
    key = make_params(seed=1)
    query = make_params(seed=2)
    updated = momentum_update(key, query, 1.0 - 1e-12)
    assert np.allclose(updated.flat, key.flat, atol=1e-9)


def test_momentum_update_midpoint():
    dims = EncoderDims(1, 1, 1, 1)
    key = EncoderParams(dims=dims, flat=np.full(dims.param_count(), 2.0))
    query = EncoderParams(dims=dims, flat=np.zeros(dims.param_count()))
    updated = momentum_update(key, query, 0.5)
    assert np.all(updated.flat == 1.0)


def test_momentum_update_exact_contraction():
    key = make_params(seed=5)
    query = make_params(seed=6)
    m = 0.73
    updated = momentum_update(key, query, m)
    # the applied step is exactly m*(key - query); reading it back through
    # the final addition can round by at most one ulp of the query value
    lhs = np.abs(updated.flat - query.flat)
    rhs = np.abs(m * (key.flat - query.flat))
    assert np.allclose(lhs, rhs, rtol=0.0, atol=np.spacing(np.abs(query.flat)).max())
    # for dyadic m and values the identity is bitwise
    dyadic_key = key.with_flat(np.round(key.flat * 16) / 16)
    dyadic_query = query.with_flat(np.round(query.flat * 16) / 16)
    exact = momentum_update(dyadic_key, dyadic_query, 0.5)
    assert np.array_equal(np.abs(exact.flat - dyadic_query.flat),
                          np.abs(0.5 * (dyadic_key.flat - dyadic_query.flat)))


def test_momentum_update_rejects_dim_mismatch():
    key = make_params(dims=SMALL)
    query = make_params(dims=EncoderDims(input_dim=7, hidden_dim=5,
                                         feature_dim=4, projection_dim=3))
    with pytest.raises(ConfigurationError):
        momentum_update(key, query, 0.5)


def test_normalize_rows_degenerate_row_maps_to_basis():
    p = np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]])
    z = normalize_rows(p)
    assert np.array_equal(z[0], [1.0, 0.0, 0.0])
    assert np.allclose(z[1], [0.6, 0.8, 0.0])


def test_checkpoint_roundtrip(tmp_path):
    params = make_params(seed=9)
    path = tmp_path / "params.csel"
    save_params(params, path)
    loaded = load_params(path)
    assert loaded.dims == params.dims
    assert np.array_equal(loaded.flat, params.flat)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.csel"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(FormatError):
        load_params(path)


def test_checkpoint_truncated_payload(tmp_path):
    params = make_params(seed=9)
    path = tmp_path / "params.csel"
    save_params(params, path)
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(FormatError):
        load_params(path)
