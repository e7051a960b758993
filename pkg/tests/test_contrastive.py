import math

import numpy as np
import pytest

from coreselect.contrastive import (
    NegativeQueue,
    cossim,
    moco_loss,
    ntxent_loss,
    queue_push,
)
from coreselect.errors import ConfigurationError, NumericError, StateError
from coreselect.rng import keyed_stream


def unit_rows(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def random_unit(seed, shape):
    return unit_rows(keyed_stream(seed).normal(size=shape))


# --- cossim -----------------------------------------------------------------

def test_cossim_self_is_one():
    v = np.array([0.3, -1.2, 2.0])
    assert cossim(v, v) == pytest.approx(1.0)


def test_cossim_antipodal_is_minus_one():
    v = np.array([0.5, 2.0])
    assert cossim(v, -v) == pytest.approx(-1.0)


def test_cossim_orthogonal_is_zero():
    assert cossim(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cossim_zero_vector_rejected():
    with pytest.raises(NumericError):
        cossim(np.zeros(3), np.array([1.0, 0.0, 0.0]))


# --- NT-Xent ----------------------------------------------------------------

def brute_force_ntxent(z, tau):
    """Term-by-term softmax oracle straight from the loss definition."""
    two_b = len(z)
    b = two_b // 2
    total = 0.0
    for i in range(two_b):
        p = (i + b) % two_b
        denom = sum(math.exp(float(z[i] @ z[k]) / tau) for k in range(two_b) if k != i)
        total += -math.log(math.exp(float(z[i] @ z[p]) / tau) / denom)
    return total / two_b


def test_ntxent_matches_brute_force_softmax():
    z = unit_rows([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0], [-0.6, 0.8]])
    result = ntxent_loss(z, temperature=1.0)
    assert result.loss == pytest.approx(brute_force_ntxent(z, 1.0), abs=1e-9)
    for tau in (0.1, 0.5, 2.0):
        assert ntxent_loss(z, tau).loss == pytest.approx(brute_force_ntxent(z, tau), abs=1e-9)


def test_ntxent_identical_projections_closed_form():
    for b in (2, 3, 5):
        z = np.tile(unit_rows([[0.6, 0.8]]), (2 * b, 1))
        result = ntxent_loss(z, temperature=0.7)
        assert result.loss == pytest.approx(math.log(2 * b - 1), abs=1e-12)


def test_ntxent_rejects_single_pair():
    z = unit_rows([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigurationError):
        ntxent_loss(z, temperature=0.5)


def test_ntxent_rejects_bad_temperature():
    z = random_unit(0, (4, 3))
    with pytest.raises(ConfigurationError):
        ntxent_loss(z, temperature=0.0)


def test_pair_cossims_are_raw_and_temperature_invariant():
    z = random_unit(1, (8, 5))
    low = ntxent_loss(z, temperature=0.1)
    high = ntxent_loss(z, temperature=1.0)
    assert [c for _, c in low.pair_cossims] == [c for _, c in high.pair_cossims]
    b = 4
    for k, value in low.pair_cossims:
        assert value == pytest.approx(float(z[k] @ z[k + b]), abs=1e-12)


def test_pair_cossims_carry_example_indices():
    z = random_unit(2, (6, 4))
    indices = np.array([10, 20, 30])
    result = ntxent_loss(z, 0.5, example_indices=indices)
    assert [k for k, _ in result.pair_cossims] == [10, 20, 30]


def test_ntxent_permutation_symmetry():
    b = 5
    z = random_unit(3, (2 * b, 6))
    base = ntxent_loss(z, 0.5)
    perm = keyed_stream(4).permutation(b)
    z_perm = np.concatenate([z[:b][perm], z[b:][perm]])
    permuted = ntxent_loss(z_perm, 0.5)
    assert permuted.loss == pytest.approx(base.loss, abs=1e-12)
    base_values = np.array([c for _, c in base.pair_cossims])
    permuted_values = np.array([c for _, c in permuted.pair_cossims])
    assert np.allclose(permuted_values, base_values[perm], atol=1e-12)


def test_ntxent_gradient_matches_finite_differences():
    z = random_unit(5, (6, 4))
    tau = 0.5
    result = ntxent_loss(z, tau)
    eps = 1e-6
    for i, j in [(0, 0), (1, 2), (3, 3), (5, 1), (4, 0), (2, 1)]:
        plus = z.copy()
        plus[i, j] += eps
        minus = z.copy()
        minus[i, j] -= eps
        numeric = (ntxent_loss(plus, tau).loss - ntxent_loss(minus, tau).loss) / (2 * eps)
        assert numeric == pytest.approx(result.grad_on_projections[i, j], rel=1e-3, abs=1e-6)


def test_ntxent_loss_decreases_on_separable_batch():
    # two clusters slightly perturbed; gradient steps on the projections
    # themselves should pull positives together and push the loss down
    rng = keyed_stream(6)
    base = unit_rows(rng.normal(size=(4, 8)))
    z = np.concatenate([base + 0.05 * rng.normal(size=base.shape)] * 2)
    z = unit_rows(z)
    first = ntxent_loss(z, 0.5)
    loss_trace = [first.loss]
    current = z.copy()
    for _ in range(50):
        result = ntxent_loss(current, 0.5)
        current = unit_rows(current - 2.0 * result.grad_on_projections)
        loss_trace.append(result.loss)
    assert all(np.isfinite(loss_trace))
    assert loss_trace[-1] < loss_trace[0]


# --- negative queue ----------------------------------------------------------

def test_queue_ring_semantics():
    queue = NegativeQueue(capacity=4, dim=2)
    keys = unit_rows([[1, 0], [0, 1], [-1, 0], [0, -1], [0.6, 0.8], [0.8, 0.6]])
    for row in keys:
        queue_push(queue, row[None, :])
    held = queue.entries()
    assert len(queue) == 4
    assert np.allclose(held, keys[2:])  # keys 3..6 in FIFO order


def test_queue_newest_key_present_immediately():
    queue = NegativeQueue(capacity=3, dim=2)
    queue_push(queue, np.array([[0.0, 1.0]]))
    assert np.array_equal(queue.entries()[-1], [0.0, 1.0])


def test_queue_size_tracks_pushes_below_capacity():
    queue = NegativeQueue(capacity=8, dim=2)
    queue_push(queue, random_unit(7, (3, 2)))
    assert len(queue) == 3
    queue_push(queue, random_unit(8, (2, 2)))
    assert len(queue) == 5


# --- MoCo loss ---------------------------------------------------------------

def test_moco_closed_form_orthogonal_queue():
    d = 6
    q = np.eye(d)[:2]
    k = q.copy()
    queue = NegativeQueue(capacity=3, dim=d)
    queue_push(queue, np.eye(d)[3:6])  # orthogonal to both queries
    tau = 0.2
    result = moco_loss(q, k, queue, tau)
    expected = -math.log(math.exp(1 / tau) / (math.exp(1 / tau) + 3))
    assert result.loss == pytest.approx(expected, abs=1e-12)


def test_moco_uniform_two_way_softmax():
    v = unit_rows([[0.6, 0.8]])
    queue = NegativeQueue(capacity=1, dim=2)
    queue_push(queue, v)
    result = moco_loss(v, v, queue, temperature=1.0)
    assert result.loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_moco_empty_queue_rejected():
    queue = NegativeQueue(capacity=4, dim=3)
    q = random_unit(9, (2, 3))
    with pytest.raises(StateError):
        moco_loss(q, q, queue, 0.2)


def test_moco_gradient_matches_finite_differences():
    q = random_unit(10, (3, 4))
    k = random_unit(11, (3, 4))
    queue = NegativeQueue(capacity=5, dim=4)
    queue_push(queue, random_unit(12, (5, 4)))
    tau = 0.2
    result = moco_loss(q, k, queue, tau)
    eps = 1e-6
    for i, j in [(0, 0), (1, 3), (2, 2), (0, 1)]:
        plus = q.copy()
        plus[i, j] += eps
        minus = q.copy()
        minus[i, j] -= eps
        numeric = (moco_loss(plus, k, queue, tau).loss
                   - moco_loss(minus, k, queue, tau).loss) / (2 * eps)
        assert numeric == pytest.approx(result.grad_on_projections[i, j], rel=1e-3, abs=1e-6)


def test_moco_pair_cossims_raw_and_temperature_invariant():
    q = random_unit(13, (4, 3))
    k = random_unit(14, (4, 3))
    queue = NegativeQueue(capacity=2, dim=3)
    queue_push(queue, random_unit(15, (2, 3)))
    low = moco_loss(q, k, queue, 0.1)
    high = moco_loss(q, k, queue, 1.0)
    assert [c for _, c in low.pair_cossims] == [c for _, c in high.pair_cossims]
    for i, (_, value) in enumerate(low.pair_cossims):
        assert value == pytest.approx(float(q[i] @ k[i]), abs=1e-12)
