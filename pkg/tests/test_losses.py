import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventcast.errors import ContractError, NumericDomainError, ShapeError
from eventcast.model import distance, time_loss, total_loss, triplet_loss
from eventcast.numerics import Tensor


def loop_triplet(p_gt, p_cf, t, margin):
    total, count = 0.0, 0
    for b in range(p_gt.shape[0]):
        d_gt = np.sqrt(sum((p_gt[b, i] - t[b, i]) ** 2 for i in range(p_gt.shape[1])))
        for k in range(p_cf.shape[1]):
            d_cf = np.sqrt(sum((p_cf[b, k, i] - t[b, i]) ** 2 for i in range(p_gt.shape[1])))
            total += max(0.0, d_gt - d_cf + margin)
            count += 1
    return total / count


def test_equal_distances_give_margin():
    t = np.zeros(3)
    gt = np.array([1.0, 0, 0])
    cf = np.array([[0, 1.0, 0], [0, 0, -1.0]])
    assert triplet_loss(gt, cf, t, 1.0).item() == pytest.approx(1.0, abs=1e-12)


def test_far_counterfactuals_give_zero():
    t = np.zeros(2)
    assert triplet_loss(np.array([0.5, 0]), np.array([[3.0, 0], [0, -1.5]]), t, 1.0).item() == 0.0


@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_mean_matches_loop(batch, k, dim, seed):
    rng = np.random.default_rng(seed)
    gt, cf, t = rng.standard_normal((batch, dim)), rng.standard_normal((batch, k, dim)), rng.standard_normal((batch, dim))
    assert triplet_loss(gt, cf, t, 0.7).item() == pytest.approx(loop_triplet(gt, cf, t, 0.7), abs=1e-12)


def test_triplet_needs_counterfactuals():
    with pytest.raises(ContractError):
        triplet_loss(np.zeros(2), np.zeros((0, 2)), np.zeros(2))
    with pytest.raises(ShapeError):
        triplet_loss(np.zeros(2), np.zeros((1, 3)), np.zeros(2))


def test_cosine_distance():
    d = distance(np.array([1.0, 0.0]), np.array([[0.0, 2.0], [3.0, 0.0]]), "cosine").data
    np.testing.assert_allclose(d, [1.0, 0.0], atol=1e-12)
    with pytest.raises(ContractError):
        distance(np.zeros(2), np.zeros(2), "manhattan")


def test_time_loss_offset():
    y = np.random.default_rng(0).standard_normal((2, 1, 5))
    assert time_loss(y + 0.5, y).item() == pytest.approx(0.25 + 0.5)
    assert time_loss(y, y).item() == 0.0
    with pytest.raises(ShapeError):
        time_loss(y, y[..., :4])


def test_total_loss():
    assert total_loss(Tensor(2.0), Tensor(3.0)).item() == 5.0
    assert total_loss(Tensor(2.0), Tensor(3.0), causal_weight=0.0).item() == 2.0
    with pytest.raises(NumericDomainError):
        total_loss(Tensor(np.nan), Tensor(0.0))
