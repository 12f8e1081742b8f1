import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from maxrl.estimators import (
    CVMode,
    EstimatorVariant,
    RewardBatch,
    advantages,
    batch_gradient,
    gradient_coefficients,
    maxrl_gradient_coefficients,
)
from maxrl.objectives import Objective

R = np.array([1.0, 0.0, 0.0, 0.0])


def test_reference_advantages():
    np.testing.assert_allclose(advantages(R, "maxrl", eps=0.0), [3, -1, -1, -1], atol=1e-9)
    np.testing.assert_allclose(advantages(R, "rloo"), [1, -1 / 3, -1 / 3, -1 / 3], atol=1e-9)
    np.testing.assert_allclose(advantages(R, "grpo", eps=0.0), [1.7320508075688772, -0.5773502691896258] + [-0.5773502691896258] * 2,
                               atol=1e-9)
    np.testing.assert_allclose(advantages(R, "reinforce"), [0.75, -0.25, -0.25, -0.25])


def test_all_failure_and_all_success_give_zero():
    for kind in ("maxrl", "grpo", "rloo", "reinforce"):
        assert not advantages(np.zeros(5), kind).any()
        assert not advantages(np.ones(5), kind).any()


def test_maxrl_coefficient_modes():
    r = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
    none = maxrl_gradient_coefficients(r, EstimatorVariant(cv_mode=CVMode.NONE))
    keep = maxrl_gradient_coefficients(r, EstimatorVariant(cv_mode=CVMode.KEEP_VN_ON_FAILURE))
    drop = maxrl_gradient_coefficients(r, EstimatorVariant(cv_mode=CVMode.DROP_ALL_ON_FAILURE))
    np.testing.assert_allclose(none, [[0, 0, 0], [0.5, 0.5, 0]])
    np.testing.assert_allclose(keep, [[-1 / 3] * 3, [1 / 6, 1 / 6, -1 / 3]])
    np.testing.assert_allclose(drop, [[0, 0, 0], [1 / 6, 1 / 6, -1 / 3]])


def test_coefficients_are_advantage_over_n():
    r = np.array([1.0, 0.0, 1.0, 0.0, 0.0])
    v = EstimatorVariant(Objective.GRPO)
    np.testing.assert_allclose(gradient_coefficients(r, v), advantages(r, v) / 5)
    v = EstimatorVariant(Objective.MAXRL)
    np.testing.assert_allclose(gradient_coefficients(r, v, eps=0.0), advantages(r, v, eps=0.0) / 5)


def test_validation():
    with pytest.raises(ValueError):
        RewardBatch(np.array([0.5, 1.0]))
    with pytest.raises(ValueError):
        advantages(np.array([1.0]), "rloo")
    with pytest.raises(ValueError):
        advantages(R, "ml")
    with pytest.raises(ValueError):
        advantages(R, "maxrl", eps=-1)


@settings(max_examples=300, deadline=None)
@given(r=arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 16)), elements=st.sampled_from([0.0, 1.0])),
       kind=st.sampled_from(["maxrl", "grpo", "rloo", "reinforce"]))
def test_zero_sum(r, kind):
    a = advantages(r, kind)
    np.testing.assert_allclose(a.sum(axis=-1), 0.0, atol=1e-9)


def test_batch_gradient_is_average_over_tasks():
    coeffs = np.array([[1.0, -1.0], [0.5, -0.5]])
    scores = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)
    expected = ((coeffs[..., None] * scores).sum(axis=1)).mean(axis=0)
    np.testing.assert_allclose(batch_gradient(coeffs, scores), expected)
