import numpy as np
import pytest

from tric.core.numcore import Tensor
from tric.core.optim import AdamW, AdamWState, adamw_step


def _param(values):
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def test_zero_gradient_without_decay_leaves_parameters():
    p = _param([1.0, -2.0, 3.0])
    adamw_step([p], [np.zeros(3)], AdamWState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])


def test_decay_is_decoupled_from_the_gradient():
    p = _param([1.0, -2.0, 3.0])
    adamw_step([p], [np.zeros(3)], AdamWState(), lr=0.1, weight_decay=0.01)
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0, 3.0]) * (1.0 - 0.1 * 0.01))


def test_first_step_moves_by_learning_rate_times_sign():
    p = _param([0.0, 0.0])
    grad = np.array([0.5, -4.0])
    adamw_step([p], [grad], AdamWState(), lr=0.01, eps=1e-8, weight_decay=0.0)
    np.testing.assert_allclose(p.data, -0.01 * grad / (np.abs(grad) + 1e-8))


def test_parameters_without_gradient_are_skipped():
    a, b = _param([1.0]), _param([2.0])
    state = adamw_step([a, b], [np.array([1.0]), None], AdamWState(), lr=0.1)
    assert state.step == 1
    assert b.data[0] == 2.0 and a.data[0] < 1.0


def test_invalid_arguments():
    p = _param([1.0])
    with pytest.raises(ValueError):
        adamw_step([p], [np.zeros(1)], AdamWState(), lr=0.0)
    with pytest.raises(ValueError):
        adamw_step([p], [], AdamWState(), lr=0.1)
    with pytest.raises(ValueError):
        AdamW([p], lr=-1.0)


def test_optimizer_minimises_a_quadratic():
    p = _param([0.0, 10.0])
    optimizer = AdamW([p], lr=0.1, weight_decay=0.0)
    for _ in range(1000):
        optimizer.zero_grad()
        p.grad = 2.0 * (p.data - 3.0)
        optimizer.step()
    np.testing.assert_allclose(p.data, 3.0, atol=0.1)
