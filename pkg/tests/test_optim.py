import numpy as np
import pytest

from churnattn.autograd import Tensor
from churnattn.exceptions import GraphError
from churnattn.optim import Adam


def test_zero_gradient_is_fixed_point():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p])
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.step_count == 1


def test_single_step_magnitude():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([p], learning_rate=1e-3)
    p.grad = np.array([1.0])
    opt.step()
    delta = abs(p.data[0])
    assert 0.000999 <= delta <= 0.001
    assert p.data[0] < 0


def test_two_steps_match_hand_unrolled_formula():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    g = 0.3
    theta = 0.7
    m = v = 0.0
    expected = theta
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        expected -= lr * m_hat / (np.sqrt(v_hat) + eps)

    p = Tensor(np.array([theta]), requires_grad=True)
    opt = Adam([p], learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)
    for _ in range(2):
        p.grad = np.array([g])
        opt.step()
    assert abs(p.data[0] - expected) < 1e-12


def test_missing_grad_is_contract_error():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([p])
    with pytest.raises(GraphError):
        opt.step()


def test_grads_cleared_after_step():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([p])
    p.grad = np.ones(2)
    opt.step()
    assert p.grad is None


@pytest.mark.parametrize(
    "kwargs",
    [
        {"beta1": 1.0},
        {"beta2": 0.0},
        {"epsilon": 0.0},
        {"learning_rate": -1.0},
    ],
)
def test_invalid_hyperparameters_rejected(kwargs):
    with pytest.raises(ValueError):
        Adam([Tensor(np.zeros(1), requires_grad=True)], **kwargs)
