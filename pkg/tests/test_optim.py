import numpy as np
import pytest

from mmevit.exceptions import ShapeError
from mmevit.optim import Adam, AdamState, adam_step
from mmevit.tensor import Tensor


def reference_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar loop written straight from the update rule."""
    theta = np.array(theta, dtype=np.float64)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g ** 2
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
    return theta


def test_adam_matches_reference_sequence():
    rng = np.random.default_rng(0)
    theta = rng.normal(size=7)
    grads = [rng.normal(size=7) for _ in range(25)]
    p = theta.copy()
    state = AdamState(lr=0.01)
    for g in grads:
        adam_step([p], [g], state)
    assert np.allclose(p, reference_adam(theta, grads, 0.01), rtol=0, atol=1e-13)
    assert state.step == 25


def test_first_step_moves_by_lr_times_sign():
    # bias correction makes the first step exactly lr * g / (|g| + eps)
    p = np.array([1.0, -1.0, 0.5])
    g = np.array([3.0, -0.2, 1e-3])
    adam_step([p], [g], AdamState(lr=0.1))
    assert np.allclose(p, [1.0, -1.0, 0.5] - 0.1 * g / (np.abs(g) + 1e-8))


def test_zero_learning_rate_leaves_params():
    p = np.arange(4.0)
    adam_step([p], [np.ones(4)], AdamState(lr=0.0))
    assert np.array_equal(p, np.arange(4.0))


def test_minimises_quadratic():
    x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        x.grad = 2 * x.data
        opt.step()
    assert np.allclose(x.data, 0.0, atol=1e-2)


def test_missing_grad_treated_as_zero():
    x = Tensor(np.ones(3), requires_grad=True)
    opt = Adam([x], lr=0.5)
    opt.step()
    assert np.array_equal(x.data, np.ones(3))


def test_float32_params_stay_float32():
    p = np.ones(3, dtype=np.float32)
    adam_step([p], [np.ones(3, dtype=np.float32)], AdamState())
    assert p.dtype == np.float32


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        adam_step([np.ones(3)], [np.ones(2)], AdamState())
    with pytest.raises(ShapeError):
        adam_step([np.ones(3)], [], AdamState())
