import numpy as np
import pytest

from mmevit import tensor as T
from mmevit.exceptions import NonFiniteError, ValidationError
from mmevit.gradcheck import finite_difference_check
from mmevit.tensor import Tensor


def test_correct_gradient_passes():
    x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True, name="x")
    report = finite_difference_check(lambda: T.tsum(T.mul(T.exp(x), x)), [x])
    assert report.passed
    assert report.max_rel_error < 1e-8
    assert set(report.per_param) == {"x"}


def test_wrong_gradient_is_caught():
    x = Tensor(np.array([0.5, 1.5]), requires_grad=True)

    def bad():
        # forward is x**2 but the recorded backward claims 3x
        return T.tsum(Tensor._wrap(x.data ** 2, (x,), lambda g: (3 * x.data * g,), "bad"))

    report = finite_difference_check(bad, [x])
    assert not report.passed
    assert report.max_rel_error == pytest.approx(1 / 3, rel=1e-6)


def test_named_params_and_coordinate_sampling():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(10, 10)), requires_grad=True)
    report = finite_difference_check(lambda: T.tsum(T.tanh(w)), {"w": w}, max_coords=5)
    assert report.passed and list(report.per_param) == ["w"]


def test_unused_parameter_has_zero_error():
    x = Tensor(np.ones(2), requires_grad=True)
    y = Tensor(np.ones(2), requires_grad=True)
    report = finite_difference_check(lambda: T.tsum(x), [x, y])
    assert report.per_param["param1"] == 0.0


def test_invalid_inputs():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValidationError):
        finite_difference_check(lambda: T.tsum(x), [x], h=0)
    with pytest.raises(NonFiniteError):
        finite_difference_check(lambda: Tensor(np.array(np.nan)), [x])
