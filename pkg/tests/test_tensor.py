import numpy as np
import pytest

from csipoint.errors import ContractError, NonFiniteError
from csipoint.numerics import Tensor, backward
from csipoint.numerics.tensor import add, mul, reshape, swap_last_axes, total

from gradcheck import check_op


def test_add_broadcast_gradient_sums_over_broadcast_axes():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    (a + b).sum().backward()
    assert np.array_equal(a.grad, np.ones((2, 3)))
    assert np.array_equal(b.grad, np.full(3, 2.0))


def test_mul_gradient_is_other_operand():
    a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    b = Tensor([4.0, 5.0, 6.0], requires_grad=True)
    (a * b).sum().backward()
    assert a.grad.tolist() == [4.0, 5.0, 6.0]
    assert b.grad.tolist() == [1.0, 2.0, 3.0]


def test_backward_twice_accumulates():
    a = Tensor([1.5, -2.0], requires_grad=True)
    loss = (a * a).sum()
    loss.backward()
    first = a.grad.copy()
    loss.backward()
    assert np.array_equal(a.grad, 2 * first)


def test_shared_subexpression_gradients_add():
    # y = x*x + x  -> dy/dx = 2x + 1
    x = Tensor([3.0], requires_grad=True)
    ((x * x) + x).sum().backward()
    assert x.grad.tolist() == [7.0]


def test_backward_needs_scalar():
    with pytest.raises(ContractError):
        backward(Tensor(np.ones(2), requires_grad=True) * 2.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_output_raises():
    a = Tensor([1e308], requires_grad=True)
    with pytest.raises(NonFiniteError):
        a * 10.0
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_constants_do_not_track_graph():
    out = mul(Tensor([1.0]), 2.0)
    assert not out.requires_grad and out._parents == ()


def test_reshape_bad_shape():
    with pytest.raises(ContractError):
        reshape(Tensor(np.ones(6)), (4, 2))


@pytest.mark.parametrize("seed", range(20))
def test_elementary_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 4))
    assert check_op(lambda x, y: add(mul(x, y), x), [a, b]) < 1e-6
    assert check_op(lambda x: swap_last_axes(reshape(x, (6, 4))), [a]) < 1e-6
    assert check_op(lambda x: total(mul(x, x)), [a], weights=np.array(1.0)) < 1e-6


def test_mse_against_zero_hand_gradient():
    from csipoint.numerics import mse
    x = Tensor([3.0], requires_grad=True)
    mse(x, Tensor([0.0])).backward()
    assert x.grad.tolist() == [6.0]


def test_disconnected_parameter_gradient_stays_zero():
    a, b = Tensor([1.0], requires_grad=True), Tensor([2.0], requires_grad=True)
    b.zero_grad()
    (a * 3.0).sum().backward()
    assert b.grad.tolist() == [0.0]
