import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from diffgan_tts import tensor as tt
from diffgan_tts.errors import ShapeError
from diffgan_tts.tensor import ComputeGraph, Tensor, backward, forward_eval, no_grad


def test_matmul_with_identity_padding():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor(np.eye(3)[:, :2])
    assert_array_equal(tt.matmul(a, b).data, [[0.0, 1.0], [3.0, 4.0]])


def test_relu_values():
    assert_array_equal(tt.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_layer_norm_of_constant_vector_is_zero():
    out = tt.layer_norm(Tensor(np.full((2, 5), 3.0)))
    assert_array_equal(out.data, np.zeros((2, 5)))


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    grads = backward(tt.tsum(x), [x])
    assert_array_equal(grads[x], np.ones((3, 4)))


def test_square_sum_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    grads = backward(tt.tsum(x * x), [x])
    assert_array_equal(grads[x], [2.0, 4.0])


def test_broadcast_add_unbroadcasts_gradient():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    grads = backward(tt.tsum(a + b), [a, b])
    assert_array_equal(grads[b], [2.0, 2.0, 2.0])
    assert grads[a].shape == (2, 3)


def test_backward_accumulates_into_leaf_grad():
    x = Tensor([1.0, -1.0], requires_grad=True)
    backward(tt.tsum(x * 3.0))
    backward(tt.tsum(x * 3.0))
    assert_array_equal(x.grad, [6.0, 6.0])
    tt.zero_grad([x])
    assert x.grad is None


def test_leaf_used_twice_gets_twice_the_gradient():
    x = Tensor([1.5, -2.0], requires_grad=True)
    once = backward(tt.tsum(tt.tanh(x)), [x])[x]
    twice = backward(tt.tsum(tt.tanh(x) + tt.tanh(x)), [x])[x]
    assert_allclose(twice, 2.0 * once, rtol=1e-15)
    assert_array_equal(backward(tt.tsum(x + x), [x])[x], [2.0, 2.0])


def test_unreached_leaf_gets_zero_gradient():
    x = Tensor([1.0], requires_grad=True)
    y = Tensor([2.0], requires_grad=True)
    grads = backward(tt.tsum(x * 2.0), [x, y])
    assert_array_equal(grads[y], [0.0])


def test_gather_rows_scatter_adds_repeated_rows():
    table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    out = tt.gather_rows(table, [0, 0, 2])
    grads = backward(tt.tsum(out), [table])
    assert_array_equal(grads[table], [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_gather_rows_out_of_range():
    with pytest.raises(ShapeError):
        tt.gather_rows(Tensor(np.zeros((2, 2))), [2])


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y.is_leaf
    assert (x * 2.0).requires_grad


def test_detach_cuts_the_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    assert not (x.detach() * 2.0).requires_grad


def test_matmul_shape_error_names_op():
    with pytest.raises(ShapeError, match="matmul"):
        tt.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_add_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


def test_scalar_backward_required():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_softmax_rows_sum_to_one():
    out = tt.softmax(Tensor(np.random.default_rng(1).standard_normal((3, 5))), axis=-1)
    assert_allclose(out.data.sum(axis=-1), np.ones(3))


def test_conv1d_same_padding_keeps_frames():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((7, 3)))
    w = Tensor(rng.standard_normal((3, 3, 4)))
    assert tt.conv1d(x, w).shape == (7, 4)
    assert tt.conv1d(x, w, dilation=2).shape == (7, 4)


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 2))
    w = rng.standard_normal((3, 2, 1))
    out = tt.conv1d(Tensor(x), Tensor(w)).data[:, 0]
    padded = np.pad(x, ((1, 1), (0, 0)))
    expected = [sum(padded[i + j] @ w[j, :, 0] for j in range(3)) for i in range(5)]
    assert_allclose(out, expected)


def test_conv1d_stride_two_halves_frames():
    x = Tensor(np.ones((16, 2)))
    w = Tensor(np.ones((5, 2, 3)))
    assert tt.conv1d(x, w, stride=2).shape == (8, 3)


def test_compute_graph_records_ops():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = tt.tsum(tt.relu(x) * 2.0)
    ops = [r.op for r in ComputeGraph(loss).records]
    assert "relu" in ops and "sum" in ops
    assert ComputeGraph(loss).leaves() == [x]


def test_forward_eval_names_outputs():
    out = forward_eval(lambda a, b: (a + b, a * b), {"a": Tensor(2.0), "b": Tensor(3.0)})
    assert out["output0"].item() == 5.0
    assert out["output1"].item() == 6.0
    assert forward_eval(lambda a: a, {"a": Tensor(1.0)})["output"].item() == 1.0


def test_numpy_left_operand_defers_to_tensor():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = np.array([3.0, 4.0]) * x
    assert isinstance(y, Tensor)
    assert_array_equal(backward(tt.tsum(y), [x])[x], [3.0, 4.0])
