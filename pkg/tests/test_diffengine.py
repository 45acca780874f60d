import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from dsrsd import ops
from dsrsd.diffengine import Graph, Tensor, backward, grad_check
from dsrsd.errors import ConfigError, GraphError, NumericalError, ShapeError
from dsrsd.gradcheck import PRIMITIVES


def leaf(a):
    return Tensor(a, requires_grad=True)


def test_matmul_identity():
    out = ops.matmul(Tensor([[1, 2], [3, 4]]), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_softmax_symmetric_row():
    np.testing.assert_array_equal(ops.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_gelu_values():
    assert ops.gelu(Tensor([[0.0]])).item() == 0.0
    both = ops.gelu(Tensor([[1.0, -1.0]])).data
    # odd part of GELU is x/2: GELU(x) - GELU(-x) = x
    assert both[0, 0] - both[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert both.sum() == pytest.approx(2 * norm.cdf(1.0) - 1, abs=1e-15)
    assert both[0, 0] == pytest.approx(norm.cdf(1.0), abs=1e-15)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError) as exc:
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    msg = str(exc.value)
    assert "matmul" in msg and "(2, 3)" in msg


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_rate_validated(rate):
    with pytest.raises(ConfigError):
        ops.dropout(Tensor(np.ones((2, 2))), rate, np.random.default_rng(0))


def test_dropout_inverted_scaling():
    x = Tensor(np.ones((200, 50)))
    y = ops.dropout(x, 0.2, np.random.default_rng(0), train=True).data
    assert set(np.unique(y)) <= {0.0, 1.25}
    assert ops.dropout(x, 0.2, np.random.default_rng(0), train=False) is x


def test_backward_sum_gives_ones(rng):
    x = leaf(rng.standard_normal((3, 5)))
    with Graph() as g:
        loss = ops.sum(x)
    np.testing.assert_array_equal(backward(g, loss)[x], np.ones((3, 5)))


def test_backward_square():
    x = leaf([[3.0]])
    with Graph() as g:
        loss = ops.sum(ops.mul(x, x))
    backward(g, loss)
    assert x.grad[0, 0] == 6.0


def test_backward_twice_rejected():
    x = leaf([[1.0, 2.0]])
    with Graph() as g:
        loss = ops.sum(ops.square(x))
    backward(g, loss)
    with pytest.raises(GraphError):
        backward(g, loss)


def test_backward_requires_scalar():
    x = leaf([[1.0, 2.0]])
    with Graph() as g:
        y = ops.square(x)
    with pytest.raises(GraphError):
        backward(g, y)


def test_fan_out_accumulates():
    x = leaf([[2.0]])
    with Graph() as g:
        loss = ops.sum(ops.add(ops.square(x), ops.scale(x, 3.0)))
    backward(g, loss)
    assert x.grad[0, 0] == 7.0


def test_unused_leaf_gets_zero_grad():
    x, y = leaf([[1.0]]), leaf([[5.0, 6.0]])
    with Graph() as g:
        _ = ops.square(y)
        loss = ops.sum(ops.square(x))
    grads = backward(g, loss)
    np.testing.assert_array_equal(grads[y], [[0.0, 0.0]])


def test_no_tracking_outside_graph():
    x = leaf([[1.0]])
    y = ops.square(x)
    assert not y.requires_grad


def test_nodes_recorded_in_construction_order():
    x = leaf([[1.0, 2.0]])
    with Graph() as g:
        a = ops.square(x)
        b = ops.exp(a)
        ops.sum(b)
    assert [n.kind for n in g.nodes] == ["square", "exp", "sum"]
    seen = {id(x)}
    for n in g.nodes:
        assert all(i in seen for i in n.input_ids)
        seen.add(n.output_id)


def test_cosine_zero_row_reports_index():
    a = Tensor([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(NumericalError, match="row 1"):
        ops.cosine_sim(a, Tensor([[1.0, 1.0]]))


def test_grad_check_mean_is_exact(rng):
    r = grad_check(lambda t: ops.mean(t), [rng.standard_normal((4, 3))])
    assert r.passed and r.max_rel_error < 1e-9


def test_softmax_sum_gradient_vanishes(rng):
    x = leaf(rng.uniform(-2, 2, (3, 4)))
    with Graph() as g:
        loss = ops.sum(ops.softmax_rows(x))
    assert np.max(np.abs(backward(g, loss)[x])) < 1e-12


def test_decorrelation_gradient_matches_fd(rng):
    from dsrsd.losses import cross_covariance, decorrelation_loss
    f = lambda a, b: decorrelation_loss(cross_covariance(a, b))  # noqa: E731
    r = grad_check(f, [rng.standard_normal((4, 3)), rng.standard_normal((4, 3))])
    assert r.passed, r


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_over_seeds(name):
    for seed in range(20):
        f, point = PRIMITIVES[name](np.random.default_rng(seed))
        r = grad_check(f, point, eps=1e-5, tol=1e-4)
        assert r.passed, f"{name} seed {seed}: {r}"


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_softmax_rows_normalised(rows, cols, seed):
    x = np.random.default_rng(seed).uniform(-50, 50, (rows, cols))
    y = ops.softmax_rows(Tensor(x)).data
    assert np.all(y >= 0)
    assert np.all(np.abs(y.sum(axis=1) - 1.0) <= 1e-12)


@given(st.integers(0, 2**31 - 1))
def test_deterministic_outputs_and_grads(seed):
    def run():
        r = np.random.default_rng(seed)
        x = leaf(r.standard_normal((3, 4)))
        w = leaf(r.standard_normal((4, 2)))
        with Graph() as g:
            y = ops.dropout(ops.gelu(ops.matmul(x, w)), 0.2, np.random.default_rng(seed))
            loss = ops.mean(ops.log_softmax_rows(y))
        grads = backward(g, loss)
        return loss.item(), grads[x].tobytes(), grads[w].tobytes()
    assert run() == run()


def test_log_of_nonpositive_is_numerical_error():
    with pytest.raises(NumericalError):
        ops.log(Tensor([[0.0, 1.0]]))


def test_tensor_values_read_only():
    t = Tensor([[1.0]])
    with pytest.raises(ValueError):
        t.data[0, 0] = 2.0
    assert math.isclose(t.item(), 1.0)
