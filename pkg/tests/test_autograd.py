"""Finite-difference verification of every autograd primitive."""

import numpy as np
import pytest

from ssmsep import autograd as ag
from ssmsep.gradcheck import central_difference, relative_error

RNG = np.random.default_rng(7)


def check_unary(op, x, tol=1e-7, **kw):
    t = ag.parameter(x.copy())
    out = op(t, **kw)
    seed = RNG.standard_normal(out.data.shape)
    out.backward(seed)

    def f(arr):
        return float((op(ag.Tensor(arr), **kw).data * seed).sum())

    (fd,) = central_difference(f, [x.copy()])
    assert relative_error(t.grad, fd) < tol


@pytest.mark.parametrize(
    "op,kw",
    [
        (ag.exp, {}),
        (ag.log, {}),
        (ag.sqrt, {}),
        (ag.tanh, {}),
        (ag.sigmoid, {}),
        (ag.silu, {}),
        (ag.softplus, {}),
        (lambda t: ag.power(t, 3.0), {}),
        (lambda t: ag.softmax(t, axis=-1), {}),
        (lambda t: ag.clip(t, -0.5, 0.5), {}),
        (lambda t: ag.sum_(t, axis=1), {}),
        (lambda t: ag.mean(t, axis=0, keepdims=True), {}),
        (lambda t: ag.flip(t, axis=1), {}),
        (lambda t: ag.transpose(t, (1, 0)), {}),
        (lambda t: ag.reshape(t, (12,)), {}),
        (lambda t: ag.getitem(t, (slice(1, 3), slice(None))), {}),
        (lambda t: ag.pad(t, ((1, 2), (0, 3))), {}),
    ],
)
def test_unary_ops_match_finite_differences(op, kw):
    x = RNG.uniform(0.2, 1.5, size=(3, 4))  # positive domain works for log/sqrt
    check_unary(op, x, **kw)


def test_binary_ops_match_finite_differences():
    a = RNG.standard_normal((3, 4))
    b = RNG.uniform(0.5, 1.5, size=(1, 4))  # broadcast + safe divisor
    for op in (ag.add, ag.sub, ag.mul, ag.div):
        ta, tb = ag.parameter(a.copy()), ag.parameter(b.copy())
        out = op(ta, tb)
        seed = RNG.standard_normal(out.data.shape)
        out.backward(seed)

        def f(x, y):
            return float((op(ag.Tensor(x), ag.Tensor(y)).data * seed).sum())

        fd_a, fd_b = central_difference(f, [a.copy(), b.copy()])
        assert relative_error(ta.grad, fd_a) < 5e-7
        assert relative_error(tb.grad, fd_b) < 5e-7


def test_matmul_batched_and_broadcast():
    w = RNG.standard_normal((5, 3))
    x = RNG.standard_normal((2, 3, 4))  # leading batch dim broadcasts against w
    tw, tx = ag.parameter(w.copy()), ag.parameter(x.copy())
    out = ag.matmul(tw, tx)
    assert out.shape == (2, 5, 4)
    seed = RNG.standard_normal(out.data.shape)
    out.backward(seed)

    def f(wa, xa):
        return float((np.matmul(wa, xa) * seed).sum())

    fd_w, fd_x = central_difference(f, [w.copy(), x.copy()])
    assert relative_error(tw.grad, fd_w) < 5e-7
    assert relative_error(tx.grad, fd_x) < 5e-7


def test_concat_routes_gradients():
    a = RNG.standard_normal((2, 3))
    b = RNG.standard_normal((2, 2))
    ta, tb = ag.parameter(a.copy()), ag.parameter(b.copy())
    out = ag.concat([ta, tb], axis=1)
    seed = RNG.standard_normal(out.data.shape)
    out.backward(seed)
    assert np.allclose(ta.grad, seed[:, :3])
    assert np.allclose(tb.grad, seed[:, 3:])


def test_unfold1d_fold1d_are_adjoint():
    # <fold(y), x> == <y, unfold(x)> characterizes the adjoint pair exactly.
    b, c, length, k, s = 2, 3, 11, 4, 1
    n_w = (length - k) // s + 1
    x = RNG.standard_normal((b, c, length))
    y = RNG.standard_normal((b, c * k, n_w))
    ux = ag.unfold1d(ag.Tensor(x), k, s).data
    fy = ag.fold1d(ag.Tensor(y), length, k, s).data
    assert np.isclose((fy * x).sum(), (y * ux).sum())


def test_fold_of_unfold_is_coverage_weighting():
    # With stride 1 each interior sample is covered by K windows; a dense
    # brute-force count must match fold(unfold(x)) == x * coverage.
    length, k, s = 13, 4, 1
    x = RNG.standard_normal((1, 1, length))
    out = ag.fold1d(ag.unfold1d(ag.Tensor(x), k, s), length, k, s).data
    coverage = np.zeros(length)
    for w in range((length - k) // s + 1):
        coverage[w * s : w * s + k] += 1
    assert np.allclose(out, x * coverage)


def test_unfold1d_gradient():
    x = RNG.standard_normal((2, 3, 10))
    t = ag.parameter(x.copy())
    out = ag.unfold1d(t, 4, 2)
    seed = RNG.standard_normal(out.data.shape)
    out.backward(seed)

    def f(arr):
        return float((ag.unfold1d(ag.Tensor(arr), 4, 2).data * seed).sum())

    (fd,) = central_difference(f, [x.copy()])
    assert relative_error(t.grad, fd) < 1e-7


def test_unfold2d_gradient():
    x = RNG.standard_normal((2, 2, 5, 6))
    t = ag.parameter(x.copy())
    out = ag.unfold2d(t, 3, 3)
    seed = RNG.standard_normal(out.data.shape)
    out.backward(seed)

    def f(arr):
        return float((ag.unfold2d(ag.Tensor(arr), 3, 3).data * seed).sum())

    (fd,) = central_difference(f, [x.copy()])
    assert relative_error(t.grad, fd) < 1e-7


def test_grad_accumulates_across_uses():
    x = ag.parameter(np.array([2.0]))
    y = ag.add(ag.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1 = 5
    y.backward(np.array([1.0]))
    assert np.allclose(x.grad, [5.0])


def test_no_grad_blocks_graph():
    x = ag.parameter(np.ones(3))
    with ag.no_grad():
        y = ag.mul(x, 2.0)
    assert not y.requires_grad
    assert y._parents == ()


def test_deep_chain_backward_is_iterative():
    # 5000-node chain would blow the recursion limit with a recursive topo sort.
    x = ag.parameter(np.array([1.0]))
    y = x
    for _ in range(5000):
        y = ag.add(y, 0.001)
    y.backward(np.array([1.0]))
    assert np.allclose(x.grad, [1.0])


def test_dtype_preserved_float32():
    x = ag.parameter(np.ones((2, 2), dtype=np.float32))
    y = ag.silu(ag.matmul(x, x))
    assert y.dtype == np.float32
    y.backward(np.ones((2, 2), dtype=np.float32))
    assert x.grad.dtype == np.float32
