import threading
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rmcosgan.autodiff import (PRIMITIVES, AdamState, DivergenceError, DomainError, ShapeError, Tensor, adam_step,
                               apply_primitive, backward, finite_difference_gradient, max_relative_error, no_grad)
from rmcosgan.gradcheck import check_primitive


def naive_matmul(a, b):
    n, k = a.shape
    _, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_sigmoid_of_zero_is_half():
    assert apply_primitive("sigmoid", [Tensor([0.0])], {}).data.tolist() == [0.5]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4))
        out = (Tensor(a) @ Tensor(b)).data
        assert out.shape == (2, 4)
        np.testing.assert_allclose(out, naive_matmul(a, b), rtol=1e-12, atol=1e-12)


def test_clamp_min_hinge_case():
    assert (1.0 - Tensor([2.0])).clamp_min(0.0).data.tolist() == [0.0]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_broadcast_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((2, 4)))


@pytest.mark.parametrize("method", ["log", "sqrt"])
def test_domain_errors(method):
    with pytest.raises(DomainError):
        getattr(Tensor([1.0, 0.0, -1.0]), method)()


def test_zero_extent_rejected():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    backward(x.square())
    assert x.grad == 6.0


def test_sum_gradient_is_one_for_both_leaves():
    x, y = Tensor(1.5, requires_grad=True), Tensor(-2.0, requires_grad=True)
    grads = backward(x + y)
    assert grads[id(x)] == 1.0 and grads[id(y)] == 1.0


def test_unreached_leaf_gets_zero_gradient():
    x, y = Tensor([1.0, 2.0], requires_grad=True), Tensor([3.0], requires_grad=True)
    z = x.sum() + (y * 0.0).sum()
    grads = backward(z)
    np.testing.assert_array_equal(grads[id(y)], [0.0])


def test_backward_overwrites_rather_than_accumulates():
    x = Tensor(2.0, requires_grad=True)
    backward(x.square())
    backward(x.square())
    assert x.grad == 4.0


def test_backward_rejects_non_scalar_and_untracked():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)
    with pytest.raises(RuntimeError):
        backward(Tensor(1.0).square())
    with no_grad():
        y = (x * 2.0).sum()
    with pytest.raises(RuntimeError):
        backward(y)


def test_no_tape_without_tracked_inputs():
    y = Tensor([1.0]).exp()
    assert y.node is None and not y.requires_grad


def test_shared_subexpression_visited_once():
    x = Tensor(1.3, requires_grad=True)
    y = x.exp()
    backward(y * y + y)
    np.testing.assert_allclose(x.grad, 2 * np.exp(2.6) + np.exp(1.3), rtol=1e-14)


def test_finite_difference_examples():
    x = Tensor([1.0, 2.0])
    np.testing.assert_allclose(finite_difference_gradient(lambda t: t.square().sum(), x), [2.0, 4.0], atol=1e-8)
    g = finite_difference_gradient(lambda t: t.log_sigmoid().sum(), Tensor([0.0]))
    np.testing.assert_allclose(g, [0.5], atol=1e-9)


def test_finite_difference_restores_input():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    before = x.data.copy()
    finite_difference_gradient(lambda t: t.exp().sum(), x)
    np.testing.assert_array_equal(x.data, before)


@pytest.mark.parametrize("kind", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    worst = max(check_primitive(kind, rng).rel_error for _ in range(100))
    assert worst <= 1e-4


def test_random_compositions_match_finite_differences():
    rng = np.random.default_rng(11)
    unary = ["exp", "tanh", "sigmoid", "log_sigmoid", "softplus", "square"]
    for _ in range(100):
        x = Tensor(rng.normal(size=(3, 4)) * 0.5, requires_grad=True)
        w = Tensor(rng.normal(size=(4, 2)))
        ops = rng.choice(unary, size=3)

        def f(t):
            y = t @ w
            for op in ops:
                y = getattr(y, op)()
            return (y * 1.7 - 0.3).mean() + t.l2_normalize_rows().sum()

        backward(f(x))
        assert max_relative_error(x.grad, finite_difference_gradient(f, x)) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)), arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
def test_gradient_linearity(a, b):
    w = np.arange(6.0).reshape(3, 2)

    def grad_of(fn):
        x = Tensor(a, requires_grad=True)
        backward(fn(x))
        return x.grad

    f = lambda x: (x.tanh() * Tensor(w)).sum()
    g = lambda x: (x * Tensor(b)).square().sum()
    np.testing.assert_allclose(grad_of(lambda x: f(x) + g(x)), grad_of(f) + grad_of(g), rtol=1e-12, atol=1e-12)


def test_tape_replay_is_bitwise():
    def run():
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        out = (x @ w).leaky_relu(0.2).l2_normalize_rows().sum()
        backward(out)
        return out.item(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_adam_first_step_closed_form():
    p = Tensor([0.0], requires_grad=True)
    st_ = AdamState(lr=1e-3)
    adam_step([p], [np.array([1.0])], st_)
    np.testing.assert_allclose(p.data, [-1e-3 * 1.0 / (1.0 + 1e-8)], rtol=1e-12)
    assert st_.t == 1


def test_adam_zero_gradient_leaves_params():
    p = Tensor([1.0, -2.0], requires_grad=True)
    st_ = AdamState()
    adam_step([p], {}, st_)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st_.t == 1


def test_adam_errors():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(3)], AdamState())
    st_ = AdamState()
    with pytest.raises(DivergenceError) as info:
        adam_step([p], [np.array([np.nan, 1.0])], st_)
    assert info.value.step == 1
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    with pytest.raises(ValueError):
        AdamState(epsilon=0.0)


def test_adam_replay_100_steps_bitwise():
    def run():
        rng = np.random.default_rng(3)
        p = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        target = Tensor(rng.normal(size=(5, 3)))
        st_ = AdamState()
        for _ in range(100):
            adam_step([p], backward((p - target).square().mean()), st_)
        return p.data.tobytes()

    assert run() == run()


def test_no_grad_is_thread_local():
    seen = {}
    x = Tensor([1.0], requires_grad=True)

    def worker():
        seen["tracked"] = (x * 2.0).requires_grad

    with no_grad():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
        assert not (x * 2.0).requires_grad
    assert seen["tracked"]
