import math

import numpy as np
import pytest

from hetsheaf import autodiff as ad
from hetsheaf.autodiff import Tape, Tensor
from hetsheaf.errors import DimensionError, NumericError, ValidationError
from hetsheaf.nn import mlp_forward, parameter


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f(x)
        flat[i] = orig - h
        minus = f(x)
        flat[i] = orig
        g.reshape(-1)[i] = (plus - minus) / (2 * h)
    return g


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ a).data, a.data)
    np.testing.assert_array_equal((Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data, [[11.0]])


def test_matmul_grad_matches_finite_differences():
    a0 = np.array([[1.0, 2.0], [3.0, 4.0]])
    a = parameter(a0.copy())
    (a @ Tensor(np.eye(2))).sum().backward()
    fd = numeric_grad(lambda x: float((x @ np.eye(2)).sum()), a0.copy())
    np.testing.assert_allclose(a.grad, fd, atol=1e-9)
    np.testing.assert_allclose(a.grad, np.ones((2, 2)), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_elementwise_examples():
    assert ad.elu(Tensor(0.0)).item() == 0.0
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    K = 5
    np.testing.assert_allclose(ad.log_softmax(Tensor(np.zeros((2, K))), axis=1).data, -math.log(K))


def test_broadcast_error():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


UNARY = {
    "elu": (ad.elu, lambda x: np.where(x > 0, x, np.expm1(x))),
    "sigmoid": (ad.sigmoid, lambda x: 1 / (1 + np.exp(-x))),
    "tanh": (ad.tanh, np.tanh),
    "exp": (ad.exp, np.exp),
    "softplus": (ad.softplus, lambda x: np.log1p(np.exp(x))),
    "log_softmax": (lambda t: ad.log_softmax(t, axis=1),
                    lambda x: x - np.log(np.exp(x).sum(axis=1, keepdims=True))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_gradcheck_random_trials(name):
    op, ref = UNARY[name]
    rng = np.random.default_rng(0)
    for _ in range(100):
        x0 = rng.normal(size=(2, 3))
        x0[np.abs(x0) < 1e-3] = 0.5  # keep away from the elu kink
        w = rng.normal(size=(2, 3))
        x = parameter(x0.copy())
        out = op(x)
        np.testing.assert_allclose(out.data, ref(x0), rtol=1e-12, atol=1e-12)
        (out * w).sum().backward()
        fd = numeric_grad(lambda v: float((ref(v) * w).sum()), x0.copy())
        np.testing.assert_allclose(x.grad, fd, rtol=1e-4, atol=1e-7)


BINARY = {
    "add": (lambda a, b: a + b, lambda a, b: a + b),
    "sub": (lambda a, b: a - b, lambda a, b: a - b),
    "mul": (lambda a, b: a * b, lambda a, b: a * b),
    "div": (lambda a, b: a / b, lambda a, b: a / b),
    "matmul": (lambda a, b: a @ b.T, lambda a, b: a @ b.T),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), lambda a, b: np.concatenate([a, b], axis=1)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_ops_gradcheck_random_trials(name):
    op, ref = BINARY[name]
    rng = np.random.default_rng(1)
    for _ in range(100):
        a0 = rng.normal(size=(3, 2))
        b0 = rng.normal(size=(3, 2)) + (3.0 if name == "div" else 0.0)
        a, b = parameter(a0.copy()), parameter(b0.copy())
        out = op(a, b)
        w = rng.normal(size=out.shape)
        (out * w).sum().backward()
        fa = numeric_grad(lambda v: float((ref(v, b0) * w).sum()), a0.copy())
        fb = numeric_grad(lambda v: float((ref(a0, v) * w).sum()), b0.copy())
        np.testing.assert_allclose(a.grad, fa, rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(b.grad, fb, rtol=1e-4, atol=1e-7)


def test_broadcast_gradients_sum_back():
    a = parameter(np.ones((3, 4)))
    b = parameter(np.arange(4.0))
    (a * b).sum().backward()
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))
    np.testing.assert_array_equal(a.grad, np.tile(np.arange(4.0), (3, 1)))


def test_batched_matmul_broadcast_grad():
    rng = np.random.default_rng(3)
    W0, X0 = rng.normal(size=(2, 2)), rng.normal(size=(5, 2, 3))
    W = parameter(W0.copy())
    (W @ Tensor(X0)).sum().backward()
    fd = numeric_grad(lambda v: float((v @ X0).sum()), W0.copy())
    np.testing.assert_allclose(W.grad, fd, rtol=1e-6)


def test_take_and_index_add_are_adjoint():
    rng = np.random.default_rng(4)
    x = parameter(rng.normal(size=(4, 2)))
    idx = np.array([0, 2, 2, 3, 0])
    g = rng.normal(size=(5, 2))
    (ad.take(x, idx) * g).sum().backward()
    expected = np.zeros((4, 2))
    np.add.at(expected, idx, g)
    np.testing.assert_allclose(x.grad, expected)
    np.testing.assert_allclose(ad.index_add(Tensor(g), idx, 4).data, expected)


def test_getitem_fancy_index_grad():
    x = parameter(np.arange(6.0).reshape(2, 3))
    x[np.array([0, 1, 1]), np.array([2, 0, 0])].sum().backward()
    np.testing.assert_array_equal(x.grad, [[0, 0, 1], [2, 0, 0]])


def test_tape_order_is_topological_and_backward_reversed():
    calls = []

    def traced(name, t):
        def backward(g):
            calls.append(name)
            return (g,)
        return ad.custom_op(name, (t,), t.data.copy(), backward)

    x = parameter(np.ones(3))
    a = traced("a", x)
    b = traced("b", a)
    c = traced("c", a)
    out = (b + c).sum()
    tape = Tape.from_output(out)
    seqs = [op.seq for op in tape.operations]
    assert seqs == sorted(seqs)
    for op in tape.operations:
        for t in op.inputs:
            if t._op is not None:
                assert t._op.seq < op.seq
    out.backward()
    recorded = [op.name for op in tape.operations if op.name in "abc"]
    assert calls == recorded[::-1]
    np.testing.assert_array_equal(x.grad, np.full(3, 2.0))


def test_backward_is_linear_in_losses():
    rng = np.random.default_rng(5)
    W0 = rng.normal(size=(3, 3))
    x = Tensor(rng.normal(size=(4, 3)))

    def grad_of(fn):
        W = parameter(W0.copy())
        fn(W).backward()
        return W.grad

    f1 = lambda W: ad.tanh(x @ W).sum()
    f2 = lambda W: (ad.elu(x @ W) * 2.0).mean()
    np.testing.assert_allclose(grad_of(lambda W: f1(W) + f2(W)), grad_of(f1) + grad_of(f2), atol=1e-12)


def test_no_grad_records_nothing():
    x = parameter(np.ones(2))
    with ad.no_grad():
        y = x * 2.0
    assert y._op is None and not y.requires_grad
    assert ad.is_grad_enabled()


def test_dropout_rules():
    x = Tensor(np.ones((200, 50)))
    assert ad.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert ad.dropout(x, 0.5, False) is x
    y = ad.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) == {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    with pytest.raises(ValidationError):
        ad.dropout(x, 1.0, True, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        ad.dropout(x, 0.5, True)


def test_mlp_forward_examples_and_oracle():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(mlp_forward([(Tensor(np.eye(3)), Tensor(np.zeros(3)), "identity")], x).data, x.data)
    b = np.array([1.0, -2.0])
    np.testing.assert_array_equal(mlp_forward([(Tensor(np.zeros((3, 2))), Tensor(b), "identity")], x).data,
                                  np.tile(b, (2, 1)))
    rng = np.random.default_rng(6)
    W1, b1, W2, b2 = rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(4, 2)), rng.normal(size=2)
    out = mlp_forward([(Tensor(W1), Tensor(b1), "elu"), (Tensor(W2), Tensor(b2), "identity")], x).data
    # straight-line reimplementation
    h = x.data @ W1 + b1
    h = np.where(h > 0, h, np.exp(h) - 1)
    np.testing.assert_allclose(out, h @ W2 + b2, rtol=1e-13)
    with pytest.raises(DimensionError):
        mlp_forward([(Tensor(W1), None, "elu"), (Tensor(np.ones((3, 2))), None, "identity")], x)


def test_gradcheck_linear_passes_tightly():
    rng = np.random.default_rng(7)
    W = parameter(rng.normal(size=(3, 2)))
    x = Tensor(rng.normal(size=(4, 3)))
    report = ad.gradcheck(lambda: (x @ W).sum(), {"W": W}, tolerance=1e-10)
    assert report.passed, report.summary()


def test_gradcheck_detects_corrupted_rule():
    W = parameter(np.random.default_rng(8).normal(size=(2, 2)))
    good = parameter(np.ones(2))

    def bad_square(t):
        return ad.custom_op("bad_square", (t,), t.data ** 2, lambda g: (3.0 * t.data * g,))

    report = ad.gradcheck(lambda: bad_square(W).sum() + (good * good).sum(), {"W": W, "good": good})
    assert not report.passed
    assert report.failures == ["W"]
    assert "FAIL W" in report.summary()


def test_gradcheck_non_finite_names_parameter():
    w = parameter(np.array([1e-5]))
    with pytest.raises(NumericError, match="w"):
        ad.gradcheck(lambda: ad.log(w).sum(), {"w": w})
