import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from msimamba.autodiff import ContractError, DimensionError, GRAD_RULES, Tensor, corrupted_rule, ops
from msimamba.autodiff.gradcheck import check_gradients

from _oracles import fd_grad, naive_conv_same, rel_err, softmax_ref


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- matmul ---------------------------------------------------------------------


def test_matmul_identity():
    a = [[1.0, 2.0], [3.0, 4.0]]
    np.testing.assert_array_equal((T(a) @ T(np.eye(2))).data, a)


def test_matmul_zero():
    np.testing.assert_array_equal((T([[1.0, 2.0], [3.0, 4.0]]) @ T(np.zeros((2, 2)))).data, np.zeros((2, 2)))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T(np.ones((3, 4))) @ T(np.ones((3, 2)))


def test_matmul_backward_formula():
    rng = np.random.default_rng(0)
    a, b = T(rng.normal(size=(3, 4)), True), T(rng.normal(size=(4, 2)), True)
    g = rng.normal(size=(3, 2))
    (a @ b).backward(g)
    np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=0, atol=1e-14)
    np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=0, atol=1e-14)


# -- conv -------------------------------------------------------------------------


def test_conv_1x1_identity():
    x = np.random.default_rng(1).normal(size=(5, 4, 3))
    k = np.eye(3).reshape(1, 1, 3, 3)
    np.testing.assert_array_equal(ops.conv2d_same(T(x), T(k)).data, x)


def test_conv_zero_kernel():
    x = np.random.default_rng(1).normal(size=(5, 4, 3))
    np.testing.assert_array_equal(ops.conv2d_same(T(x), T(np.zeros((3, 3, 3, 2)))).data, np.zeros((5, 4, 2)))


@pytest.mark.parametrize("kh,kw", [(3, 3), (1, 5), (5, 3)])
def test_conv_matches_loop_oracle(kh, kw):
    rng = np.random.default_rng(kh * 10 + kw)
    x = rng.normal(size=(5, 4, 2))
    k = rng.normal(size=(kh, kw, 2, 3))
    got = ops.conv2d_same(T(x), T(k)).data
    assert np.max(np.abs(got - naive_conv_same(x, k))) < 1e-12


def test_conv_even_kernel_rejected():
    with pytest.raises(ValueError):
        ops.conv2d_same(T(np.ones((4, 4, 1))), T(np.ones((2, 3, 1, 1))))


# -- softmax -----------------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax(T([2.0, 2.0, 2.0])).data, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(ops.softmax(T([0.0, math.log(3)])).data, [0.25, 0.75], atol=1e-15)
    out = ops.softmax(T([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, [0.5, 0.5])


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)))
def test_softmax_simplex(v):
    out = ops.softmax(T(v)).data
    assert np.all(out > 0) and np.all(out <= 1)
    assert abs(out.sum() - 1) < 1e-12
    np.testing.assert_allclose(out, softmax_ref(list(v)), atol=1e-13)


@given(arrays(np.float64, (3, 4), elements=st.floats(-20, 20)), st.floats(-100, 100))
def test_softmax_shift_invariant(v, c):
    a = ops.softmax(T(v), axis=0).data
    b = ops.softmax(T(v + c), axis=0).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(a.sum(axis=0), 1, atol=1e-12)


# -- backward -------------------------------------------------------------------------


def test_grad_sum_is_ones():
    w = T(np.random.default_rng(2).normal(size=(2, 3, 4)), True)
    w.sum().backward()
    np.testing.assert_array_equal(w.grad, np.ones((2, 3, 4)))


def test_grad_sum_square():
    w = T([1.0, 2.0, 3.0], True)
    (w * w).sum().backward()
    np.testing.assert_array_equal(w.grad, [2.0, 4.0, 6.0])


def test_backward_accumulates():
    w = T([1.0, 2.0, 3.0], True)
    (w * w).sum().backward()
    (w * w).sum().backward()
    np.testing.assert_array_equal(w.grad, [4.0, 8.0, 12.0])
    w.zero_grad()
    assert w.grad is None or not np.any(w.grad)


def test_non_scalar_loss_rejected():
    w = T([1.0, 2.0], True)
    with pytest.raises(ContractError):
        (w * 2.0).backward()


def test_shared_subgraph_visited_once():
    x = T([1.5], True)
    y = x * x
    z = (y + y) * y  # 2 x^4
    z.sum().backward()
    np.testing.assert_allclose(x.grad, [8 * 1.5 ** 3], rtol=1e-15)


def test_elementwise_examples():
    assert ops.silu(T(0.0)).data == 0.0
    rows = np.tile(np.array([1.0, -2.0, 3.5]), (4, 1))
    np.testing.assert_array_equal(ops.mean_pool(T(rows), 0).data, [1.0, -2.0, 3.5])
    np.testing.assert_array_equal(ops.pad_end(T([1.0, 2.0]), 2).data, [1.0, 2.0, 0.0, 0.0])
    with pytest.raises(DimensionError):
        ops.reshape(T(np.ones(6)), (4, 2))


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_reshape_roundtrip(shape):
    n = int(np.prod(shape))
    x = np.arange(n, dtype=np.float64)
    r = ops.reshape(ops.reshape(T(x), tuple(shape)), (n,))
    np.testing.assert_array_equal(r.data, x)


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    x, k = rng.normal(size=(2, 6, 5, 3)), rng.normal(size=(3, 3, 3, 3))
    a = ops.softmax(ops.conv2d_same(T(x), T(k)), axis=-1).data
    b = ops.softmax(ops.conv2d_same(T(x), T(k)), axis=-1).data
    assert a.tobytes() == b.tobytes()


# -- finite-difference sweep over every op ------------------------------------------------

UNARY = {
    "exp": (ops.exp, lambda r: r.normal(size=(3, 4))),
    "log": (ops.log, lambda r: r.uniform(0.5, 2.0, size=(3, 4))),
    "sigmoid": (ops.sigmoid, lambda r: r.normal(size=(3, 4))),
    "silu": (ops.silu, lambda r: r.normal(size=(3, 4))),
    "softplus": (ops.softplus, lambda r: r.normal(size=(3, 4))),
    "expm1_ratio": (ops.expm1_ratio, lambda r: r.normal(size=(3, 4))),
    "expm1_ratio_small": (ops.expm1_ratio, lambda r: r.normal(scale=1e-4, size=(3, 4))),
    "neg": (ops.neg, lambda r: r.normal(size=(3, 4))),
    "sum_axis": (lambda a: ops.sum(a, axis=1), lambda r: r.normal(size=(3, 4))),
    "mean_axis": (lambda a: ops.mean(a, axis=0, keepdims=True), lambda r: r.normal(size=(3, 4))),
    "mean_pool": (lambda a: ops.mean_pool(a, 1), lambda r: r.normal(size=(3, 4))),
    "reshape": (lambda a: ops.reshape(a, (2, 6)), lambda r: r.normal(size=(3, 4))),
    "transpose": (lambda a: ops.transpose(a, (2, 0, 1)), lambda r: r.normal(size=(2, 3, 4))),
    "swapaxes": (lambda a: ops.swapaxes(a, 0, 2), lambda r: r.normal(size=(2, 3, 4))),
    "pad_end": (lambda a: ops.pad_end(a, 3, axis=0), lambda r: r.normal(size=(3, 4))),
    "getitem": (lambda a: ops.getitem(a, (slice(None), np.array([0, 2, 2]))), lambda r: r.normal(size=(3, 4))),
    "take": (lambda a: ops.take(a, [2, 0, 2], axis=0), lambda r: r.normal(size=(3, 4))),
    "softmax": (lambda a: ops.softmax(a, axis=-1), lambda r: r.normal(size=(3, 4))),
    "softmax_axis0": (lambda a: ops.softmax(a, axis=0), lambda r: r.normal(size=(3, 4))),
    "log_softmax": (lambda a: ops.log_softmax(a, axis=-1), lambda r: r.normal(size=(3, 4))),
}

BINARY = {
    "add": (ops.add, (3, 4), (4,)),
    "sub": (ops.sub, (3, 4), (3, 1)),
    "mul": (ops.mul, (3, 4), (3, 4)),
    "div": (ops.div, (3, 4), (4,)),
    "matmul": (ops.matmul, (3, 4), (4, 2)),
    "matmul_batched": (ops.matmul, (2, 3, 4), (4, 5)),
    "conv2d_same": (ops.conv2d_same, (4, 3, 2), (3, 3, 2, 2)),
    "conv2d_batched": (ops.conv2d_same, (2, 4, 3, 2), (5, 1, 2, 3)),
    "concat": (lambda a, b: ops.concat([a, b], axis=0), (3, 4), (2, 4)),
    "stack": (lambda a, b: ops.stack([a, b], axis=1), (3, 4), (3, 4)),
}

SEEDS = range(20)


def _weighted(fn, *inputs, weight):
    out = fn(*inputs)
    return (out * Tensor(weight)).sum()


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_grad_matches_fd(name):
    fn, draw = UNARY[name]
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = draw(rng)
        weight = rng.normal(size=fn(T(x)).shape)
        xt = T(x, True)
        _weighted(fn, xt, weight=weight).backward()
        num = fd_grad(lambda v: float(_weighted(fn, T(v), weight=weight).data), x)
        assert rel_err(xt.grad, num) < 1e-6, (name, seed)


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_grad_matches_fd(name):
    fn, sa, sb = BINARY[name]
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        a = rng.normal(size=sa)
        b = rng.normal(size=sb)
        if name == "div":
            b = np.sign(b) * (np.abs(b) + 0.5)
        weight = rng.normal(size=fn(T(a), T(b)).shape)
        at, bt = T(a, True), T(b, True)
        _weighted(fn, at, bt, weight=weight).backward()
        na = fd_grad(lambda v: float(_weighted(fn, T(v), T(b), weight=weight).data), a)
        nb = fd_grad(lambda v: float(_weighted(fn, T(a), T(v), weight=weight).data), b)
        assert rel_err(at.grad, na) < 1e-6, (name, seed, "lhs")
        assert rel_err(bt.grad, nb) < 1e-6, (name, seed, "rhs")


def test_cross_entropy_grad_matches_fd():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(5, 3))
        y = rng.integers(0, 3, size=5)
        lt = T(logits, True)
        ops.cross_entropy(lt, y).backward()
        num = fd_grad(lambda v: float(ops.cross_entropy(T(v), y).data), logits)
        assert rel_err(lt.grad, num) < 1e-6


def test_cross_entropy_value():
    logits = np.array([[0.0, 0.0], [0.0, math.log(3)]])
    got = float(ops.cross_entropy(T(logits), [0, 1]).data)
    assert abs(got - 0.5 * (math.log(2) + math.log(4 / 3))) < 1e-15


def test_every_registered_rule_has_a_test():
    covered = {"add", "sub", "mul", "div", "neg", "exp", "log", "sigmoid", "silu", "softplus",
               "expm1_ratio", "sum", "mean", "matmul", "reshape", "transpose", "pad_end", "getitem",
               "take", "concat", "softmax", "log_softmax", "conv2d_same", "ssm_scan"}
    assert set(GRAD_RULES) <= covered, set(GRAD_RULES) - covered


# -- gradcheck negative control -----------------------------------------------------------


def test_corrupted_rule_is_detected():
    rng = np.random.default_rng(0)
    a, b = T(rng.normal(size=(3, 4)), True), T(rng.normal(size=(4, 2)), True)

    def loss():
        return ops.silu(a @ b).sum()

    clean = check_gradients(loss, {"a": a, "b": b})
    assert max(clean.values()) < 1e-8
    with corrupted_rule("matmul", 1.5):
        bad = check_gradients(loss, {"a": a, "b": b})
    assert min(bad.values()) > 0.1
    again = check_gradients(loss, {"a": a, "b": b})
    assert max(again.values()) < 1e-8
