import numpy as np
import pytest
from hypothesis import given, strategies as st

from msimamba.autodiff import ContractError, DimensionError, Tensor
from msimamba.mstb import (
    KERNEL_SIZES, MstbParams, PatchGrid, aggregate_scales, flatten_truncate, msp_forward, mstb_forward,
    n_patches, pad_and_reshape,
)
from msimamba.spectral import spectral_plan

from _oracles import fd_grad, naive_conv_same, rel_err


def seq(L, C=1):
    return np.arange(L * C, dtype=np.float64).reshape(L, C) + 1.0


def test_fold_exact_fit():
    x = seq(6)
    g = pad_and_reshape(Tensor(x), 3, 2)
    assert g.pad_len == 0
    np.testing.assert_array_equal(g.data.data[:, :, 0], [[1, 4], [2, 5], [3, 6]])


def test_fold_pads_last_cell():
    g = pad_and_reshape(Tensor(seq(5)), 3, 2)
    assert g.pad_len == 1
    np.testing.assert_array_equal(g.data.data[:, :, 0], [[1, 4], [2, 5], [3, 0]])


def test_fold_too_small():
    with pytest.raises(ContractError):
        pad_and_reshape(Tensor(seq(7)), 3, 2)


@given(st.integers(1, 40), st.integers(1, 12), st.integers(1, 3))
def test_fold_layout_and_roundtrip(L, p, C):
    f = n_patches(L, p)
    x = np.random.default_rng(L * 100 + p).normal(size=(L, C))
    g = pad_and_reshape(Tensor(x), p, f)
    assert 0 <= g.pad_len < p
    padded = np.concatenate([x, np.zeros((g.pad_len, C))])
    for r in range(p):
        for c in range(f):
            np.testing.assert_array_equal(g.data.data[r, c], padded[c * p + r])
    np.testing.assert_array_equal(flatten_truncate(g, L).data, x)
    np.testing.assert_array_equal(flatten_truncate(g, p * f).data, padded)


def test_roundtrip_for_every_period_of_a_plan():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(64, 3))
    plan = spectral_plan(x, 3)
    for p, fq in zip(plan.periods, plan.freqs):
        g = pad_and_reshape(Tensor(x), p, fq)
        assert np.max(np.abs(flatten_truncate(g, 64).data - x)) == 0


def _grid(rng, p=5, f=4, C=2):
    return PatchGrid(Tensor(rng.normal(size=(p, f, C))), p, f, 0)


def test_msp_identity_and_zero():
    rng = np.random.default_rng(0)
    g = _grid(rng)
    ident = MstbParams.identity(2, 1).branches[0]
    np.testing.assert_array_equal(msp_forward(g, ident).data.data, g.data.data)
    zero = {s: (Tensor(np.zeros((s, s, 2, 2))), Tensor(np.zeros(2))) for s in KERNEL_SIZES}
    np.testing.assert_array_equal(msp_forward(g, zero).data.data, 0.0)


def test_msp_matches_loop_oracle():
    rng = np.random.default_rng(1)
    g = _grid(rng)
    convs = {s: (Tensor(rng.normal(size=(s, s, 2, 2))), Tensor(rng.normal(size=2))) for s in KERNEL_SIZES}
    ref = np.mean([naive_conv_same(g.data.data, w.data) + b.data for w, b in convs.values()], axis=0)
    assert np.max(np.abs(msp_forward(g, convs).data.data - ref)) < 1e-10


def test_msp_channel_mismatch():
    rng = np.random.default_rng(1)
    with pytest.raises(DimensionError):
        msp_forward(_grid(rng, C=3), MstbParams.identity(2, 1).branches[0])


def test_aggregate_examples():
    x = Tensor(np.random.default_rng(0).normal(size=(6, 2)))
    np.testing.assert_array_equal(aggregate_scales([x], [1.0]).data, x.data)
    np.testing.assert_array_equal(aggregate_scales([x, x, x], [0.2, 0.3, 0.5]).data, x.data)
    ones, threes = Tensor(np.ones((4, 2))), Tensor(np.full((4, 2), 3.0))
    np.testing.assert_allclose(aggregate_scales([ones, threes], [0.25, 0.75]).data, 2.5, atol=1e-15)
    with pytest.raises(DimensionError):
        aggregate_scales([ones, Tensor(np.ones((3, 2)))], [0.5, 0.5])


@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_aggregate_convexity(k, seed):
    rng = np.random.default_rng(seed)
    br = rng.normal(size=(k, 5, 3))
    w = rng.random(k)
    w /= w.sum()
    out = aggregate_scales([Tensor(b) for b in br], w).data
    np.testing.assert_allclose(out, np.tensordot(w, br, axes=1), atol=1e-12)
    assert np.all(out >= br.min(axis=0) - 1e-12)
    assert np.all(out <= br.max(axis=0) + 1e-12)


@given(st.integers(4, 96), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_identity_block_is_exact(L, k, C, seed):
    k = min(k, L // 2)
    x = np.random.default_rng(seed).normal(size=(L, C))
    out = mstb_forward(Tensor(x), spectral_plan(x, k), MstbParams.identity(C, k))
    assert out.shape == x.shape
    assert out.data.tobytes() == x.tobytes()


def test_batch_matches_per_sample():
    rng = np.random.default_rng(2)
    xb = rng.normal(size=(5, 24, 3))
    params = MstbParams.init(3, 2, rng, dtype=np.float64, noise=0.1)
    plans = [spectral_plan(x, 2) for x in xb]
    assert len({pl.periods for pl in plans}) > 1
    batched = mstb_forward(Tensor(xb), plans, params).data
    for i in range(5):
        single = mstb_forward(Tensor(xb[i]), plans[i], params).data
        np.testing.assert_allclose(batched[i], single, atol=1e-13)


def test_mstb_kernel_gradients_match_fd():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 20, 2))
    params = MstbParams.init(2, 2, rng, dtype=np.float64, noise=0.2)
    plans = [spectral_plan(s, 2) for s in x]
    named = params.named()
    out = mstb_forward(Tensor(x), plans, params)
    (out * out).sum().backward()
    for name, t in named.items():
        base = t.data.copy()

        def f(v):
            t.data = v
            o = mstb_forward(Tensor(x), plans, params).data
            return float((o * o).sum())

        num = fd_grad(f, base)
        t.data = base
        assert rel_err(t.grad, num) < 1e-4, name
