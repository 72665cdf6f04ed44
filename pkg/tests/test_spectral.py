import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from msimamba.spectral import ConfigError, amplitude_spectrum, frequency_weights, select_topk, spectral_plan

from _oracles import dft_amplitudes, topk_by_sort


def test_cosine_bin2():
    t = np.arange(8)
    amps = amplitude_spectrum(np.cos(2 * np.pi * 2 * t / 8))
    assert int(np.argmax(amps)) + 1 == 2
    np.testing.assert_allclose(amps, dft_amplitudes(list(np.cos(2 * np.pi * 2 * t / 8))), atol=1e-12)


def test_constant_signal_has_no_retained_energy():
    assert np.all(amplitude_spectrum(np.full((16, 3), 7.0)) < 1e-12)


def test_two_tones_ratio():
    t = np.arange(64)
    x = 2 * np.sin(2 * np.pi * 3 * t / 64) + np.sin(2 * np.pi * 7 * t / 64)
    amps = amplitude_spectrum(x)
    assert abs(amps[2] / amps[6] - 2) < 1e-6


def test_channel_mean_signal():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(32, 4))
    np.testing.assert_allclose(amplitude_spectrum(x), dft_amplitudes(list(x.mean(axis=1))), atol=1e-11)


def test_too_short():
    with pytest.raises(ValueError):
        amplitude_spectrum(np.ones(3))


def test_tie_goes_to_lower_bin():
    f, p, a = select_topk(np.array([5.0, 5.0, 1.0]), 1)
    assert list(f) == [1]


def test_period_ceiling():
    amps = np.zeros(50)
    amps[2] = 1.0
    f, p, _ = select_topk(amps, 1, L=100)
    assert (f[0], p[0]) == (3, 34)


def test_k_too_large():
    with pytest.raises(ConfigError):
        select_topk(np.ones(4), 5)
    with pytest.raises(ConfigError):
        select_topk(np.ones(4), 0)


def test_random_spectra_match_sort_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        amps = rng.random(32)
        f, _, top = select_topk(amps, 2)
        assert list(f) == topk_by_sort(list(amps), 2)
        assert list(top) == sorted(amps, reverse=True)[:2]


@given(arrays(np.float64, st.integers(2, 20), elements=st.sampled_from([0.0, 1.0, 2.0, 2.5])), st.data())
def test_topk_with_ties_matches_oracle(amps, data):
    k = data.draw(st.integers(1, len(amps)))
    f, _, _ = select_topk(amps, k)
    assert list(f) == topk_by_sort(list(amps), k)


def test_weights_examples():
    np.testing.assert_array_equal(frequency_weights([3.0, 3.0]), [0.5, 0.5])
    np.testing.assert_allclose(frequency_weights([0.0, math.log(3)]), [0.25, 0.75], atol=1e-15)
    np.testing.assert_array_equal(frequency_weights([9.0]), [1.0])


@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(0, 100)), st.floats(-50, 50))
def test_weights_contract(amps, shift):
    w = frequency_weights(amps)
    assert abs(w.sum() - 1) < 1e-12
    assert np.all(w > 0) and np.all(w <= 1)
    assert np.all(amps[np.argmax(w)] == amps.max())
    np.testing.assert_allclose(frequency_weights(amps + shift), w, atol=1e-12)


@given(st.integers(4, 160), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_plan_invariants(L, k, seed):
    k = min(k, L // 2)
    x = np.random.default_rng(seed).normal(size=(L, 2))
    plan = spectral_plan(x, k)
    assert plan.k == k == len(plan.periods) == len(plan.amplitudes) == len(plan.weights)
    assert abs(sum(plan.weights) - 1) < 1e-12
    for f, p in zip(plan.freqs, plan.periods):
        assert 1 <= p <= L
        assert 0 <= p * f - L < f
    assert list(plan.amplitudes) == sorted(plan.amplitudes, reverse=True)
