"""Dominant-period selection from the amplitude spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralPlan:
    freqs: tuple[int, ...]
    periods: tuple[int, ...]
    amplitudes: tuple[float, ...]
    weights: tuple[float, ...]

    @property
    def k(self) -> int:
        return len(self.freqs)


def amplitude_spectrum(x: np.ndarray) -> np.ndarray:
    """|DFT| of the channel-mean signal at bins 1..floor(L/2).

    Index ``i`` of the result is bin ``i + 1``. ``x`` is (L, C) or (L,).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    L = x.shape[0]
    if L < 4:
        raise ValueError(f"input too short for spectral analysis: L={L} < 4")
    return np.abs(np.fft.rfft(x))[1:L // 2 + 1]


def select_topk(amps: np.ndarray, k: int, L: int | None = None):
    """Top-k bins by amplitude, lower bin first on ties, sorted by amplitude.

    ``L`` defaults to ``2 * len(amps)``; pass it explicitly for odd lengths.
    """
    amps = np.asarray(amps, dtype=np.float64)
    if k < 1 or k > amps.size:
        raise ConfigError(f"k={k} outside [1, {amps.size}]")
    if L is None:
        L = 2 * amps.size
    order = np.argsort(-amps, kind="stable")[:k]
    freqs = order + 1
    periods = -(-L // freqs)
    return freqs.astype(int), periods.astype(int), amps[order]


def frequency_weights(topk_amps: np.ndarray) -> np.ndarray:
    a = np.asarray(topk_amps, dtype=np.float64)
    e = np.exp(a - a.max())
    return e / e.sum()


def spectral_plan(x: np.ndarray, k: int) -> SpectralPlan:
    L = np.asarray(x).shape[0]
    freqs, periods, top = select_topk(amplitude_spectrum(x), k, L)
    w = frequency_weights(top)
    return SpectralPlan(
        tuple(int(f) for f in freqs),
        tuple(int(p) for p in periods),
        tuple(float(a) for a in top),
        tuple(float(v) for v in w),
    )
