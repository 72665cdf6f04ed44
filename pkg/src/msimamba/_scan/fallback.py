"""Pure-numpy diagonal linear-recurrence kernels.

Shapes: ``abar`` and ``bbar`` are (B, S, N), ``c`` is (N,), ``u`` is (B, S, D).
The state ``h`` is (B, S, N, D): each of the D input lanes drives its own
N-dimensional diagonal state.
"""

from __future__ import annotations

import numpy as np


def scan_forward(abar: np.ndarray, bbar: np.ndarray, c: np.ndarray, u: np.ndarray):
    B, S, N = abar.shape
    D = u.shape[2]
    h = np.empty((B, S, N, D), dtype=u.dtype)
    prev = np.zeros((B, N, D), dtype=u.dtype)
    for t in range(S):
        prev = abar[:, t, :, None] * prev + bbar[:, t, :, None] * u[:, t, None, :]
        h[:, t] = prev
    y = np.einsum("n,bsnd->bsd", c, h)
    return y, h


def scan_backward(abar, bbar, c, u, h, gy):
    B, S, N = abar.shape
    gA = np.empty_like(abar)
    gB = np.empty_like(bbar)
    gu = np.empty_like(u)
    gc = np.einsum("bsd,bsnd->n", gy, h)
    carry = np.zeros((B, N, u.shape[2]), dtype=u.dtype)
    for t in range(S - 1, -1, -1):
        gh = c[None, :, None] * gy[:, t, None, :] + carry
        if t > 0:
            gA[:, t] = (gh * h[:, t - 1]).sum(-1)
        else:
            gA[:, t] = 0.0
        gB[:, t] = (gh * u[:, t, None, :]).sum(-1)
        gu[:, t] = (gh * bbar[:, t, :, None]).sum(1)
        carry = abar[:, t, :, None] * gh
    return gA, gB, gc, gu
