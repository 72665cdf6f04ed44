"""Multi-scale temporal block: fold by period, convolve, unfold, reweight."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import DimensionError, Tensor, ops
from .autodiff.tensor import ContractError
from .spectral import SpectralPlan

KERNEL_SIZES = (1, 3, 5)


@dataclass
class PatchGrid:
    data: Tensor  # (..., p, f, C)
    period: int
    count: int
    pad_len: int


def n_patches(L: int, p: int) -> int:
    return -(-L // p)


def pad_and_reshape(x: Tensor, p: int, f: int) -> PatchGrid:
    """Zero-pad (..., L, C) to length p*f and fold so column c is patch c.

    Element (r, c, ch) of the grid is padded[c*p + r, ch].
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    L, C = x.shape[-2], x.shape[-1]
    if p * f < L:
        raise ContractError(f"p*f = {p * f} cannot hold L = {L}")
    pad = p * f - L
    xp = ops.pad_end(x, pad, axis=-2)
    lead = x.shape[:-2]
    folded = ops.reshape(xp, lead + (f, p, C))
    nd = folded.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return PatchGrid(ops.transpose(folded, axes), p, f, pad)


def flatten_truncate(grid: PatchGrid, L: int) -> Tensor:
    """Undo the fold and keep the first L steps."""
    g = grid.data
    nd = g.ndim
    p, f, C = g.shape[-3], g.shape[-2], g.shape[-1]
    if p * f < L:
        raise ContractError(f"grid holds {p * f} steps, fewer than L = {L}")
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    seq = ops.reshape(ops.transpose(g, axes), g.shape[:-3] + (p * f, C))
    if p * f == L:
        return seq
    key = (Ellipsis, slice(0, L), slice(None))
    return ops.getitem(seq, key)


class MstbParams:
    """Per plan-rank branch: one (k, k, C, C) kernel and bias per kernel size."""

    def __init__(self, branches: list[dict[int, tuple[Tensor, Tensor]]]):
        self.branches = branches

    @classmethod
    def init(cls, C: int, k: int, rng: np.random.Generator, dtype=np.float32, noise: float = 0.02,
             sizes: Sequence[int] = KERNEL_SIZES) -> "MstbParams":
        branches = []
        for _ in range(k):
            convs = {}
            for s in sizes:
                w = rng.normal(0.0, noise, size=(s, s, C, C))
                w[s // 2, s // 2] += np.eye(C)
                convs[s] = (Tensor(w, requires_grad=True, dtype=dtype), Tensor(np.zeros(C), requires_grad=True, dtype=dtype))
            branches.append(convs)
        return cls(branches)

    @classmethod
    def identity(cls, C: int, k: int, dtype=np.float64, sizes: Sequence[int] = KERNEL_SIZES) -> "MstbParams":
        branches = []
        for _ in range(k):
            convs = {}
            for s in sizes:
                w = np.zeros((s, s, C, C))
                w[s // 2, s // 2] = np.eye(C)
                convs[s] = (Tensor(w, requires_grad=True, dtype=dtype), Tensor(np.zeros(C), requires_grad=True, dtype=dtype))
            branches.append(convs)
        return cls(branches)

    def named(self) -> dict[str, Tensor]:
        out = {}
        for i, convs in enumerate(self.branches):
            for s, (w, b) in convs.items():
                out[f"mstb.b{i}.k{s}.weight"] = w
                out[f"mstb.b{i}.k{s}.bias"] = b
        return out

    @classmethod
    def from_named(cls, named: dict[str, Tensor]) -> "MstbParams":
        branches: dict[int, dict[int, list]] = defaultdict(dict)
        for key, t in named.items():
            if not key.startswith("mstb."):
                continue
            _, b, kk, kind = key.split(".")
            slot = branches[int(b[1:])].setdefault(int(kk[1:]), [None, None])
            slot[0 if kind == "weight" else 1] = t
        return cls([{s: tuple(v) for s, v in sorted(branches[i].items())} for i in sorted(branches)])


def msp_forward(grid: PatchGrid, convs: dict[int, tuple[Tensor, Tensor]]) -> PatchGrid:
    """Average of parallel same-padded convolutions with distinct kernel sizes.

    The mean is taken as ``y0 + mean(y_j - y0)`` so identical branch outputs
    come back bit-exact.
    """
    C = grid.data.shape[-1]
    outs = []
    for s, (w, b) in convs.items():
        if w.shape[2] != C or w.shape[3] != C:
            raise DimensionError(f"kernel {w.shape} does not map {C} channels to {C}")
        outs.append(ops.conv2d_same(grid.data, w) + b)
    total = outs[0]
    if len(outs) > 1:
        dev = None
        for y in outs[1:]:
            d = y - outs[0]
            dev = d if dev is None else dev + d
        total = total + dev * (1.0 / len(outs))
    return PatchGrid(total, grid.period, grid.count, grid.pad_len)


def aggregate_scales(branches: Sequence[Tensor], weights) -> Tensor:
    """Convex combination of branches; weights are (k,) or per-sample (B, k).

    Evaluated as ``X_0 + sum_i w_i (X_i - X_0)``, which equals the weighted
    sum when the weights sum to one and is exact for identical branches.
    """
    w = np.asarray(weights, dtype=np.float64)
    shape = branches[0].shape
    if any(b.shape != shape for b in branches):
        raise DimensionError("branch shapes differ")
    if w.shape[-1] != len(branches):
        raise DimensionError(f"{len(branches)} branches but {w.shape[-1]} weights")
    base = branches[0]
    out = base
    for i, br in enumerate(branches[1:], start=1):
        if w.ndim == 1:
            wi = Tensor(np.asarray(w[i]), dtype=br.dtype)
        else:
            wi = Tensor(w[:, i].reshape((-1,) + (1,) * (br.ndim - 1)), dtype=br.dtype)
        out = out + (br - base) * wi
    return out


def mstb_forward(x: Tensor, plan: SpectralPlan | Sequence[SpectralPlan], params: MstbParams) -> Tensor:
    """Apply the block to one (L, C) segment with a single plan, or to a
    (B, L, C) batch with one plan per sample.

    Samples that share a period for a branch are folded
    and convolved together.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if isinstance(plan, SpectralPlan):
        single = x.ndim == 2
        xb = ops.reshape(x, (1,) + x.shape) if single else x
        plans = [plan] * xb.shape[0]
    else:
        single = False
        xb = x
        plans = list(plan)
    B, L, C = xb.shape
    if len(plans) != B:
        raise DimensionError(f"{len(plans)} plans for a batch of {B}")
    k = plans[0].k
    if any(pl.k != k for pl in plans):
        raise DimensionError("plans disagree on k")
    if len(params.branches) < k:
        raise DimensionError(f"plan has {k} scales but only {len(params.branches)} branch parameter sets")

    branches = []
    for i in range(k):
        groups: dict[int, list[int]] = defaultdict(list)
        for b, pl in enumerate(plans):
            groups[pl.periods[i]].append(b)
        pieces, order = [], []
        for p, idx in groups.items():
            part = xb if len(idx) == B else ops.take(xb, idx, axis=0)
            grid = pad_and_reshape(part, p, n_patches(L, p))
            pieces.append(flatten_truncate(msp_forward(grid, params.branches[i]), L))
            order.extend(idx)
        if len(pieces) == 1:
            branch = pieces[0]
        else:
            branch = ops.take(ops.concat(pieces, axis=0), np.argsort(order), axis=0)
        branches.append(branch)
    weights = np.array([pl.weights for pl in plans])
    out = aggregate_scales(branches, weights)
    return ops.reshape(out, (L, C)) if single else out
