"""Temporal-spatial fusion: inverted embedding, diagonal SSM block, classifier.

The SSM has a diagonal state of size N (vectors ``a``, ``b_in``, ``c_out``,
``delta``). Its parameters are shared across the D model lanes: every lane of
the token sequence is a scalar input driving its own N-dim state, and the
lane's output is ``c_out . h_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _scan
from .autodiff import DimensionError, Tensor, ops, register
from .autodiff.ops import unbroadcast

SERIES_TOL = 1e-6


# -- embedding ----------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear expects last axis {weight.shape[0]}, got {x.shape}")
    if x.ndim == 1:
        y = ops.reshape(ops.matmul(ops.reshape(x, (1, -1)), weight), (weight.shape[1],))
    else:
        y = ops.matmul(x, weight)
    return y if bias is None else y + bias


def invert_embed(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """(..., L, C) -> (..., C, d): one token per channel from its L steps."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return linear(ops.swapaxes(x, -1, -2), weight, bias)


def temporal_embed(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """(..., L, C) -> (..., L, d): conventional one-token-per-time-step embedding."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return linear(x, weight, bias)


# -- discretisation -----------------------------------------------------------


def zoh_discretize(a, b_in, delta, tol: float = SERIES_TOL):
    """Zero-order hold for a diagonal system, elementwise on numpy arrays.

    Returns ``(abar, bbar)`` with abar = exp(delta*a) and
    bbar = (exp(delta*a) - 1)/a * b, switching to delta*b*(1 + delta*a/2)
    when |delta*a| < tol.
    """
    a = np.asarray(a, dtype=np.float64)
    b_in = np.asarray(b_in, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("step size must be positive; delta must come from softplus")
    z = delta * a
    abar = np.exp(z)
    small = np.abs(z) < tol
    safe_a = np.where(small, 1.0, a)
    exact = (abar - 1.0) / safe_a * b_in
    series = delta * b_in * (1.0 + z / 2.0)
    return abar, np.where(small, series, exact)


def zoh_tensors(a: Tensor, b_in: Tensor, delta: Tensor) -> tuple[Tensor, Tensor]:
    """Differentiable ZOH; bbar is written as b * delta * expm1(z)/z."""
    z = delta * a
    return ops.exp(z), b_in * delta * ops.expm1_ratio(z, SERIES_TOL)


# -- recurrence ---------------------------------------------------------------


def _scan_op(abar: Tensor, bbar: Tensor, c: Tensor, u: Tensor) -> Tensor:
    B, S, D = u.shape
    N = c.shape[0]
    A = np.broadcast_to(abar.data, (B, S, N))
    Bb = np.broadcast_to(bbar.data, (B, S, N))
    y, h = _scan.scan_forward(A, Bb, c.data, u.data)
    y = y.astype(u.dtype, copy=False)
    return Tensor._from_op(y, "ssm_scan", (abar, bbar, c, u), (A, Bb, c.data, u.data, h, abar.shape, bbar.shape))


@register("ssm_scan")
def _ssm_scan_grad(ctx, g):
    A, Bb, c, u, h, sa, sb = ctx
    gA, gB, gc, gu = _scan.scan_backward(A, Bb, c, u, h, g)
    return unbroadcast(gA, sa), unbroadcast(gB, sb), gc, gu


def ssm_scan(abar, bbar, c_out, u) -> Tensor:
    """h_t = abar*h_{t-1} + bbar*u_t, y_t = c_out . h_t with h_0 = 0.

    ``u`` is (S, D) or (B, S, D); abar/bbar are (N,) for a time-invariant
    system or (B, S, N) when they vary per step. Output has ``u``'s shape.
    """
    u = u if isinstance(u, Tensor) else Tensor(u)
    dt = u.dtype
    abar, bbar, c_out = (t if isinstance(t, Tensor) else Tensor(t, dtype=dt) for t in (abar, bbar, c_out))
    if u.ndim == 1:
        u = ops.reshape(u, (u.shape[0], 1))
        return ops.reshape(ssm_scan(abar, bbar, c_out, u), (u.shape[0],))
    single = u.ndim == 2
    if single:
        u = ops.reshape(u, (1,) + u.shape)
    if abar.shape[-1] != c_out.shape[0] or bbar.shape[-1] != c_out.shape[0]:
        raise DimensionError("abar, bbar and c_out must share the state size")
    y = _scan_op(abar, bbar, c_out, u)
    return ops.reshape(y, y.shape[1:]) if single else y


def ssm_kernel(abar, bbar, c_out, S: int) -> np.ndarray:
    """Impulse response K_t = sum_j c_j abar_j^t bbar_j for t = 0..S-1."""
    abar = np.asarray(abar, dtype=np.float64)
    coef = np.asarray(c_out, dtype=np.float64) * np.asarray(bbar, dtype=np.float64)
    powers = abar[:, None] ** np.arange(S)[None, :]
    return coef @ powers


def apply_kernel(K: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Causal convolution y_t = sum_{s<=t} K_{t-s} u_s along axis -2 of u."""
    u = np.asarray(u)
    S = u.shape[-2]
    lag = np.arange(S)[:, None] - np.arange(S)[None, :]
    T = np.where(lag >= 0, K[np.clip(lag, 0, None)], 0.0)
    return T @ u


def ssm_conv(a: Tensor, bbar: Tensor, c_out: Tensor, delta: Tensor, u: Tensor) -> Tensor:
    """Differentiable kernel path for the time-invariant system.

    abar^t is formed as exp(t * delta * a), the Toeplitz matrix is gathered
    from the kernel, and the output is one matmul against ``u`` (..., S, D).
    """
    S = u.shape[-2]
    lags = Tensor(np.arange(S, dtype=u.dtype))
    z = ops.reshape(delta * a, (-1, 1))
    powers = ops.exp(z * ops.reshape(lags, (1, S)))  # (N, S)
    coef = ops.reshape(c_out * bbar, (1, -1))
    K = ops.reshape(ops.matmul(coef, powers), (S,))
    lag = np.arange(S)[:, None] - np.arange(S)[None, :]
    mask = Tensor((lag >= 0).astype(u.dtype))
    T = ops.getitem(K, np.clip(lag, 0, None)) * mask
    return ops.matmul(T, u)


# -- block ----------------------------------------------------------------------


def softplus_inverse(y: float) -> float:
    return math.log(math.expm1(y))


@dataclass
class SsmParams:
    a_log: Tensor  # a = -exp(a_log)
    b_in: Tensor
    c_out: Tensor
    delta_raw: Tensor  # delta = softplus(delta_raw)
    w_delta: Tensor | None = None  # (D, N), selective mode only

    @property
    def a(self) -> Tensor:
        return -ops.exp(self.a_log)

    @property
    def delta(self) -> Tensor:
        return ops.softplus(self.delta_raw)

    def discretize(self) -> tuple[Tensor, Tensor]:
        return zoh_tensors(self.a, self.b_in, self.delta)


@dataclass
class IMambaParams:
    gate_w: Tensor
    gate_b: Tensor
    out_w: Tensor
    out_b: Tensor
    ssm: SsmParams | None

    @classmethod
    def init(cls, d_model: int, d_state: int, rng: np.random.Generator, dtype=np.float32,
             use_ssm: bool = True, selective: bool = False, delta_init: float = 0.1) -> "IMambaParams":
        bound = 1.0 / math.sqrt(d_model)

        def lin(n_in, n_out):
            return (
                Tensor(rng.uniform(-bound, bound, (n_in, n_out)), requires_grad=True, dtype=dtype),
                Tensor(rng.uniform(-bound, bound, n_out), requires_grad=True, dtype=dtype),
            )

        gw, gb = lin(d_model, d_model)
        ow, ob = lin(d_model, d_model)
        ssm = None
        if use_ssm:
            j = np.arange(d_state)
            ssm = SsmParams(
                a_log=Tensor(np.log(j + 1.0), requires_grad=True, dtype=dtype),
                b_in=Tensor(np.ones(d_state), requires_grad=True, dtype=dtype),
                c_out=Tensor(rng.normal(0.0, 1.0, d_state), requires_grad=True, dtype=dtype),
                delta_raw=Tensor(np.full(d_state, softplus_inverse(delta_init)), requires_grad=True, dtype=dtype),
                w_delta=(
                    Tensor(rng.normal(0.0, 0.01, (d_model, d_state)), requires_grad=True, dtype=dtype)
                    if selective else None
                ),
            )
        return cls(gw, gb, ow, ob, ssm)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.gate.weight": self.gate_w,
            f"{prefix}.gate.bias": self.gate_b,
            f"{prefix}.out_proj.weight": self.out_w,
            f"{prefix}.out_proj.bias": self.out_b,
        }
        if self.ssm is not None:
            out[f"{prefix}.ssm.a_log"] = self.ssm.a_log
            out[f"{prefix}.ssm.b_in"] = self.ssm.b_in
            out[f"{prefix}.ssm.c_out"] = self.ssm.c_out
            out[f"{prefix}.ssm.delta_raw"] = self.ssm.delta_raw
            if self.ssm.w_delta is not None:
                out[f"{prefix}.ssm.w_delta"] = self.ssm.w_delta
        return out

    @classmethod
    def from_named(cls, named: dict[str, Tensor], prefix: str) -> "IMambaParams":
        ssm = None
        if f"{prefix}.ssm.a_log" in named:
            ssm = SsmParams(
                named[f"{prefix}.ssm.a_log"], named[f"{prefix}.ssm.b_in"], named[f"{prefix}.ssm.c_out"],
                named[f"{prefix}.ssm.delta_raw"], named.get(f"{prefix}.ssm.w_delta"),
            )
        return cls(
            named[f"{prefix}.gate.weight"], named[f"{prefix}.gate.bias"],
            named[f"{prefix}.out_proj.weight"], named[f"{prefix}.out_proj.bias"], ssm,
        )


def ssm_forward(tokens: Tensor, ssm: SsmParams, mode: str = "scan") -> Tensor:
    """Run the SSM along the token axis (-2) of (B, S, D) tokens."""
    if ssm.w_delta is not None:
        if mode != "scan":
            raise ValueError("selective step sizes only support the scan path")
        # per-step delta: (B, S, N)
        delta = ops.softplus(ops.matmul(tokens, ssm.w_delta) + ssm.delta_raw)
        abar, bbar = zoh_tensors(ssm.a, ssm.b_in, delta)
        return _scan_op(abar, bbar, ssm.c_out, tokens)
    if mode == "kernel":
        a, delta = ssm.a, ssm.delta
        _, bbar = zoh_tensors(a, ssm.b_in, delta)
        return ssm_conv(a, bbar, ssm.c_out, delta, tokens)
    abar, bbar = ssm.discretize()
    return _scan_op(abar, bbar, ssm.c_out, tokens)


def imamba_forward(tokens: Tensor, layers, mode: str = "scan") -> Tensor:
    """out_proj(ssm(tokens) * silu(gate(tokens))), stacked over ``layers``.

    ``tokens`` is (S, D) or (B, S, D). A layer without SSM parameters passes
    the tokens straight to the gate product.
    """
    if isinstance(layers, IMambaParams):
        layers = [layers]
    single = tokens.ndim == 2
    x = ops.reshape(tokens, (1,) + tokens.shape) if single else tokens
    for layer in layers:
        v = ops.silu(linear(x, layer.gate_w, layer.gate_b))
        s = x if layer.ssm is None else ssm_forward(x, layer.ssm, mode)
        x = linear(s * v, layer.out_w, layer.out_b)
    return ops.reshape(x, x.shape[1:]) if single else x


def classifier_logits(features: Tensor, head_w: Tensor, head_b: Tensor) -> Tensor:
    """Mean over the token axis, then a linear map to class logits."""
    return linear(ops.mean(features, axis=-2), head_w, head_b)


def classify(features: Tensor, head_w: Tensor, head_b: Tensor) -> Tensor:
    return ops.softmax(classifier_logits(features, head_w, head_b), axis=-1)
