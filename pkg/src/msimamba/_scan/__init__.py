"""Linear-recurrence kernels: compiled extension when built, numpy otherwise.

Set ``MSIMAMBA_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import fallback

_compiled = None
if os.environ.get("MSIMAMBA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"


def _prep(*arrays):
    dtype = np.result_type(*arrays)
    return [np.ascontiguousarray(a, dtype=dtype) for a in arrays]


def scan_forward(abar, bbar, c, u, backend: str | None = None):
    impl = _pick(backend)
    return impl.scan_forward(*_prep(abar, bbar, c, u))


def scan_backward(abar, bbar, c, u, h, gy, backend: str | None = None):
    impl = _pick(backend)
    return impl.scan_backward(*_prep(abar, bbar, c, u, h, gy))


def _pick(backend: str | None):
    if backend is None:
        return _compiled if _compiled is not None else fallback
    if backend == "numpy":
        return fallback
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled scan kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")


def available_backends() -> list[str]:
    return ["numpy"] + (["compiled"] if _compiled is not None else [])
