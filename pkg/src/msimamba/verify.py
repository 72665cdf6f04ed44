"""Self-checks shipped with the package: model gradcheck and scan benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _scan
from .autodiff import check_gradients
from .model import ModelConfig, MSIMamba
from .tsfb import apply_kernel, ssm_kernel, zoh_discretize

GRADCHECK_TOL = 1e-4
BENCH_TOL = 1e-8


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def tiny_model(seed: int = 0, **overrides) -> MSIMamba:
    cfg = dict(L=16, C=4, n_classes=2, d_model=8, precision=64)
    cfg.update(overrides)
    return MSIMamba.init(ModelConfig(**cfg), seed=seed)


def run_gradcheck(seed: int = 0, tol: float = GRADCHECK_TOL, step: float = 1e-5, **overrides) -> GradcheckReport:
    """Finite-difference check of every parameter tensor on a 2-segment batch."""
    model = tiny_model(seed, **overrides)
    rng = np.random.default_rng(seed + 1000)
    cfg = model.config
    x = rng.normal(size=(2, cfg.L, cfg.C))
    y = np.array([0, 1]) % cfg.n_classes
    t0 = time.perf_counter()
    errors = check_gradients(lambda: model.loss(x, y), model.params, step)
    return GradcheckReport(errors, tol, time.perf_counter() - t0)


def random_stable_ssm(rng: np.random.Generator, d: int):
    a = -rng.uniform(0.05, 3.0, d)
    delta = np.log1p(np.exp(rng.normal(-2.0, 1.0, d)))
    b = rng.normal(size=d)
    c = rng.normal(size=d)
    abar, bbar = zoh_discretize(a, b, delta)
    return abar, bbar, c


def _time(fn, reps: int) -> float:
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def run_scan_bench(S: int = 64, d: int = 64, reps: int = 20, seed: int = 0, lanes: int | None = None) -> dict:
    """Check scan/kernel agreement on random stable parameters, then time each path.

    The state size and the number of input lanes both default to ``d``.
    """
    if reps < 1 or S < 1 or d < 1:
        raise ValueError("len, dim and reps must be positive")
    rng = np.random.default_rng(seed)
    abar, bbar, c = random_stable_ssm(rng, d)
    D = lanes or d
    u = rng.normal(size=(S, D))
    A = np.broadcast_to(abar, (1, S, d))
    Bb = np.broadcast_to(bbar, (1, S, d))

    outputs = {}
    paths = {}
    for backend in _scan.available_backends():
        paths[f"scan[{backend}]"] = (lambda be=backend: _scan.scan_forward(A, Bb, c, u[None], backend=be)[0][0])
    paths["kernel"] = lambda: apply_kernel(ssm_kernel(abar, bbar, c, S), u)
    for name, fn in paths.items():
        outputs[name] = fn()
    ref = outputs["kernel"]
    diff = max(float(np.max(np.abs(out - ref))) for name, out in outputs.items() if name != "kernel")
    result = {"len": S, "dim": d, "lanes": D, "reps": reps, "backend": _scan.BACKEND,
              "max_abs_diff": diff, "agree": diff < BENCH_TOL, "paths": []}
    if not result["agree"]:
        return result
    for name, fn in paths.items():
        sec = _time(fn, reps)
        result["paths"].append({"path": name, "seconds": sec, "steps_per_second": S / sec})
    return result
