"""Replay the checked-in verification corpus.

Layout: ``<root>/<module>/<case>/`` holding ``case.json`` (op, tolerance,
check, oracle, anchor), ``input.*`` and ``expected.json``. Expected values
were produced by the standalone oracles in ``corpus/generate.py``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import mstb, signal_io, spectral, training, tsfb
from .autodiff import Tensor, ops
from .model import loads_checkpoint, dumps_checkpoint

REQUIRED = ("case.json", "expected.json")


class CorpusError(FileNotFoundError):
    pass


@dataclass
class CaseResult:
    module: str
    case: str
    passed: bool
    error: float
    tolerance: float
    detail: str = ""


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _op_matmul(inp, d):
    return (Tensor(_arr(inp["a"])) @ Tensor(_arr(inp["b"]))).data


def _op_softmax(inp, d):
    return ops.softmax(Tensor(_arr(inp["x"])), axis=-1).data


def _op_silu(inp, d):
    return ops.silu(Tensor(_arr(inp["x"]))).data


def _op_grad_sum_square(inp, d):
    w = Tensor(_arr(inp["w"]), requires_grad=True)
    (w * w).sum().backward()
    return w.grad


def _op_conv2d_same(inp, d):
    return ops.conv2d_same(Tensor(_arr(inp["x"])), Tensor(_arr(inp["kernel"]))).data


def _op_mean_pool(inp, d):
    return ops.mean_pool(Tensor(_arr(inp["x"])), inp["axis"]).data


def _op_window_segments(inp, d):
    x = _arr(inp["samples"])
    trial = signal_io.TrialRecording(x, 128.0, [f"ch{i}" for i in range(x.shape[1])])
    return np.stack(signal_io.window_segments(trial, inp["L"]))


def _op_zscore(inp, d):
    return signal_io.zscore_normalize(_arr(inp["x"]))


def _op_binarize(inp, d):
    return np.array([signal_io.binarize_label(r, inp["threshold"]) for r in inp["ratings"]], dtype=float)


def _op_segments_roundtrip(inp, d):
    raw = (d / "input.eegs").read_bytes()
    ds = signal_io.loads_segments(raw)
    again = signal_io.dumps_segments(ds)
    return {"X": ds.X, "y": ds.y.astype(float), "bytes_equal": float(again == raw)}


def _op_read_csv(inp, d):
    trial = signal_io.read_csv_trial(d / "input.csv")
    return {"samples": trial.samples, "shape": np.array(trial.samples.shape, dtype=float)}


def _op_amplitude_spectrum(inp, d):
    return spectral.amplitude_spectrum(_arr(inp["x"]))


def _op_select_topk(inp, d):
    f, p, a = spectral.select_topk(_arr(inp["amps"]), inp["k"], inp.get("L"))
    return {"freqs": f.astype(float), "periods": p.astype(float), "amps": a}


def _op_frequency_weights(inp, d):
    return spectral.frequency_weights(_arr(inp["amps"]))


def _op_pad_and_reshape(inp, d):
    g = mstb.pad_and_reshape(Tensor(_arr(inp["x"])), inp["p"], inp["f"])
    return {"grid": g.data.data, "pad_len": float(g.pad_len)}


def _op_msp(inp, d):
    x = _arr(inp["grid"])
    convs = {int(k): (Tensor(_arr(v["weight"])), Tensor(_arr(v["bias"]))) for k, v in inp["convs"].items()}
    return mstb.msp_forward(mstb.PatchGrid(Tensor(x), x.shape[0], x.shape[1], 0), convs).data.data


def _op_aggregate(inp, d):
    return mstb.aggregate_scales([Tensor(_arr(b)) for b in inp["branches"]], inp["weights"]).data


def _op_mstb_identity(inp, d):
    x = _arr(inp["x"])
    plan = spectral.spectral_plan(x, inp["k"])
    return mstb.mstb_forward(Tensor(x), plan, mstb.MstbParams.identity(x.shape[1], inp["k"])).data


def _op_zoh(inp, d):
    abar, bbar = tsfb.zoh_discretize(inp["a"], inp["b"], inp["delta"])
    return {"abar": abar, "bbar": bbar}


def _op_ssm_scan(inp, d):
    return tsfb.ssm_scan(_arr(inp["abar"]), _arr(inp["bbar"]), _arr(inp["c"]), _arr(inp["u"])).data


def _op_ssm_kernel(inp, d):
    return tsfb.ssm_kernel(inp["abar"], inp["bbar"], inp["c"], inp["S"])


def _op_invert_embed(inp, d):
    return tsfb.invert_embed(Tensor(_arr(inp["x"])), Tensor(_arr(inp["weight"])), Tensor(_arr(inp["bias"]))).data


def _op_classify(inp, d):
    feats = Tensor(_arr(inp["features"]))
    return tsfb.classify(feats, Tensor(_arr(inp["weight"])), Tensor(_arr(inp["bias"]))).data


def _op_cross_entropy(inp, d):
    return np.array([training.cross_entropy(p, y) for p, y in zip(inp["probs"], inp["labels"])])


def _op_adam_trace(inp, d):
    p = Tensor(_arr(inp["param"]), requires_grad=True)
    opt = training.Adam({"p": p}, lr=inp["lr"])
    trace = []
    for g in inp["grads"]:
        p.grad = _arr(g)
        opt.step()
        trace.append(p.data.copy())
    return np.array(trace)


def _op_lr_schedule(inp, d):
    return np.array([training.lr_schedule(h) for h in inp["histories"]])


def _op_checkpoint_roundtrip(inp, d):
    raw = (d / "input.msim").read_bytes()
    entries = loads_checkpoint(raw)
    return {"bytes_equal": float(dumps_checkpoint(entries) == raw), **{k: v for k, v in entries.items()}}


OPS: dict[str, Callable[[dict, Path], Any]] = {
    name[4:]: fn for name, fn in globals().items() if name.startswith("_op_")
}


def _flatten(obj: Any, prefix: str = "") -> dict[str, np.ndarray]:
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}."))
        return out
    return {prefix.rstrip(".") or "value": np.asarray(obj, dtype=np.float64)}


def compare(actual: Any, expected: Any, mode: str) -> float:
    a, e = _flatten(actual), _flatten(expected)
    if set(a) != set(e):
        return math.inf
    worst = 0.0
    for key in e:
        if a[key].shape != e[key].shape:
            return math.inf
        diff = np.abs(a[key] - e[key])
        if mode == "rel":
            diff = diff / np.maximum(np.abs(e[key]), 1e-300)
        worst = max(worst, float(diff.max()) if diff.size else 0.0)
    return worst


def load_case(d: Path) -> tuple[dict, dict, Any]:
    for name in REQUIRED:
        if not (d / name).is_file():
            raise CorpusError(f"missing corpus file: {d / name}")
    meta = json.loads((d / "case.json").read_text())
    inp_path = d / "input.json"
    inputs = json.loads(inp_path.read_text()) if inp_path.is_file() else {}
    for extra in meta.get("files", []):
        if not (d / extra).is_file():
            raise CorpusError(f"missing corpus file: {d / extra}")
    expected = json.loads((d / "expected.json").read_text())
    return meta, inputs, expected


def run_case(d: Path, tol_scale: float = 1.0) -> CaseResult:
    meta, inputs, expected = load_case(d)
    fn = OPS[meta["op"]]
    tol = meta["tolerance"] * tol_scale
    err = compare(fn(inputs, d), expected, meta.get("compare", "abs"))
    return CaseResult(d.parent.name, d.name, err <= tol, err, tol, meta.get("oracle", ""))


def case_dirs(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root not found: {root}")
    return sorted(p for p in root.glob("*/*") if p.is_dir())


def run_corpus(root: str | Path = "corpus", tol_scale: float = 1.0) -> list[CaseResult]:
    return [run_case(d, tol_scale) for d in case_dirs(root)]
