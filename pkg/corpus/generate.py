"""Regenerate the verification corpus from standalone brute-force oracles.

Nothing here imports ``msimamba``: every expected value comes from plain
loops, closed forms, or mpmath at 50 digits. Run from the repo root:

    python corpus/generate.py
"""

from __future__ import annotations

import cmath
import csv
import json
import math
import random
import shutil
import struct
from pathlib import Path

import mpmath

ROOT = Path(__file__).resolve().parent
mpmath.mp.dps = 50


def write_case(module, name, op, inputs, expected, tolerance, check, oracle, anchor,
               compare="abs", files=(), exact=False):
    d = ROOT / module / name
    if d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True)
    if inputs is not None:
        (d / "input.json").write_text(json.dumps(inputs, indent=1))
    (d / "expected.json").write_text(json.dumps(expected, indent=1))
    meta = {"op": op, "tolerance": tolerance, "check": check, "oracle": oracle, "anchor": anchor,
            "compare": compare, "files": list(files), "exact": exact}
    (d / "case.json").write_text(json.dumps(meta, indent=1))
    return d


def randn(rng, *shape):
    if not shape:
        return rng.gauss(0, 1)
    return [randn(rng, *shape[1:]) for _ in range(shape[0])]


# -- brute-force oracles ------------------------------------------------------------


def naive_conv_same(x, k):
    H, W, C = len(x), len(x[0]), len(x[0][0])
    kh, kw, Co = len(k), len(k[0]), len(k[0][0][0])
    out = [[[0.0] * Co for _ in range(W)] for _ in range(H)]
    for i in range(H):
        for j in range(W):
            for o in range(Co):
                s = 0.0
                for a in range(kh):
                    for b in range(kw):
                        ii, jj = i + a - kh // 2, j + b - kw // 2
                        if 0 <= ii < H and 0 <= jj < W:
                            for c in range(C):
                                s += x[ii][jj][c] * k[a][b][c][o]
                out[i][j][o] = s
    return out


def dft_amplitudes(x):
    L = len(x)
    return [abs(sum(x[t] * cmath.exp(-2j * math.pi * f * t / L) for t in range(L))) for f in range(1, L // 2 + 1)]


def softmax(v):
    m = max(v)
    e = [math.exp(a - m) for a in v]
    s = sum(e)
    return [a / s for a in e]


def scan(abar, bbar, c, u):
    N, D = len(abar), len(u[0])
    h = [[0.0] * D for _ in range(N)]
    ys = []
    for ut in u:
        for n in range(N):
            for d in range(D):
                h[n][d] = abar[n] * h[n][d] + bbar[n] * ut[d]
        ys.append([sum(c[n] * h[n][d] for n in range(N)) for d in range(D)])
    return ys


def eegs_bytes(segments, labels, L, C, n_classes, precision):
    fmt = "<f" if precision == 4 else "<d"
    out = bytearray(b"EEGS" + struct.pack("<IIIIIB", 1, len(segments), L, C, n_classes, precision) + bytes(7))
    for seg, y in zip(segments, labels):
        out += struct.pack("<I", y)
        for row in seg:
            for v in row:
                out += struct.pack(fmt, v)
    return bytes(out)


def msim_bytes(entries):
    out = bytearray(b"MSIM" + struct.pack("<II", 1, len(entries)))
    for name, shape, values in entries:
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(shape))
        out += b"".join(struct.pack("<I", s) for s in shape) + struct.pack("<B", 8)
        out += b"".join(struct.pack("<d", v) for v in values)
    return bytes(out)


def reshape(flat, shape):
    if len(shape) == 0:
        return flat[0]
    if len(shape) == 1:
        return list(flat)
    step = len(flat) // shape[0]
    return [reshape(flat[i * step:(i + 1) * step], shape[1:]) for i in range(shape[0])]


# -- cases -------------------------------------------------------------------------------


def tensor_cases(rng):
    m = "tensor_autodiff"
    A = [[1.0, 2.0], [3.0, 4.0]]
    write_case(m, "matmul_identity", "matmul", {"a": A, "b": [[1.0, 0.0], [0.0, 1.0]]}, A, 0.0,
               "by-construction", "identity case", "linear maps (SSM projections, classifier head)", exact=True)
    write_case(m, "matmul_zero", "matmul", {"a": A, "b": [[0.0, 0.0], [0.0, 0.0]]}, [[0.0, 0.0], [0.0, 0.0]], 0.0,
               "by-construction", "annihilator", "linear maps (SSM projections, classifier head)", exact=True)
    write_case(m, "softmax_uniform", "softmax", {"x": [2.5, 2.5, 2.5]}, [1 / 3] * 3, 1e-15,
               "by-construction", "symmetry", "frequency weights softmax")
    write_case(m, "softmax_ln3", "softmax", {"x": [0.0, math.log(3.0)]}, [0.25, 0.75], 1e-15,
               "independent-oracle", "closed form e^0/(1+3), 3/(1+3)", "frequency weights softmax")
    write_case(m, "softmax_shift", "softmax", {"x": [1000.0, 1000.0]}, [0.5, 0.5], 0.0,
               "by-construction", "shift invariance without overflow", "frequency weights softmax", exact=True)
    write_case(m, "grad_sum_square", "grad_sum_square", {"w": [1.0, 2.0, 3.0]}, [2.0, 4.0, 6.0], 0.0,
               "independent-oracle", "d/dw sum(w^2) = 2w", "parameter update by backpropagation", exact=True)
    write_case(m, "silu_zero", "silu", {"x": [0.0]}, [0.0], 0.0, "by-construction", "silu(0)=0", "gated SSM block", exact=True)
    rows = randn(rng, 3)
    write_case(m, "mean_pool_identical", "mean_pool", {"x": [rows] * 4, "axis": 0}, rows, 1e-15,
               "by-construction", "mean of identical rows", "token pooling before the classifier")
    x = randn(rng, 5, 4, 2)
    k = randn(rng, 3, 3, 2, 3)
    write_case(m, "conv2d_random", "conv2d_same", {"x": x, "kernel": k}, naive_conv_same(x, k), 1e-12,
               "independent-oracle", "naive quadruple-loop convolution", "multi-scale perception kernels")


def signal_cases(rng):
    m = "signal_io"
    T, L = 384, 128
    samples = [[float(t * 10 + c) for c in range(2)] for t in range(T)]
    write_case(m, "window_384_128", "window_segments", {"samples": samples, "L": L},
               [samples[i * L:(i + 1) * L] for i in range(3)], 0.0, "by-construction", "arithmetic forced",
               "non-overlapping windowing", exact=True)
    samples = [[float(t)] for t in range(130)]
    write_case(m, "window_130_128", "window_segments", {"samples": samples, "L": L}, [samples[:128]], 0.0,
               "by-construction", "remainder dropped", "non-overlapping windowing", exact=True)
    sd = math.sqrt(2.0 / 3.0)
    write_case(m, "zscore_123", "zscore", {"x": [[1.0], [2.0], [3.0]]}, [[-1 / sd], [0.0], [1 / sd]], 1e-12,
               "independent-oracle", "closed-form mean 2, population std sqrt(2/3)", "z-score normalisation")
    write_case(m, "zscore_constant", "zscore", {"x": [[4.0], [4.0], [4.0]]}, [[0.0], [0.0], [0.0]], 0.0,
               "by-construction", "epsilon guard", "z-score normalisation", exact=True)
    write_case(m, "binarize_deap", "binarize", {"ratings": [7.0, 3.0, 5.0], "threshold": 5.0}, [1.0, 0.0, 0.0], 0.0,
               "by-construction", "strict > threshold", "rating binarisation", exact=True)
    L, C = 4, 2
    segs = [randn(rng, L, C) for _ in range(3)]
    d = write_case(m, "eegs_roundtrip", "segments_roundtrip", None,
                   {"X": segs, "y": [0.0, 1.0, 1.0], "bytes_equal": 1.0}, 0.0, "by-construction", "round trip",
                   "segment file format", files=["input.eegs"], exact=True)
    (d / "input.eegs").write_bytes(eegs_bytes(segs, [0, 1, 1], L, C, 2, 8))
    names = ["FP1", "FP2", "AF3", "AF4"]
    data = [[round(rng.gauss(0, 1), 6) for _ in names] for _ in range(256)]
    d = write_case(m, "csv_256x4", "read_csv", None, {"samples": data, "shape": [256.0, 4.0]}, 0.0,
                   "by-construction", "CSV parse", "trial CSV ingestion", files=["input.csv"], exact=True)
    with open(d / "input.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows([[repr(v) for v in row] for row in data])


def spectral_cases(rng):
    m = "spectral_plan"
    x = [math.cos(2 * math.pi * 2 * t / 8) for t in range(8)]
    write_case(m, "cos_bin2_L8", "amplitude_spectrum", {"x": [[v] for v in x]}, dft_amplitudes(x), 1e-12,
               "independent-oracle", "brute-force DFT", "amplitude spectrum")
    L = 64
    x = [2 * math.cos(2 * math.pi * 3 * t / L + 0.3) + math.cos(2 * math.pi * 7 * t / L + 1.1) for t in range(L)]
    write_case(m, "two_tones_L64", "amplitude_spectrum", {"x": [[v] for v in x]}, dft_amplitudes(x), 1e-10,
               "independent-oracle", "brute-force DFT", "amplitude spectrum")
    write_case(m, "constant_signal", "amplitude_spectrum", {"x": [[1.5]] * 16}, [0.0] * 8, 1e-12,
               "by-construction", "DC excluded", "amplitude spectrum")
    write_case(m, "topk_tie", "select_topk", {"amps": [5.0, 5.0, 1.0], "k": 1, "L": 6},
               {"freqs": [1.0], "periods": [6.0], "amps": [5.0]}, 0.0, "by-construction", "tie goes to lower bin",
               "top-k frequency selection", exact=True)
    amps = [0.0] * 50
    amps[2] = 9.0
    amps[6] = 4.0
    write_case(m, "period_L100_f3", "select_topk", {"amps": amps, "k": 2, "L": 100},
               {"freqs": [3.0, 7.0], "periods": [34.0, 15.0], "amps": [9.0, 4.0]}, 0.0, "by-construction",
               "ceil(100/3)=34, ceil(100/7)=15", "period from frequency", exact=True)
    for trial in range(5):
        L = rng.choice([32, 64, 128])
        x = [rng.gauss(0, 1) for _ in range(L)]
        a = dft_amplitudes(x)
        order = sorted(range(len(a)), key=lambda i: (-a[i], i))[:2]
        write_case(m, f"topk_random_{trial}", "select_topk", {"amps": a, "k": 2, "L": L},
                   {"freqs": [float(i + 1) for i in order], "periods": [float(-(-L // (i + 1))) for i in order],
                    "amps": [a[i] for i in order]}, 0.0, "independent-oracle", "exhaustive sort of brute-force DFT",
                   "top-k frequency selection", exact=True)
    write_case(m, "weights_equal", "frequency_weights", {"amps": [3.0, 3.0]}, [0.5, 0.5], 0.0,
               "by-construction", "symmetry", "frequency weights softmax", exact=True)
    write_case(m, "weights_ln3", "frequency_weights", {"amps": [0.0, math.log(3.0)]}, [0.25, 0.75], 1e-15,
               "independent-oracle", "closed form", "frequency weights softmax")
    write_case(m, "weights_k1", "frequency_weights", {"amps": [7.0]}, [1.0], 0.0, "by-construction", "k=1", "frequency weights softmax",
               exact=True)


def mstb_cases(rng):
    m = "mstb"
    x = [[float(i)] for i in range(6)]
    write_case(m, "fold_L6_p3_f2", "pad_and_reshape", {"x": x, "p": 3, "f": 2},
               {"grid": [[[0.0], [3.0]], [[1.0], [4.0]], [[2.0], [5.0]]], "pad_len": 0.0}, 0.0,
               "by-construction", "column-contiguous layout", "pad and fold into patches", exact=True)
    x = [[float(i + 1)] for i in range(5)]
    write_case(m, "fold_L5_p3_f2", "pad_and_reshape", {"x": x, "p": 3, "f": 2},
               {"grid": [[[1.0], [4.0]], [[2.0], [5.0]], [[3.0], [0.0]]], "pad_len": 1.0}, 0.0,
               "by-construction", "zero fill", "pad and fold into patches", exact=True)
    ones = [[1.0, 1.0], [1.0, 1.0]]
    threes = [[3.0, 3.0], [3.0, 3.0]]
    write_case(m, "aggregate_quarter", "aggregate", {"branches": [ones, threes], "weights": [0.25, 0.75]},
               [[2.5, 2.5], [2.5, 2.5]], 1e-15, "independent-oracle", "hand evaluation 0.25*1 + 0.75*3", "weighted scale aggregation")
    grid = randn(rng, 6, 4, 3)
    convs = {}
    outs = []
    for s in (1, 3, 5):
        w = randn(rng, s, s, 3, 3)
        b = randn(rng, 3)
        convs[str(s)] = {"weight": w, "bias": b}
        y = naive_conv_same(grid, w)
        outs.append([[[y[i][j][o] + b[o] for o in range(3)] for j in range(4)] for i in range(6)])
    avg = [[[sum(o[i][j][c] for o in outs) / 3 for c in range(3)] for j in range(4)] for i in range(6)]
    write_case(m, "msp_random", "msp", {"grid": grid, "convs": convs}, avg, 1e-10, "independent-oracle",
               "naive per-branch convolution then average", "multi-scale perception")
    x = randn(rng, 48, 3)
    write_case(m, "mstb_identity", "mstb_identity", {"x": x, "k": 3}, x, 0.0, "by-construction",
               "identity kernels, weights sum to one", "multi-scale temporal block", exact=True)


def tsfb_cases(rng):
    m = "tsfb_imamba"
    write_case(m, "zoh_ln2", "zoh", {"a": [-1.0], "b": [1.0], "delta": [math.log(2.0)]},
               {"abar": [0.5], "bbar": [0.5]}, 1e-12, "independent-oracle", "scalar closed form", "zero-order hold discretisation")
    a, dl, b = mpmath.mpf("-1e-8"), mpmath.mpf(1), mpmath.mpf(1)
    exact = float(mpmath.expm1(dl * a) / a * b)
    write_case(m, "zoh_series", "zoh", {"a": [-1e-8], "b": [1.0], "delta": [1.0]},
               {"abar": [float(mpmath.exp(dl * a))], "bbar": [exact]}, 1e-9, "independent-oracle",
               "mpmath 50-digit expm1", "zero-order hold discretisation", compare="rel")
    z = mpmath.mpf("-9.9e-7")
    write_case(m, "zoh_series_edge", "zoh", {"a": [-9.9e-7], "b": [2.0], "delta": [1.0]},
               {"abar": [float(mpmath.exp(z))], "bbar": [float(mpmath.expm1(z) / z * 2)]}, 1e-9, "independent-oracle",
               "mpmath 50-digit expm1 near |delta*a| = 1e-6", "zero-order hold discretisation", compare="rel")
    write_case(m, "scan_hand", "ssm_scan", {"abar": [0.5], "bbar": [1.0], "c": [1.0], "u": [[1.0], [0.0], [0.0]]},
               [[1.0], [0.5], [0.25]], 0.0, "independent-oracle", "hand recurrence", "discrete recurrence", exact=True)
    N, D, S = 4, 3, 10
    abar = [rng.uniform(0.1, 0.95) for _ in range(N)]
    bbar = randn(rng, N)
    c = randn(rng, N)
    u = randn(rng, S, D)
    write_case(m, "scan_random", "ssm_scan", {"abar": abar, "bbar": bbar, "c": c, "u": u}, scan(abar, bbar, c, u),
               1e-12, "independent-oracle", "pure-python loop recurrence", "discrete recurrence")
    write_case(m, "kernel_hand", "ssm_kernel", {"abar": [0.5], "bbar": [1.0], "c": [1.0], "S": 3}, [1.0, 0.5, 0.25],
               0.0, "independent-oracle", "hand evaluation", "convolution kernel form", exact=True)
    impulse = [[1.0]] + [[0.0]] * (S - 1)
    write_case(m, "kernel_impulse", "ssm_kernel", {"abar": abar, "bbar": bbar, "c": c, "S": S},
               [row[0] for row in scan(abar, bbar, c, impulse)], 1e-12, "independent-oracle",
               "impulse response of the loop recurrence", "convolution kernel form")
    L, C = 5, 3
    x = randn(rng, L, C)
    eye = [[1.0 if i == j else 0.0 for j in range(L)] for i in range(L)]
    write_case(m, "embed_identity", "invert_embed", {"x": x, "weight": eye, "bias": [0.0] * L},
               [[x[t][c] for t in range(L)] for c in range(C)], 0.0, "by-construction", "transpose",
               "inverted channel-token embedding", exact=True)
    write_case(m, "classify_zero", "classify",
               {"features": randn(rng, 4, 6), "weight": [[0.0] * 3 for _ in range(6)], "bias": [0.0] * 3},
               [1 / 3] * 3, 1e-15, "by-construction", "zero head gives uniform", "linear classifier with softmax")
    write_case(m, "classify_ln3", "classify",
               {"features": [[1.0]], "weight": [[0.0, math.log(3.0)]], "bias": [0.0, 0.0]},
               [0.25, 0.75], 1e-15, "independent-oracle", "closed form", "linear classifier with softmax")
    shape = [2, 3]
    vals = [rng.gauss(0, 1) for _ in range(6)]
    d = write_case(m, "msim_roundtrip", "checkpoint_roundtrip", None,
                   {"bytes_equal": 1.0, "head.weight": reshape(vals, shape), "meta.L": 16.0}, 0.0,
                   "by-construction", "round trip", "checkpoint format", files=["input.msim"], exact=True)
    (d / "input.msim").write_bytes(msim_bytes([("head.weight", shape, vals), ("meta.L", [], [16.0])]))


def training_cases(rng):
    m = "training"
    write_case(m, "cross_entropy", "cross_entropy",
               {"probs": [[1.0, 0.0], [0.5, 0.5], [1 / 3, 1 / 3, 1 / 3]], "labels": [0, 1, 2]},
               [0.0, math.log(2.0), math.log(3.0)], 1e-15, "independent-oracle", "closed form -log p", "cross-entropy loss")
    p0, lr, g = [0.5, -1.0], 1e-3, [0.2, -3.0]
    b1, b2, eps = 0.9, 0.999, 1e-8
    m1 = [0.0, 0.0]
    v1 = [0.0, 0.0]
    p = list(p0)
    trace = []
    for t in (1, 2):
        for i in range(2):
            m1[i] = b1 * m1[i] + (1 - b1) * g[i]
            v1[i] = b2 * v1[i] + (1 - b2) * g[i] ** 2
            mh = m1[i] / (1 - b1 ** t)
            vh = v1[i] / (1 - b2 ** t)
            p[i] -= lr * mh / (math.sqrt(vh) + eps)
        trace.append(list(p))
    write_case(m, "adam_two_steps", "adam_trace", {"param": p0, "lr": lr, "grads": [g, g]}, trace, 1e-12,
               "independent-oracle", "hand-rolled bias-corrected Adam", "Adam optimiser")
    write_case(m, "lr_plateau", "lr_schedule",
               {"histories": [[1.0, 0.9, 0.8], [1.0, 1.0], [1.0] * 12]}, [1e-3, 5e-4, 1e-5], 1e-18,
               "by-construction", "halve on stall, floor 1e-5", "plateau learning-rate schedule")


def main():
    rng = random.Random(20240601)
    tensor_cases(rng)
    signal_cases(rng)
    spectral_cases(rng)
    mstb_cases(rng)
    tsfb_cases(rng)
    training_cases(rng)
    print(f"corpus written under {ROOT}")


if __name__ == "__main__":
    main()
