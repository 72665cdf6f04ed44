"""Trial ingestion, segment preprocessing and the ``.eegs`` segment file format.

``.eegs`` layout (little-endian)::

    offset  size  field
    0       4     magic b"EEGS"
    4       4     version (u32, = 1)
    8       4     n_segments (u32)
    12      4     L (u32)
    16      4     C (u32)
    20      4     n_classes (u32)
    24      1     precision (u8, bytes per scalar: 4 or 8)
    25      7     reserved (zero)
    32      ...   per segment: label (u32) then L*C scalars, time-major
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"EEGS"
VERSION = 1
HEADER = struct.Struct("<4sIIIIIB7x")
ZSCORE_EPS = 1e-8


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where reading failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ChannelError(KeyError):
    def __init__(self, missing: Sequence[str]):
        super().__init__(f"missing channel(s): {', '.join(missing)}")
        self.missing = list(missing)

    def __str__(self) -> str:
        return self.args[0]


@dataclass
class TrialRecording:
    samples: np.ndarray  # (T, C), time-major
    rate_hz: float
    channel_names: list[str]
    ratings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise ValueError(f"samples must be a non-empty T x C matrix, got {self.samples.shape}")
        if len(self.channel_names) != self.samples.shape[1]:
            raise ValueError("channel_names length does not match sample columns")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("trial contains non-finite samples")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")

    @property
    def T(self) -> int:
        return self.samples.shape[0]

    @property
    def C(self) -> int:
        return self.samples.shape[1]


class SegmentDataset:
    """Fixed-length labelled segments stored as one (N, L, C) array."""

    def __init__(self, X: np.ndarray, y: Sequence[int], n_classes: int, provenance: list[tuple] | None = None):
        X = np.asarray(X)
        if X.ndim != 3:
            raise ValueError(f"segments must be (N, L, C), got shape {X.shape}")
        if X.dtype not in (np.float32, np.float64):
            X = X.astype(np.float64)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError("one label per segment required")
        if n_classes < 1 or (y.size and (y.min() < 0 or y.max() >= n_classes)):
            raise ValueError(f"labels must lie in [0, {n_classes})")
        if provenance is not None and len(provenance) != X.shape[0]:
            raise ValueError("provenance length does not match segment count")
        self.X = X
        self.y = y
        self.n_classes = int(n_classes)
        self.provenance = provenance

    @property
    def L(self) -> int:
        return self.X.shape[1]

    @property
    def C(self) -> int:
        return self.X.shape[2]

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx: Sequence[int]) -> "SegmentDataset":
        idx = np.asarray(idx, dtype=np.intp)
        prov = None if self.provenance is None else [self.provenance[i] for i in idx]
        return SegmentDataset(self.X[idx], self.y[idx], self.n_classes, prov)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SegmentDataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.X.shape == other.X.shape
            and self.X.dtype == other.X.dtype
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    def __repr__(self) -> str:
        return f"SegmentDataset(n={len(self)}, L={self.L}, C={self.C}, n_classes={self.n_classes})"

    @classmethod
    def concatenate(cls, parts: Sequence["SegmentDataset"]) -> "SegmentDataset":
        first = parts[0]
        for p in parts[1:]:
            if (p.L, p.C, p.n_classes) != (first.L, first.C, first.n_classes):
                raise ValueError("datasets disagree on L, C or n_classes")
        prov = None
        if all(p.provenance is not None for p in parts):
            prov = [r for p in parts for r in p.provenance]
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]), first.n_classes, prov)


# -- preprocessing ----------------------------------------------------------


def window_segments(trial: TrialRecording, L: int) -> list[np.ndarray]:
    """Non-overlapping windows of length L; the trailing remainder is dropped."""
    if L <= 0:
        raise ValueError("window length must be positive")
    if L > trial.T:
        raise ValueError(f"window length {L} exceeds trial length {trial.T}: no segments")
    n = trial.T // L
    return [trial.samples[i * L:(i + 1) * L].copy() for i in range(n)]


def zscore_normalize(x: np.ndarray, eps: float = ZSCORE_EPS) -> np.ndarray:
    """Per-channel (column) z-score with population std floored at ``eps``."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0, keepdims=True)
    sd = x.std(axis=0, keepdims=True)
    dev = x - mu
    # a rounded mean leaves ~1 ulp residue that eps would blow up
    dev[:, np.ptp(x, axis=0) == 0] = 0.0
    return dev / np.maximum(sd, eps)


def binarize_label(rating: float, threshold: float, inclusive: bool = False) -> int:
    """1 (high) when rating exceeds threshold; ``inclusive`` makes equality high too."""
    if inclusive:
        return int(rating >= threshold)
    return int(rating > threshold)


def select_channels(trial: TrialRecording, names: Sequence[str]) -> TrialRecording:
    missing = [n for n in names if n not in trial.channel_names]
    if missing:
        raise ChannelError(missing)
    cols = [trial.channel_names.index(n) for n in names]
    return TrialRecording(trial.samples[:, cols], trial.rate_hz, list(names), dict(trial.ratings))


def build_dataset(
    trials: Iterable[tuple[TrialRecording, int]],
    L: int,
    n_classes: int,
    subject: int = 0,
    normalize: bool = True,
) -> SegmentDataset:
    """Window every (trial, label) pair; all windows of a trial share its label."""
    X, y, prov = [], [], []
    for t_idx, (trial, label) in enumerate(trials):
        for w_idx, seg in enumerate(window_segments(trial, L)):
            X.append(zscore_normalize(seg) if normalize else seg)
            y.append(label)
            prov.append((subject, t_idx, w_idx))
    if not X:
        raise ValueError("no segments produced")
    return SegmentDataset(np.stack(X), y, n_classes, prov)


# -- file formats -------------------------------------------------------------


def read_csv_trial(path: str | Path, rate_hz: float = 128.0, ratings: dict | None = None) -> TrialRecording:
    """One trial per file: header row of channel names, one time step per row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV", 0)
    names = [h.strip() for h in rows[0]]
    data = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(names):
            raise FormatError(f"{path}: line {line_no} has {len(row)} fields, expected {len(names)}", line_no)
        try:
            data.append([float(v) for v in row])
        except ValueError as exc:
            raise FormatError(f"{path}: line {line_no}: {exc}", line_no) from None
    if not data:
        raise FormatError(f"{path}: no samples", 0)
    return TrialRecording(np.array(data), rate_hz, names, dict(ratings or {}))


def write_csv_trial(trial: TrialRecording, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trial.channel_names)
        for row in trial.samples:
            w.writerow([repr(float(v)) for v in row])


def _scalar_dtype(precision: int) -> np.dtype:
    if precision == 4:
        return np.dtype("<f4")
    if precision == 8:
        return np.dtype("<f8")
    raise ValueError(f"precision must be 4 or 8 bytes, got {precision}")


def dumps_segments(ds: SegmentDataset, precision: int | None = None) -> bytes:
    if precision is None:
        precision = ds.X.dtype.itemsize
    dt = _scalar_dtype(precision)
    n, L, C = ds.X.shape
    rec = np.dtype([("label", "<u4"), ("x", dt, (L * C,))])
    body = np.empty(n, dtype=rec)
    body["label"] = ds.y
    body["x"] = ds.X.reshape(n, L * C)
    return HEADER.pack(MAGIC, VERSION, n, L, C, ds.n_classes, precision) + body.tobytes()


def loads_segments(buf: bytes) -> SegmentDataset:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    if len(buf) < HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, version, n, L, C, n_classes, precision = HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if precision not in (4, 8):
        raise FormatError(f"bad precision byte {precision}", 24)
    if L == 0 or C == 0:
        raise FormatError("zero segment extent", 12 if L == 0 else 16)
    record = 4 + L * C * precision
    expected = HEADER.size + n * record
    if expected > len(buf):
        # where the first incomplete record starts
        complete = (len(buf) - HEADER.size) // record
        raise FormatError(
            f"truncated payload: need {expected} bytes for {n} segments, have {len(buf)}",
            HEADER.size + complete * record,
        )
    if expected < len(buf):
        raise FormatError(f"{len(buf) - expected} trailing bytes", expected)
    dt = _scalar_dtype(precision)
    rec = np.dtype([("label", "<u4"), ("x", dt, (L * C,))])
    body = np.frombuffer(buf, dtype=rec, count=n, offset=HEADER.size)
    labels = body["label"].astype(np.int64)
    if n and labels.max() >= n_classes:
        bad = int(np.argmax(labels >= n_classes))
        raise FormatError(f"label {labels[bad]} out of range for {n_classes} classes", HEADER.size + bad * record)
    X = body["x"].reshape(n, L, C).astype(dt.newbyteorder("="))
    return SegmentDataset(X, labels, n_classes)


def write_segments(ds: SegmentDataset, path: str | Path, precision: int | None = None) -> None:
    Path(path).write_bytes(dumps_segments(ds, precision))


def read_segments(path: str | Path) -> SegmentDataset:
    return loads_segments(Path(path).read_bytes())
