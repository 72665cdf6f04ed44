"""Loss, optimiser, schedule, data splits and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from typing import IO, Callable, Sequence

import numpy as np

from .autodiff import ContractError, Tensor
from .model import ModelConfig, MSIMamba
from .signal_io import SegmentDataset, zscore_normalize

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class SplitError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 10
    top_k: int = 2
    num_layers: int = 1
    d_model: int = 64
    d_state: int = 0  # 0 means "same as d_model"
    seed: int = 0
    precision: int = 32
    use_mstb: bool = True
    use_mamba: bool = True
    use_inverted: bool = True
    selective: bool = False
    ssm_mode: str = "scan"
    lr_decay: float = 0.5
    lr_patience: int = 1
    lr_min_delta: float = 1e-4
    lr_floor: float = 1e-5
    test_ratio: float = 0.2
    stratified: bool = False

    def __post_init__(self) -> None:
        for name in ("batch_size", "epochs", "top_k", "num_layers", "d_model", "lr_patience"):
            v = getattr(self, name)
            if v < 0 or (v == 0 and name != "epochs"):
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if not 0.0 < self.test_ratio < 1.0:
            raise ValueError("test_ratio must lie in (0, 1)")

    def model_config(self, L: int, C: int, n_classes: int) -> ModelConfig:
        return ModelConfig(
            L=L, C=C, n_classes=n_classes, d_model=self.d_model, d_state=self.d_state or None,
            top_k=self.top_k, num_layers=self.num_layers, use_mstb=self.use_mstb,
            use_mamba=self.use_mamba, use_inverted=self.use_inverted, selective=self.selective,
            ssm_mode=self.ssm_mode, precision=self.precision,
        )

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Metrics:
    train_loss: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    confusion: np.ndarray | None = None

    @property
    def final_accuracy(self) -> float:
        return accuracy(self.confusion) if self.confusion is not None else float("nan")

    def records(self) -> list[dict]:
        rows = [
            {"epoch": i + 1, "train_loss": l, "test_acc": a, "lr": r}
            for i, (l, a, r) in enumerate(zip(self.train_loss, self.test_acc, self.lr))
        ]
        if self.confusion is not None:
            rows.append({"final": True, "test_acc": self.final_accuracy, "confusion": self.confusion.tolist()})
        return rows

    def write_jsonl(self, fh: IO[str]) -> None:
        for row in self.records():
            fh.write(json.dumps(row) + "\n")


# -- loss -------------------------------------------------------------------------


def cross_entropy(probs, y: int) -> float:
    """-log probs[y] for one probability vector."""
    p = float(np.asarray(probs, dtype=np.float64)[y])
    return math.inf if p <= 0.0 else -math.log(p)


def accuracy(confusion: np.ndarray) -> float:
    total = confusion.sum()
    return float(np.trace(confusion) / total) if total else 0.0


def confusion_matrix(y_true, y_pred, n: int) -> np.ndarray:
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


# -- optimiser ------------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a dict of named tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        grads = {k: p.grad for k, p in self.params.items()}
        adam_step(self.params, grads, self, self.lr, self.t)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: Adam, lr: float, t: int) -> None:
    """One Adam update in place; a missing gradient counts as zero."""
    if t < 1:
        raise ContractError("Adam step count starts at 1")
    b1, b2, eps = state.b1, state.b2, state.eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads.get(k)
        m, v = state.m[k], state.v[k]
        if m.shape != p.shape:
            raise ContractError(f"optimizer state for {k} has shape {m.shape}, param {p.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ContractError(f"gradient for {k} has shape {g.shape}, param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


def lr_schedule(losses: Sequence[float], lr0: float = 1e-3, factor: float = 0.5, patience: int = 1,
                min_delta: float = 1e-4, floor: float = 1e-5) -> float:
    """Learning rate after the given epoch-loss history.

    Each epoch whose loss is not at least ``min_delta`` below the previous
    epoch's counts as a stall; ``patience`` consecutive stalls multiply the
    rate by ``factor``, never going below ``floor``.
    """
    lr = lr0
    stalls = 0
    for prev, cur in zip(losses, losses[1:]):
        if cur <= prev - min_delta:
            stalls = 0
            continue
        stalls += 1
        if stalls >= patience:
            lr = max(lr * factor, floor)
            stalls = 0
    return lr


# -- splits -------------------------------------------------------------------------


def _split_indices(y: np.ndarray, test_ratio: float, rng: np.random.Generator, stratified: bool):
    n = len(y)
    if not stratified:
        perm = rng.permutation(n)
        n_test = int(round(n * test_ratio))
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])
    train, test = [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n_test = int(round(len(idx) * test_ratio))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(train), np.sort(test)


def split_intra(ds: SegmentDataset, ratio: float = 0.8, seed: int = 0, stratified: bool = False):
    """Seeded shuffle split of one subject's segments into (train, test)."""
    if len(ds) < 5:
        raise SplitError(f"need at least 5 segments to split, have {len(ds)}")
    rng = np.random.default_rng(seed)
    tr, te = _split_indices(ds.y, 1.0 - ratio, rng, stratified)
    return ds.subset(tr), ds.subset(te)


def split_inter(datasets: Sequence[SegmentDataset], ratio: float = 0.8, seed: int = 0, stratified: bool = False):
    """Pool all subjects, shuffle, and split 4:1 (by default)."""
    pooled = SegmentDataset.concatenate(list(datasets))
    return split_intra(pooled, ratio, seed, stratified)


# -- loop -------------------------------------------------------------------------


def evaluate(model: MSIMamba, ds: SegmentDataset, batch_size: int = 32) -> np.ndarray:
    pred = model.predict(ds.X, batch_size)
    return confusion_matrix(ds.y, pred, ds.n_classes)


def train_loop(
    train: SegmentDataset,
    test: SegmentDataset,
    config: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
    model: MSIMamba | None = None,
) -> tuple[MSIMamba, Metrics]:
    if (train.L, train.C, train.n_classes) != (test.L, test.C, test.n_classes):
        raise ValueError(
            f"train/test disagree: L {train.L}/{test.L}, C {train.C}/{test.C}, n {train.n_classes}/{test.n_classes}"
        )
    if len(train) == 0:
        raise ValueError("empty training set")
    if model is None:
        model = MSIMamba.init(config.model_config(train.L, train.C, train.n_classes), seed=config.seed)
    metrics = Metrics()
    if config.epochs == 0:
        return model, metrics
    opt = Adam(model.params, lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    X = train.X.astype(model.config.dtype)
    bs = min(config.batch_size, len(train))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(order), bs), start=1):
            idx = order[start:start + bs]
            opt.zero_grad()
            loss = model.loss(X[idx], train.y[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(epoch, b, value)
            loss.backward()
            opt.step()
            total += value * len(idx)
            seen += len(idx)
        metrics.train_loss.append(total / seen)
        metrics.lr.append(opt.lr)
        cm = evaluate(model, test, bs) if len(test) else np.zeros((train.n_classes,) * 2, dtype=np.int64)
        metrics.test_acc.append(accuracy(cm))
        metrics.confusion = cm
        row = {"epoch": epoch, "train_loss": metrics.train_loss[-1], "test_acc": metrics.test_acc[-1], "lr": opt.lr}
        log.info("epoch %d loss %.4f acc %.4f lr %.2e", epoch, row["train_loss"], row["test_acc"], opt.lr)
        if on_epoch is not None:
            on_epoch(row)
        opt.lr = lr_schedule(metrics.train_loss, config.lr, config.lr_decay, config.lr_patience,
                             config.lr_min_delta, config.lr_floor)
    return model, metrics


# -- synthetic data ---------------------------------------------------------------

CLASS_BINS = (4, 12, 20)


def gen_synthetic(classes: int = 2, segments: int = 500, C: int = 4, L: int = 128, seed: int = 0,
                  noise: float = 0.3, normalize: bool = True) -> SegmentDataset:
    """Sinusoid mixtures whose dominant DFT bin identifies the class.

    Segment i has label i % classes. Each channel carries the class tone
    (amplitude 1, random phase near a per-segment phase), a weaker
    distractor tone at a random non-class bin, and Gaussian noise.
    """
    if classes not in (2, 3):
        raise ValueError("classes must be 2 or 3")
    bins = CLASS_BINS[:classes]
    if L // 2 <= max(bins) + 1:
        raise ValueError(f"L={L} too short for class bins {bins}")
    rng = np.random.default_rng(seed)
    t = np.arange(L)[:, None]
    others = np.array([f for f in range(1, L // 2) if f not in bins])
    X = np.empty((segments, L, C))
    y = np.arange(segments) % classes
    for i in range(segments):
        # channels share a segment phase, each offset by up to a quarter turn,
        # so the class tone survives averaging across channels
        phase = rng.uniform(0, 2 * np.pi) + rng.uniform(-np.pi / 2, np.pi / 2, size=(1, C))
        sig = np.cos(2 * np.pi * bins[y[i]] * t / L + phase)
        f2 = rng.choice(others)
        phase2 = rng.uniform(0, 2 * np.pi, size=(1, C))
        sig = sig + 0.3 * np.cos(2 * np.pi * f2 * t / L + phase2)
        sig = sig + rng.normal(0.0, noise, size=(L, C))
        X[i] = zscore_normalize(sig) if normalize else sig
    prov = [(0, i, 0) for i in range(segments)]
    return SegmentDataset(X, y, classes, prov)
