"""The full classifier and its ``.msim`` checkpoint format.

``.msim`` layout (little-endian): magic b"MSIM", version u32, entry count u32,
then per entry: name length u16, UTF-8 name, rank u8, rank x u32 extents,
precision u8 (4 or 8 bytes per scalar), raw scalars in row-major order.
Model hyperparameters travel as rank-0 float64 entries named ``meta.*``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import mstb as _mstb
from .autodiff import DimensionError, Tensor, ops
from .signal_io import FormatError
from .spectral import spectral_plan
from .tsfb import IMambaParams, classifier_logits, imamba_forward, linear

CKPT_MAGIC = b"MSIM"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    L: int
    C: int
    n_classes: int
    d_model: int = 64
    d_state: int | None = None  # defaults to d_model
    top_k: int = 2
    num_layers: int = 1
    use_mstb: bool = True
    use_mamba: bool = True
    use_inverted: bool = True
    selective: bool = False
    ssm_mode: str = "scan"
    precision: int = 32

    def __post_init__(self) -> None:
        if self.d_state is None:
            self.d_state = self.d_model
        for name in ("L", "C", "n_classes", "d_model", "d_state", "top_k", "num_layers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.ssm_mode not in ("scan", "kernel"):
            raise ValueError("ssm_mode must be 'scan' or 'kernel'")
        if self.selective and self.ssm_mode == "kernel":
            raise ValueError("the kernel path needs a time-invariant SSM")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    @property
    def variant(self) -> str:
        names = {
            (True, False, False): "Multi-Scale",
            (False, True, False): "Mamba",
            (True, True, False): "Mamba+Multi-Scale",
            (False, True, True): "iMamba",
            (True, True, True): "iMamba+Multi-Scale",
        }
        return names.get((self.use_mstb, self.use_mamba, self.use_inverted), "custom")


# Table of the five ablation variants: (use_mstb, use_mamba, use_inverted)
VARIANTS = {
    "Multi-Scale": (True, False, False),
    "Mamba": (False, True, False),
    "Mamba+Multi-Scale": (True, True, False),
    "iMamba": (False, True, True),
    "iMamba+Multi-Scale": (True, True, True),
}


class MSIMamba:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self._bind()

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "MSIMamba":
        rng = np.random.default_rng(seed)
        dt = config.dtype
        params: dict[str, Tensor] = {}
        if config.use_mstb:
            params.update(_mstb.MstbParams.init(config.C, config.top_k, rng, dtype=dt).named())
        n_in = config.L if config.use_inverted else config.C
        bound = 1.0 / math.sqrt(n_in)
        params["embed.weight"] = Tensor(rng.uniform(-bound, bound, (n_in, config.d_model)), requires_grad=True, dtype=dt)
        params["embed.bias"] = Tensor(rng.uniform(-bound, bound, config.d_model), requires_grad=True, dtype=dt)
        for i in range(config.num_layers):
            layer = IMambaParams.init(config.d_model, config.d_state, rng, dtype=dt,
                                      use_ssm=config.use_mamba, selective=config.selective)
            params.update(layer.named(f"layers.{i}"))
        bound = 1.0 / math.sqrt(config.d_model)
        params["head.weight"] = Tensor(rng.uniform(-bound, bound, (config.d_model, config.n_classes)), requires_grad=True, dtype=dt)
        params["head.bias"] = Tensor(np.zeros(config.n_classes), requires_grad=True, dtype=dt)
        for name, t in params.items():
            t.name = name
        return cls(config, params)

    def _bind(self) -> None:
        cfg = self.config
        self.mstb = _mstb.MstbParams.from_named(self.params) if cfg.use_mstb else None
        self.layers = [IMambaParams.from_named(self.params, f"layers.{i}") for i in range(cfg.num_layers)]

    def plans(self, x: np.ndarray):
        return [spectral_plan(seg, self.config.top_k) for seg in x]

    def logits(self, x: np.ndarray) -> Tensor:
        """Class logits for a (B, L, C) batch (or one (L, C) segment)."""
        cfg = self.config
        x = np.asarray(x)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.shape[1:] != (cfg.L, cfg.C):
            raise DimensionError(f"model expects segments of L={cfg.L}, C={cfg.C}; got L={x.shape[1]}, C={x.shape[2]}")
        h = Tensor(x, dtype=cfg.dtype)
        if cfg.use_mstb:
            h = _mstb.mstb_forward(h, self.plans(x), self.mstb)
        if cfg.use_inverted:
            h = ops.swapaxes(h, -1, -2)
        tokens = linear(h, self.params["embed.weight"], self.params["embed.bias"])
        feats = imamba_forward(tokens, self.layers, cfg.ssm_mode)
        out = classifier_logits(feats, self.params["head.weight"], self.params["head.bias"])
        return ops.reshape(out, (cfg.n_classes,)) if single else out

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return ops.softmax(self.logits(x), axis=-1).data

    def predict(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        x = np.asarray(x)
        out = [np.argmax(self.logits(x[i:i + batch_size]).data, axis=-1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def loss(self, x: np.ndarray, y) -> Tensor:
        return ops.cross_entropy(self.logits(x), y)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        entries = {f"meta.{k}": np.float64(_meta_value(v)) for k, v in asdict(self.config).items()}
        entries.update({k: t.data for k, t in self.params.items()})
        write_checkpoint(path, entries)

    @classmethod
    def load(cls, path: str | Path) -> "MSIMamba":
        entries = read_checkpoint(path)
        meta = {k[5:]: v for k, v in entries.items() if k.startswith("meta.")}
        kwargs = {}
        for f in fields(ModelConfig):
            if f.name not in meta:
                raise FormatError(f"checkpoint lacks meta.{f.name}", 0)
            kwargs[f.name] = _meta_decode(f.name, float(meta[f.name]))
        config = ModelConfig(**kwargs)
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in entries.items() if not k.startswith("meta.")}
        return cls(config, params)


_SSM_MODES = ("scan", "kernel")


def _meta_value(v) -> float:
    if isinstance(v, str):
        return float(_SSM_MODES.index(v))
    return float(v)


def _meta_decode(name: str, v: float):
    if name == "ssm_mode":
        return _SSM_MODES[int(v)]
    if name in ("use_mstb", "use_mamba", "use_inverted", "selective"):
        return bool(v)
    return int(v)


def dumps_checkpoint(entries: dict[str, np.ndarray]) -> bytes:
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        if arr.dtype not in (np.float32, np.float64):
            raise TypeError(f"{name}: only float32/float64 tensors can be stored")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(struct.pack("<B", arr.dtype.itemsize))
        out.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(out)


def loads_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {CKPT_MAGIC!r}", 0)
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated {what}", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8, "header"))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = pos
        (n,) = struct.unpack("<H", take(2, "name length"))
        name = take(n, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        prec_at = pos
        (prec,) = struct.unpack("<B", take(1, "precision"))
        if prec not in (4, 8):
            raise FormatError(f"{name}: bad precision {prec}", prec_at)
        count_el = int(np.prod(shape)) if rank else 1
        if count_el * prec > len(buf) - pos:
            raise FormatError(f"{name}: extents {shape} overflow the file", start)
        dt = np.dtype("<f4" if prec == 4 else "<f8")
        arr = np.frombuffer(take(count_el * prec, f"{name} payload"), dtype=dt).reshape(shape)
        entries[name] = arr.astype(dt.newbyteorder("="))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    return entries


def write_checkpoint(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_checkpoint(entries))


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return loads_checkpoint(Path(path).read_bytes())
