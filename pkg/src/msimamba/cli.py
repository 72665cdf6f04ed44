"""Command-line entry point.

Machine-readable results go to stdout as JSON; progress logs go to stderr.
Exit codes: 0 success, 1 usage, 2 I/O or format, 3 divergence,
4 verification failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import signal_io, training, verify
from .autodiff import DimensionError, corrupted_rule
from .model import MSIMamba
from .signal_io import FormatError

log = logging.getLogger("msimamba")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


# -- config files -------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    if kind in (bool, "bool"):
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise UsageError(f"config key {name}: expected a boolean, got {raw!r}")
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {name}: cannot parse {raw!r}") from None
    return raw.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    kinds = {f.name: f.type for f in fields(training.TrainConfig)}
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise UsageError(f"{source}:{n}: unknown config key {key!r}")
        out[key] = _coerce(key, kinds[key], value)
    return out


def resolve_config(file_values: dict, overrides: dict) -> training.TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return training.TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# -- commands -------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    ds = training.gen_synthetic(args.classes, args.segments, args.channels, args.len, args.seed)
    signal_io.write_segments(ds, args.out, args.precision // 8)
    _emit({"out": str(args.out), "segments": len(ds), "L": ds.L, "C": ds.C, "classes": ds.n_classes})
    return EXIT_OK


def cmd_ingest(args) -> int:
    trials = []
    for path, rating in args.trial:
        trial = signal_io.read_csv_trial(path, args.rate)
        if args.channels:
            trial = signal_io.select_channels(trial, args.channels.split(","))
        trials.append((trial, signal_io.binarize_label(float(rating), args.threshold)))
    ds = signal_io.build_dataset(trials, args.window, 2)
    signal_io.write_segments(ds, args.out, args.precision // 8)
    _emit({"out": str(args.out), "segments": len(ds), "L": ds.L, "C": ds.C,
           "positive": int(ds.y.sum())})
    return EXIT_OK


_OVERRIDES = ("epochs", "seed", "lr", "batch_size", "precision", "top_k", "num_layers", "d_model",
              "use_mstb", "use_mamba", "use_inverted", "ssm_mode", "test_ratio")


def cmd_train(args) -> int:
    file_values = {}
    if args.config:
        file_values = parse_config_text(Path(args.config).read_text(), args.config)
    cfg = resolve_config(file_values, {k: getattr(args, k) for k in _OVERRIDES})
    datasets = [signal_io.read_segments(p) for p in args.data]
    ratio = 1.0 - cfg.test_ratio
    if len(datasets) == 1:
        train, test = training.split_intra(datasets[0], ratio, cfg.seed, cfg.stratified)
    else:
        train, test = training.split_inter(datasets, ratio, cfg.seed, cfg.stratified)
    log.info("train %d / test %d segments, L=%d C=%d", len(train), len(test), train.L, train.C)

    metrics_fh = open(args.metrics, "w") if args.metrics else None
    try:
        def on_epoch(row):
            if metrics_fh:
                metrics_fh.write(json.dumps(row) + "\n")
                metrics_fh.flush()

        model, metrics = training.train_loop(train, test, cfg, on_epoch)
        if metrics_fh and metrics.confusion is not None:
            metrics_fh.write(json.dumps(metrics.records()[-1]) + "\n")
    finally:
        if metrics_fh:
            metrics_fh.close()
    if args.out_ckpt:
        model.save(args.out_ckpt)
    if args.test_out:
        signal_io.write_segments(test, args.test_out)
    cm = metrics.confusion
    _emit({"variant": model.config.variant, "epochs": cfg.epochs,
           "test_acc": metrics.final_accuracy if cm is not None else None,
           "confusion": cm.tolist() if cm is not None else None,
           "train_loss": metrics.train_loss})
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = signal_io.read_segments(args.data)
    if len(ds) == 0:
        raise FormatError(f"{args.data}: dataset holds no segments", 8)
    model = MSIMamba.load(args.ckpt)
    cfg = model.config
    for dim, want, got in (("L", cfg.L, ds.L), ("C", cfg.C, ds.C), ("n_classes", cfg.n_classes, ds.n_classes)):
        if want != got:
            raise DimensionError(f"extent mismatch in {dim}: checkpoint has {want}, dataset has {got}")
    cm = training.evaluate(model, ds, args.batch_size)
    _emit({"accuracy": training.accuracy(cm), "confusion": cm.tolist(), "segments": len(ds)})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    guard = corrupted_rule(args.corrupt_rule, 1.5) if args.corrupt_rule else contextlib.nullcontext()
    with guard:
        report = verify.run_gradcheck(args.seed)
    name, err = report.worst
    _emit({"passed": report.passed, "tol": report.tol, "seconds": report.seconds,
           "groups": [{"group": k, "rel_error": v, "ok": v < report.tol} for k, v in report.errors.items()],
           "worst": {"group": name, "rel_error": err}})
    if not report.passed:
        log.error("gradcheck failed; worst group %s with relative error %.3e", name, err)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_scan_bench(args) -> int:
    if args.reps < 1 or args.len < 1 or args.dim < 1:
        raise UsageError("--len, --dim and --reps must be positive")
    result = verify.run_scan_bench(args.len, args.dim, args.reps, args.seed)
    _emit(result)
    if not result["agree"]:
        log.error("scan and kernel disagree: max abs diff %.3e", result["max_abs_diff"])
        return EXIT_VERIFY
    return EXIT_OK


def cmd_corpus(args) -> int:
    from .corpus import run_corpus

    results = run_corpus(args.root, args.tol_scale)
    for r in results:
        _emit({"module": r.module, "case": r.case, "passed": r.passed, "error": r.error, "tolerance": r.tolerance})
    failed = [r for r in results if not r.passed]
    log.info("%d/%d corpus cases passed", len(results) - len(failed), len(results))
    return EXIT_VERIFY if failed else EXIT_OK


# -- parser -----------------------------------------------------------------------


def _bool_flag(p, name: str) -> None:
    dest = name.replace("-", "_")
    p.add_argument(f"--{name}", dest=dest, action="store_true", default=None)
    p.add_argument(f"--no-{name}", dest=dest, action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msimamba", description="Multi-scale spectral SSM classifier for EEG segments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a synthetic .eegs dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--classes", type=int, default=2, choices=(2, 3))
    p.add_argument("--segments", type=int, default=500)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--len", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", type=int, default=32, choices=(32, 64))
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("ingest", help="window CSV trials into a .eegs dataset")
    p.add_argument("--trial", nargs=2, action="append", required=True, metavar=("CSV", "RATING"))
    p.add_argument("--window", type=int, default=128)
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--channels", help="comma-separated channel names to keep")
    p.add_argument("--rate", type=float, default=128.0)
    p.add_argument("--precision", type=int, default=32, choices=(32, 64))
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train and write a checkpoint plus JSON-lines metrics")
    p.add_argument("--data", action="append", required=True, help="repeat to pool several subjects")
    p.add_argument("--config", help="file of 'key = value' lines")
    p.add_argument("--out-ckpt", type=Path)
    p.add_argument("--metrics", type=Path)
    p.add_argument("--test-out", type=Path, help="write the held-out split as .eegs")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--top-k", type=int)
    p.add_argument("--num-layers", type=int)
    p.add_argument("--d-model", type=int)
    p.add_argument("--ssm-mode", choices=("scan", "kernel"))
    p.add_argument("--test-ratio", type=float)
    for name in ("use-mstb", "use-mamba", "use-inverted"):
        _bool_flag(p, name)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny 64-bit model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-rule", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("scan-bench", help="time the recurrent scan against the convolution kernel")
    p.add_argument("--len", type=int, default=64)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_scan_bench)

    p = sub.add_parser("corpus", help="replay the verification corpus")
    p.add_argument("--root", default="corpus")
    p.add_argument("--tol-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s", force=True)
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except training.DivergenceError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except (OSError, FormatError, DimensionError, signal_io.ChannelError, training.SplitError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
