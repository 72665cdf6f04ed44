import json
import subprocess
import sys

import numpy as np
import pytest

from msimamba import cli
from msimamba.signal_io import SegmentDataset, TrialRecording, read_segments, write_csv_trial, write_segments
from msimamba.training import TrainConfig


def run(args, capsys):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


@pytest.fixture
def small_data(tmp_path, capsys):
    path = tmp_path / "d.eegs"
    code, _, _ = run(["gen-synthetic", "--out", path, "--segments", 60, "--len", 32, "--channels", 3], capsys)
    assert code == 0
    return path


# -- gen-synthetic ---------------------------------------------------------------------


def test_gen_defaults(tmp_path, capsys):
    code, out, _ = run(["gen-synthetic", "--out", tmp_path / "a.eegs"], capsys)
    assert code == 0
    ds = read_segments(tmp_path / "a.eegs")
    assert (len(ds), ds.L, ds.C, ds.n_classes) == (500, 128, 4, 2)
    assert last_json(out)["segments"] == 500


def test_gen_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        run(["gen-synthetic", "--out", tmp_path / f"{name}.eegs", "--seed", 7, "--segments", 30], capsys)
    assert (tmp_path / "a.eegs").read_bytes() == (tmp_path / "b.eegs").read_bytes()


def test_gen_bad_classes_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as ei:
        cli.main(["gen-synthetic", "--out", str(tmp_path / "x.eegs"), "--classes", "5"])
    assert ei.value.code == 1


def test_gen_unwritable_path(tmp_path, capsys):
    code, _, err = run(["gen-synthetic", "--out", tmp_path / "no" / "dir" / "x.eegs", "--segments", 5], capsys)
    assert code == 2 and "No such file" in err


# -- config ---------------------------------------------------------------------------------


def test_config_precedence():
    file_vals = cli.parse_config_text("epochs = 4\nlr = 0.01  # comment\nuse_mstb = false\n")
    cfg = cli.resolve_config(file_vals, {"epochs": 2, "lr": None})
    assert cfg.epochs == 2 and cfg.lr == 0.01 and cfg.use_mstb is False
    assert cli.resolve_config({}, {}) == TrainConfig()


def test_config_unknown_key():
    with pytest.raises(cli.UsageError, match="epoch"):
        cli.parse_config_text("epoch = 3")
    with pytest.raises(cli.UsageError):
        cli.parse_config_text("use_mstb = maybe")
    with pytest.raises(cli.UsageError):
        cli.parse_config_text("just words")


# -- train / eval --------------------------------------------------------------------------


def test_train_then_eval_consistent(tmp_path, small_data, capsys):
    ck, metrics, test = tmp_path / "m.msim", tmp_path / "m.jsonl", tmp_path / "t.eegs"
    code, out, _ = run(["train", "--data", small_data, "--epochs", 2, "--d-model", 16, "--out-ckpt", ck,
                        "--metrics", metrics, "--test-out", test], capsys)
    assert code == 0
    summary = last_json(out)
    rows = [json.loads(s) for s in metrics.read_text().splitlines()]
    assert [r.get("epoch") for r in rows[:-1]] == [1, 2]
    assert rows[-1]["final"] is True
    code, out, _ = run(["eval", "--data", test, "--ckpt", ck], capsys)
    assert code == 0
    ev = last_json(out)
    assert ev["accuracy"] == summary["test_acc"] == rows[-1]["test_acc"]
    assert ev["confusion"] == summary["confusion"]
    code, out2, _ = run(["eval", "--data", test, "--ckpt", ck], capsys)
    assert out2 == out


def test_train_config_file_selects_variant(tmp_path, small_data, capsys):
    conf = tmp_path / "c.txt"
    conf.write_text("epochs = 1\nd_model = 8\nuse_mstb = false\nuse_inverted = false\n")
    code, out, _ = run(["train", "--data", small_data, "--config", conf], capsys)
    assert code == 0 and last_json(out)["variant"] == "Mamba"


def test_train_flags_override_file(tmp_path, small_data, capsys):
    conf = tmp_path / "c.txt"
    conf.write_text("epochs = 3\nd_model = 8\nuse_mstb = false\n")
    code, out, _ = run(["train", "--data", small_data, "--config", conf, "--epochs", 1, "--use-mstb"], capsys)
    res = last_json(out)
    assert code == 0 and res["epochs"] == 1 and res["variant"] == "iMamba+Multi-Scale"


def test_train_unknown_config_key(tmp_path, small_data, capsys):
    conf = tmp_path / "c.txt"
    conf.write_text("epoch = 1\n")
    code, _, err = run(["train", "--data", small_data, "--config", conf], capsys)
    assert code == 1 and "epoch" in err


def test_train_missing_dataset(tmp_path, capsys):
    code, _, _ = run(["train", "--data", tmp_path / "nope.eegs"], capsys)
    assert code == 2


def test_train_bad_format(tmp_path, capsys):
    p = tmp_path / "bad.eegs"
    p.write_bytes(b"XXXX" + bytes(40))
    code, _, err = run(["train", "--data", p], capsys)
    assert code == 2 and "offset 0" in err


def test_train_divergence_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 16, 2))
    X[:] = np.nan
    write_segments(SegmentDataset(X, np.arange(20) % 2, 2), tmp_path / "nan.eegs")
    code, _, err = run(["train", "--data", tmp_path / "nan.eegs", "--epochs", 1, "--d-model", 8], capsys)
    assert code == 3 and "epoch 1" in err


def test_train_multiple_subjects(tmp_path, capsys):
    paths = []
    for s in range(2):
        p = tmp_path / f"s{s}.eegs"
        run(["gen-synthetic", "--out", p, "--segments", 20, "--len", 64, "--seed", s], capsys)
        paths += ["--data", p]
    code, out, _ = run(["train", *paths, "--epochs", 1, "--d-model", 8], capsys)
    assert code == 0 and sum(map(sum, last_json(out)["confusion"])) == 8


def test_eval_extent_mismatch(tmp_path, small_data, capsys):
    ck = tmp_path / "m.msim"
    run(["train", "--data", small_data, "--epochs", 1, "--d-model", 8, "--out-ckpt", ck], capsys)
    other = tmp_path / "c4.eegs"
    run(["gen-synthetic", "--out", other, "--segments", 10, "--len", 32, "--channels", 4], capsys)
    code, _, err = run(["eval", "--data", other, "--ckpt", ck], capsys)
    assert code == 2 and "in C" in err


def test_eval_empty_dataset(tmp_path, small_data, capsys):
    ck = tmp_path / "m.msim"
    run(["train", "--data", small_data, "--epochs", 1, "--d-model", 8, "--out-ckpt", ck], capsys)
    empty = tmp_path / "empty.eegs"
    write_segments(SegmentDataset(np.zeros((0, 32, 3)), [], 2), empty)
    code, _, _ = run(["eval", "--data", empty, "--ckpt", ck], capsys)
    assert code == 2


# -- ingest ----------------------------------------------------------------------------------


def test_ingest_csv(tmp_path, capsys):
    rng = np.random.default_rng(0)
    names = ["FP1", "FP2", "AF3", "AF4", "O1"]
    for i in range(2):
        write_csv_trial(TrialRecording(rng.normal(size=(300, 5)), 128.0, names), tmp_path / f"t{i}.csv")
    out_path = tmp_path / "i.eegs"
    code, out, _ = run(["ingest", "--trial", tmp_path / "t0.csv", 7, "--trial", tmp_path / "t1.csv", 5,
                        "--channels", "FP1,FP2,AF3,AF4", "--window", 128, "--out", out_path], capsys)
    assert code == 0
    ds = read_segments(out_path)
    assert (len(ds), ds.L, ds.C) == (4, 128, 4)
    assert list(ds.y) == [1, 1, 0, 0]
    code, _, err = run(["ingest", "--trial", tmp_path / "t0.csv", 7, "--channels", "XX",
                        "--out", out_path], capsys)
    assert code == 2 and "XX" in err


# -- verification commands ----------------------------------------------------------------------


def test_gradcheck_passes_and_lists_groups(capsys):
    code, out, _ = run(["gradcheck", "--seed", 0], capsys)
    res = last_json(out)
    assert code == 0 and res["passed"]
    groups = [g["group"] for g in res["groups"]]
    assert len(groups) == len(set(groups)) > 10


def test_gradcheck_negative_control(capsys):
    code, out, err = run(["gradcheck", "--corrupt-rule", "silu"], capsys)
    assert code == 4
    assert last_json(out)["worst"]["group"] in err


def test_scan_bench(capsys):
    code, out, _ = run(["scan-bench", "--len", 64, "--dim", 64, "--reps", 2], capsys)
    res = last_json(out)
    assert code == 0 and res["agree"] and "max_abs_diff" in res
    paths = {p["path"] for p in res["paths"]}
    assert "kernel" in paths and any(p.startswith("scan") for p in paths)


def test_scan_bench_zero_reps(capsys):
    code, _, _ = run(["scan-bench", "--reps", 0], capsys)
    assert code == 1


def test_corpus_command(capsys):
    code, out, _ = run(["corpus", "--root", "corpus"], capsys)
    assert code == 0 and len(out.splitlines()) > 40


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "msimamba.cli", "gen-synthetic", "--out", str(tmp_path / "x.eegs"),
                          "--segments", "4"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["segments"] == 4
    assert res.stdout.count("\n") == 1
