import ast
import inspect
import json
import struct
from pathlib import Path

import numpy as np
import pytest

from synthgrad import cli, experiment
from synthgrad.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from synthgrad.config import ExperimentConfig, load_config, parse_config_text
from synthgrad.errors import ConfigError, DataError, IncompatibleCheckpointError
from synthgrad.experiment import (
    CSV_FIELDS,
    OUTPUT_ENV,
    epoch_rows,
    resume,
    run_experiment,
)


def _strip_elapsed(rows):
    return [{k: v for k, v in r.items() if k != "elapsed_s"} for r in rows]


# -- config ---------------------------------------------------------------

def test_parse_config_text():
    values = parse_config_text("# comment\nmethod = dni  # inline\n\nlr=0.01\n")
    assert values == {"method": "dni", "lr": "0.01"}
    with pytest.raises(ConfigError):
        parse_config_text("nonsense line")
    with pytest.raises(ConfigError):
        parse_config_text("colour = blue")


def test_config_precedence_and_paths(tmp_path):
    (tmp_path / "cfg.txt").write_text("method = dni\nlr = 0.01\ntrain = data/t.txt\n")
    cfg = load_config(tmp_path / "cfg.txt", {"lr": "0.02", "dni-lr": "1e-3"})
    assert cfg.method == "dni" and cfg.lr == 0.02 and cfg.dni_lr == 1e-3
    assert cfg.hidden == 64
    assert Path(cfg.train) == (tmp_path / "data" / "t.txt").resolve()
    assert load_config().to_dict() == ExperimentConfig().to_dict()


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(method="sgd")
    with pytest.raises(ConfigError):
        ExperimentConfig(k=3)
    with pytest.raises(ConfigError):
        ExperimentConfig().replace(freeze_dni="maybe")
    with pytest.raises(ConfigError):
        load_config("/does/not/exist.txt")


def test_config_text_roundtrip(tmp_path):
    cfg = ExperimentConfig(method="alternating", lr=1e-3, freeze_dni=True)
    (tmp_path / "c.txt").write_text(cfg.to_text())
    assert load_config(tmp_path / "c.txt").to_dict() == cfg.to_dict()


def test_config_hash_covers_trajectory_keys_only():
    base = ExperimentConfig()
    assert base.replace(epochs=99, train="/x", ckpt_every=1).config_hash() == base.config_hash()
    assert base.replace(lr=1e-3).config_hash() != base.config_hash()
    assert base.replace(seed=1).config_hash() != base.config_hash()


# -- checkpoint -----------------------------------------------------------

def _ckpt():
    tensors = {"a": np.arange(6, dtype=np.float64).reshape(2, 3),
               "b": np.ones(4, dtype=np.float32), "c": np.array([7, -1], dtype=np.int64)}
    return Checkpoint(config_hash="ab" * 32, meta={"epoch": 3, "x": [1, 2]}, tensors=tensors)


def test_checkpoint_roundtrip(tmp_path):
    save_checkpoint(tmp_path / "c.bin", _ckpt())
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw.startswith(MAGIC)
    assert struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])[0] == 1
    back = load_checkpoint(tmp_path / "c.bin")
    assert back.config_hash == "ab" * 32 and back.meta == {"epoch": 3, "x": [1, 2]}
    for k, v in _ckpt().tensors.items():
        assert back.tensors[k].dtype == v.dtype
        assert back.tensors[k].tobytes() == v.tobytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.bin")
    save_checkpoint(tmp_path / "c.bin", _ckpt())
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(tmp_path / "magic.bin")
    (tmp_path / "ver.bin").write_bytes(raw[:8] + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(tmp_path / "ver.bin")
    (tmp_path / "trail.bin").write_bytes(raw + b"\0")
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(tmp_path / "trail.bin")


# -- experiments ----------------------------------------------------------

def test_bptt_run_outputs(tiny_config, tmp_path):
    report = run_experiment(tiny_config, tmp_path)
    rows = epoch_rows(tmp_path / "metrics.csv")
    assert list(rows[0]) == list(CSV_FIELDS)
    assert [r["epoch"] for r in rows] == ["1", "2", "3", "4", "5", "6"]
    assert all(r["mode"] == "real" for r in rows)
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert on_disk["test_ppl"] == report["test_ppl"] and report["test_ppl"] > 1.0
    assert report["best_val_epoch"] == int(min(rows, key=lambda r: float(r["val_ppl"]))["epoch"])
    for name in ("vocab.txt", "config.txt", "ckpt_epoch0005.bin", "ckpt_last.bin"):
        assert (tmp_path / name).is_file()


def test_dni_with_frozen_zero_head_matches_bptt_csv(tiny_config, tmp_path):
    run_experiment(tiny_config, tmp_path / "bptt")
    run_experiment(tiny_config.replace(method="dni", freeze_dni=True), tmp_path / "dni")
    a = _strip_elapsed(epoch_rows(tmp_path / "bptt" / "metrics.csv"))
    b = _strip_elapsed(epoch_rows(tmp_path / "dni" / "metrics.csv"))
    for r in b:
        assert r.pop("mode") == "synthetic"
    for r in a:
        r.pop("mode")
    assert a == b


def test_alternating_restart_log(tiny_config, tmp_path):
    cfg = tiny_config.replace(method="alternating", e_base=2, epochs=14, ckpt_every=0)
    report = run_experiment(cfg, tmp_path)
    assert [(r["epoch"], r["mode"]) for r in report["restarts"]] == \
        [(2, "synthetic"), (6, "real"), (14, "synthetic")]
    modes = [r["mode"] for r in epoch_rows(tmp_path / "metrics.csv")]
    assert modes == ["real"] * 2 + ["synthetic"] * 4 + ["real"] * 8
    for epoch in (2, 6, 14):
        assert (tmp_path / f"ckpt_epoch{epoch:04d}.bin").is_file()


def test_resume_matches_uninterrupted_run(tiny_config, tmp_path):
    cfg = tiny_config.replace(method="alternating", epochs=10, ckpt_every=5, dropout=0.2)
    full = run_experiment(cfg, tmp_path / "full")
    run_experiment(cfg.replace(epochs=5), tmp_path / "part")
    resumed = resume(tmp_path / "part" / "ckpt_epoch0005.bin", tmp_path / "resumed",
                     {"epochs": 10})
    assert _strip_elapsed(epoch_rows(tmp_path / "full" / "metrics.csv")) == \
        _strip_elapsed(epoch_rows(tmp_path / "resumed" / "metrics.csv"))
    for key in ("test_ppl", "best_val_ppl", "best_val_epoch", "restarts", "config_hash"):
        assert full[key] == resumed[key]
    a = load_checkpoint(tmp_path / "full" / "ckpt_last.bin").tensors
    b = load_checkpoint(tmp_path / "resumed" / "ckpt_last.bin").tensors
    assert a.keys() == b.keys()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_resume_twice_is_identical(tiny_config, tmp_path):
    run_experiment(tiny_config.replace(epochs=5), tmp_path / "base")
    ckpt = tmp_path / "base" / "ckpt_epoch0005.bin"
    r1 = resume(ckpt, tmp_path / "r1", {"epochs": 7})
    r2 = resume(ckpt, tmp_path / "r2", {"epochs": 7})
    assert r1["test_ppl"] == r2["test_ppl"]
    assert _strip_elapsed(epoch_rows(tmp_path / "r1" / "metrics.csv")) == \
        _strip_elapsed(epoch_rows(tmp_path / "r2" / "metrics.csv"))


def test_resume_with_changed_lr_is_rejected(tiny_config, tmp_path):
    run_experiment(tiny_config.replace(epochs=5), tmp_path)
    with pytest.raises(IncompatibleCheckpointError):
        resume(tmp_path / "ckpt_epoch0005.bin", tmp_path / "r", {"lr": 1e-2})


def test_single_training_code_path():
    # every method arm is dispatched through the same Trainer/run_epoch calls
    src = inspect.getsource(experiment)
    tree = ast.parse(src)
    calls = [n.func.id for n in ast.walk(tree)
             if isinstance(n, ast.Call) and isinstance(n.func, ast.Name)]
    assert calls.count("run_epoch") == 1
    assert "method ==" not in src and "config.method ==" not in src
    assert set(experiment.METHOD_PLANS) == {"bptt", "dni", "bptt_restart", "dni_restart",
                                            "alternating"}


# -- CLI ------------------------------------------------------------------

def _write_cfg(path, cfg):
    path.write_text(cfg.to_text())
    return str(path)


def test_cli_train_eval_resume(tiny_config, tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path / "c.txt", tiny_config)
    out = tmp_path / "out"
    assert cli.main(["train", "--config", cfg_path, "--out", str(out), "--epochs", "5"]) == 0
    assert len(epoch_rows(out / "metrics.csv")) == 5
    assert cli.main(["eval", "--checkpoint", str(out / "ckpt_last.bin"),
                     "--corpus", tiny_config.test]) == 0
    assert "perplexity" in capsys.readouterr().out
    assert cli.main(["resume", "--checkpoint", str(out / "ckpt_last.bin"), "--epochs", "6"]) == 0
    assert len(epoch_rows(out / "metrics.csv")) == 6


def test_cli_output_dir_from_env(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env_out"))
    cfg_path = _write_cfg(tmp_path / "c.txt", tiny_config.replace(epochs=1))
    assert cli.main(["train", "--config", cfg_path]) == 0
    assert (tmp_path / "env_out" / "report.json").is_file()


def test_cli_exit_codes(tiny_config, tmp_path):
    cfg_path = _write_cfg(tmp_path / "c.txt", tiny_config.replace(epochs=1))
    out = str(tmp_path / "o")
    assert cli.main(["train", "--config", cfg_path, "--out", out, "--method", "sgd"]) == 2
    assert cli.main(["train", "--config", cfg_path, "--out", out, "--bogus", "1"]) == 2
    assert cli.main(["train", "--config", cfg_path, "--out", out,
                     "--train", str(tmp_path / "nope.txt")]) == 3
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.bin"),
                     "--corpus", tiny_config.test]) == 3
    assert cli.main(["train", "--config", cfg_path, "--out", out]) == 0
    ckpt = load_checkpoint(Path(out) / "ckpt_last.bin")
    ckpt.tensors["model.qrnn0.W_z"][0, 0] = np.nan
    save_checkpoint(tmp_path / "nan.bin", ckpt)
    assert cli.main(["resume", "--checkpoint", str(tmp_path / "nan.bin"), "--out", out,
                     "--epochs", "2"]) == 4


def test_cli_gradcheck(capsys):
    assert cli.main(["gradcheck", "--configs", "2", "--instances", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8 and all(line.startswith("PASS") for line in lines)
