"""Experiment orchestration shared by the CLI and the estimator.

All five method arms run through :class:`Trainer`; they differ only in the
alternation policy and whether warm restarts are enabled.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from pathlib import Path

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import BatchStream, Vocab, build_vocab, read_corpus
from .dni import NeuronwiseDNI
from .errors import ConfigError, DataError, IncompatibleCheckpointError
from .model import LMModel
from .optim import (
    Adam,
    AlternationPolicy,
    GradientMode,
    RestartSchedule,
    advance_epoch,
    lr_at,
)
from .tensor import RngState
from .train_loop import evaluate, run_epoch

log = logging.getLogger(__name__)

OUTPUT_ENV = "SYNTHGRAD_OUTPUT_DIR"
CSV_FIELDS = ("epoch", "run_index", "mode", "lr", "train_loss", "val_ppl", "elapsed_s")

# method -> (policy, warm restarts enabled)
METHOD_PLANS = {
    "bptt": (AlternationPolicy.constant(GradientMode.REAL), False),
    "dni": (AlternationPolicy.constant(GradientMode.SYNTHETIC), False),
    "bptt_restart": (AlternationPolicy.constant(GradientMode.REAL), True),
    "dni_restart": (AlternationPolicy.constant(GradientMode.SYNTHETIC), True),
    "alternating": (AlternationPolicy.alternating(), True),
}


def _uses_synthetic(policy: AlternationPolicy, restarts: bool) -> bool:
    runs = range(64) if restarts else range(1)
    return any(policy(i) is GradientMode.SYNTHETIC for i in runs)


class Trainer:
    """Model, DNI, optimizers and schedule for one experiment."""

    def __init__(self, config: ExperimentConfig, vocab: Vocab, train_ids,
                 valid_ids=None):
        self.config = config
        self.vocab = vocab
        self.policy, restarts = METHOD_PLANS[config.method]
        root = RngState(config.seed)
        self.model = LMModel(len(vocab), config.embed, config.hidden, config.layers,
                             k=config.k, dropout=config.dropout, dtype=config.precision,
                             rng=root.spawn(1))
        self.dni = None
        if _uses_synthetic(self.policy, restarts):
            self.dni = NeuronwiseDNI(config.layers, config.dni_hidden, rng=root.spawn(2),
                                     dtype=config.precision)
        self.dropout_rng = root.spawn(3) if config.dropout > 0 else None
        self.base_opt = Adam(self.model.named_parameters())
        self.dni_opt = Adam(self.dni.named_parameters()) if self.dni is not None else None
        self.schedule = RestartSchedule(config.e_base, config.lr, config.lr_min,
                                        enabled=restarts)
        self.mode = self.policy(0)
        self.epoch = 0
        self.best_val = math.inf
        self.best_epoch = 0
        self.restarts: list[dict] = []
        self.history: list[dict] = []
        self.train_stream = BatchStream(train_ids, config.batch, config.bptt)
        self.valid_stream = (BatchStream(valid_ids, config.batch, config.bptt)
                             if valid_ids is not None else None)

    def train_epoch(self) -> dict:
        start = time.perf_counter()
        lr = lr_at(self.schedule)
        stats = run_epoch(self.model, self.dni, self.mode, self.train_stream, self.base_opt, lr,
                          dni_opt=self.dni_opt, dni_lr=self.config.dni_lr,
                          clip=self.config.clip or None,
                          train_dni_during_real=self.config.train_dni_during_real,
                          freeze_dni=self.config.freeze_dni, rng=self.dropout_rng)
        val = evaluate(self.model, self.valid_stream) if self.valid_stream is not None else math.nan
        self.epoch += 1
        if val < self.best_val:
            self.best_val, self.best_epoch = val, self.epoch
        row = {
            "epoch": str(self.epoch),
            "run_index": str(self.schedule.run_index),
            "mode": self.mode.value,
            "lr": repr(lr),
            "train_loss": repr(stats.mean_loss),
            "val_ppl": repr(val),
            "elapsed_s": f"{time.perf_counter() - start:.3f}",
        }
        self.history.append(row)
        event = advance_epoch(self.schedule, self.policy)
        if event is not None:
            self.mode = event.mode
            if self.config.reset_on_restart:
                self.base_opt.reset()
                if self.dni_opt is not None:
                    self.dni_opt.reset()
                if self.dni is not None:
                    self.dni.bank.reset("restart")
            self.restarts.append({"epoch": self.epoch, "run_index": event.run_index,
                                  "mode": event.mode.value})
            log.info("restart after epoch %d -> run %d (%s)", self.epoch, event.run_index,
                     event.mode.value)
        return row

    # -- checkpoint state -------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        tensors = {f"model.{k}": v for k, v in self.model.named_parameters().items()}
        tensors.update(self.base_opt.state_arrays("adam"))
        meta = {
            "config": self.config.to_dict(),
            "vocab": {"mode": self.vocab.mode, "tokens": self.vocab.itos},
            "epoch": self.epoch,
            "mode": self.mode.value,
            "schedule": {"run_index": self.schedule.run_index, "e_cur": self.schedule.e_cur},
            "best_val": self.best_val,
            "best_epoch": self.best_epoch,
            "restarts": self.restarts,
            "history": self.history,
            "adam_steps": self.base_opt.steps(),
            "rng": list(self.dropout_rng.get_state()) if self.dropout_rng else None,
        }
        if self.dni is not None:
            tensors.update({f"dni.{k}": v for k, v in self.dni.named_parameters().items()})
            tensors.update(self.dni_opt.state_arrays("dni_adam"))
            meta["dni_adam_steps"] = self.dni_opt.steps()
        return Checkpoint(config_hash=self.config.config_hash(), meta=meta, tensors=tensors)

    def load_checkpoint_state(self, ckpt: Checkpoint) -> None:
        meta, t = ckpt.meta, ckpt.tensors
        self.model.load_parameters({k[len("model."):]: v for k, v in t.items()
                                    if k.startswith("model.")})
        self.base_opt.load("adam", t, meta["adam_steps"])
        if self.dni is not None:
            self.dni.load_parameters({k[len("dni."):]: v for k, v in t.items()
                                      if k.startswith("dni.")})
            self.dni_opt.load("dni_adam", t, meta["dni_adam_steps"])
        self.epoch = int(meta["epoch"])
        self.mode = GradientMode(meta["mode"])
        self.schedule.run_index = int(meta["schedule"]["run_index"])
        self.schedule.e_cur = int(meta["schedule"]["e_cur"])
        self.best_val = float(meta["best_val"])
        self.best_epoch = int(meta["best_epoch"])
        self.restarts = list(meta["restarts"])
        self.history = [dict(r) for r in meta["history"]]
        if self.dropout_rng is not None and meta.get("rng"):
            self.dropout_rng.set_state(tuple(meta["rng"]))


def _load_ids(path: str, vocab: Vocab):
    if not path:
        return None
    return vocab.encode(read_corpus(path))


def prepare_data(config: ExperimentConfig, vocab: Vocab | None = None):
    if not config.train:
        raise ConfigError("config needs a train corpus path")
    text = read_corpus(config.train)
    if vocab is None:
        vocab = build_vocab(text, config.tokenization, config.max_vocab or None)
    elif vocab.mode != config.tokenization:
        raise IncompatibleCheckpointError("checkpoint vocabulary mode differs from config")
    return vocab, vocab.encode(text), _load_ids(config.valid, vocab)


def resolve_output_dir(out_dir, config: ExperimentConfig) -> Path:
    if out_dir is None:
        base = os.environ.get(OUTPUT_ENV)
        out_dir = Path(base) if base else Path("runs") / f"{config.method}-{config.config_hash()[:8]}"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, rows: list[dict]):
    fh = path.open("w", newline="", encoding="utf-8")
    writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    fh.flush()
    return fh, writer


def _drive(trainer: Trainer, out: Path, echo=None) -> dict:
    cfg = trainer.config
    start = time.perf_counter()
    trainer.vocab.save(out / "vocab.txt")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    fh, writer = _write_csv(out / "metrics.csv", trainer.history)
    try:
        while trainer.epoch < cfg.epochs:
            n_restarts = len(trainer.restarts)
            row = trainer.train_epoch()
            writer.writerow(row)
            fh.flush()
            if echo:
                echo(" ".join(f"{k}={row[k]}" for k in CSV_FIELDS))
            restarted = len(trainer.restarts) > n_restarts
            if restarted and echo:
                r = trainer.restarts[-1]
                echo(f"restart at epoch {r['epoch']}: run {r['run_index']} mode {r['mode']}")
            if restarted or (cfg.ckpt_every and trainer.epoch % cfg.ckpt_every == 0):
                ckpt = trainer.to_checkpoint()
                save_checkpoint(out / f"ckpt_epoch{trainer.epoch:04d}.bin", ckpt)
                save_checkpoint(out / "ckpt_last.bin", ckpt)
    finally:
        fh.close()
    save_checkpoint(out / "ckpt_last.bin", trainer.to_checkpoint())
    test_ppl = None
    if cfg.test:
        test_ids = trainer.vocab.encode(read_corpus(cfg.test))
        test_ppl = evaluate(trainer.model, BatchStream(test_ids, cfg.batch, cfg.bptt))
    report = {
        "method": cfg.method,
        "epochs": trainer.epoch,
        "test_ppl": test_ppl,
        "best_val_ppl": trainer.best_val if math.isfinite(trainer.best_val) else None,
        "best_val_epoch": trainer.best_epoch,
        "final_val_ppl": float(trainer.history[-1]["val_ppl"]) if trainer.history else None,
        "restarts": trainer.restarts,
        "vocab_size": len(trainer.vocab),
        "config_hash": cfg.config_hash(),
        "wall_time_s": time.perf_counter() - start,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def run_experiment(config: ExperimentConfig, out_dir=None, echo=None) -> dict:
    """Train one method arm and write ``metrics.csv``, ``report.json`` and checkpoints."""
    vocab, train_ids, valid_ids = prepare_data(config)
    trainer = Trainer(config, vocab, train_ids, valid_ids)
    return _drive(trainer, resolve_output_dir(out_dir, config), echo)


def resume(checkpoint_path, out_dir=None, overrides: dict | None = None, echo=None) -> dict:
    """Continue a run from ``checkpoint_path``.

    ``overrides`` may change only keys outside the configuration hash
    (corpus paths, epoch budget, checkpoint cadence).
    """
    ckpt = load_checkpoint(checkpoint_path)
    config = ExperimentConfig.from_dict(ckpt.meta["config"])
    if overrides:
        config = config.replace(**overrides)
    if config.config_hash() != ckpt.config_hash:
        raise IncompatibleCheckpointError(
            "configuration hash differs from the checkpoint; only paths, epochs and "
            "ckpt_every may change on resume")
    vocab = Vocab(ckpt.meta["vocab"]["tokens"], ckpt.meta["vocab"]["mode"])
    vocab, train_ids, valid_ids = prepare_data(config, vocab)
    trainer = Trainer(config, vocab, train_ids, valid_ids)
    trainer.load_checkpoint_state(ckpt)
    out = Path(out_dir) if out_dir is not None else Path(checkpoint_path).resolve().parent
    out.mkdir(parents=True, exist_ok=True)
    return _drive(trainer, out, echo)


def evaluate_checkpoint(checkpoint_path, corpus_path) -> float:
    """Perplexity of a checkpointed model on a corpus file."""
    ckpt = load_checkpoint(checkpoint_path)
    config = ExperimentConfig.from_dict(ckpt.meta["config"])
    vocab = Vocab(ckpt.meta["vocab"]["tokens"], ckpt.meta["vocab"]["mode"])
    model = LMModel(len(vocab), config.embed, config.hidden, config.layers, k=config.k,
                    dtype=config.precision)
    model.load_parameters({k[len("model."):]: v for k, v in ckpt.tensors.items()
                           if k.startswith("model.")})
    ids = vocab.encode(read_corpus(corpus_path))
    if ids.size == 0:
        raise DataError("evaluation corpus is empty")
    return evaluate(model, BatchStream(ids, config.batch, config.bptt))


def epoch_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


__all__ = [
    "CSV_FIELDS",
    "METHOD_PLANS",
    "OUTPUT_ENV",
    "Trainer",
    "epoch_rows",
    "evaluate_checkpoint",
    "prepare_data",
    "resume",
    "run_experiment",
]
