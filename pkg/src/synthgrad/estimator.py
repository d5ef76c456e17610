"""scikit-learn style wrapper around :class:`experiment.Trainer`."""

from __future__ import annotations

import math
from collections.abc import Iterable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import ExperimentConfig
from .data import BatchStream, build_vocab
from .errors import DataError
from .experiment import Trainer
from .train_loop import evaluate


def check_corpus(X) -> str:
    """Accept a string or an iterable of strings (joined by newlines)."""
    if isinstance(X, (bytes, bytearray)):
        X = X.decode("utf-8")
    if isinstance(X, str):
        text = X
    elif isinstance(X, Iterable):
        parts = list(X)
        if not all(isinstance(p, str) for p in parts):
            raise DataError("corpus must be a string or an iterable of strings")
        text = "\n".join(parts)
    else:
        raise DataError(f"corpus must be a string or an iterable of strings, got {type(X).__name__}")
    if not text:
        raise DataError("corpus is empty")
    return text


class QRNNLanguageModel(BaseEstimator):
    """QRNN language model trained by truncated BPTT, optionally with neuron-wise DNIs.

    ``method`` selects the arm: ``"bptt"``, ``"dni"``, ``"bptt_restart"``,
    ``"dni_restart"`` or ``"alternating"``. Other parameters mirror
    :class:`~synthgrad.config.ExperimentConfig`.

    ``score`` returns the negative mean token log-loss (higher is better),
    so the estimator works with ``GridSearchCV`` and ``cross_val_score``.
    """

    def __init__(self, method="bptt", layers=2, hidden=64, embed=32, k=1, bptt=16, batch=16,
                 epochs=30, e_base=2, lr=3e-3, lr_min=0.0, dni_lr=1e-4, dni_hidden=16,
                 seed=1234, precision="float64", tokenization="char", max_vocab=0,
                 train_dni_during_real=True, clip=10.0, reset_on_restart=True,
                 freeze_dni=False, dropout=0.0):
        self.method = method
        self.layers = layers
        self.hidden = hidden
        self.embed = embed
        self.k = k
        self.bptt = bptt
        self.batch = batch
        self.epochs = epochs
        self.e_base = e_base
        self.lr = lr
        self.lr_min = lr_min
        self.dni_lr = dni_lr
        self.dni_hidden = dni_hidden
        self.seed = seed
        self.precision = precision
        self.tokenization = tokenization
        self.max_vocab = max_vocab
        self.train_dni_during_real = train_dni_during_real
        self.clip = clip
        self.reset_on_restart = reset_on_restart
        self.freeze_dni = freeze_dni
        self.dropout = dropout

    def to_config(self) -> ExperimentConfig:
        return ExperimentConfig(**self.get_params())

    def fit(self, X, y=None, validation=None):
        """Train on corpus ``X``; ``validation`` (optional) is scored every epoch."""
        config = self.to_config()
        text = check_corpus(X)
        vocab = build_vocab(text, config.tokenization, config.max_vocab or None)
        valid_ids = vocab.encode(check_corpus(validation)) if validation is not None else None
        trainer = Trainer(config, vocab, vocab.encode(text), valid_ids)
        for _ in range(config.epochs):
            trainer.train_epoch()
        self.trainer_ = trainer
        self.vocab_ = vocab
        self.model_ = trainer.model
        self.history_ = trainer.history
        self.restarts_ = trainer.restarts
        self.n_epochs_ = trainer.epoch
        return self

    def _stream(self, X) -> BatchStream:
        ids = self.vocab_.encode(check_corpus(X))
        batch = self.batch if ids.shape[0] // self.batch >= 2 else 1
        return BatchStream(ids, batch, self.bptt)

    def perplexity(self, X) -> float:
        check_is_fitted(self, "model_")
        return evaluate(self.model_, self._stream(X))

    def score(self, X, y=None) -> float:
        return -math.log(self.perplexity(X))

    def next_token_proba(self, context) -> np.ndarray:
        """Predictive distribution over the vocabulary after ``context``."""
        check_is_fitted(self, "model_")
        ids = self.vocab_.encode(check_corpus(context))
        inputs = ids.reshape(-1, 1)
        _, tape = self.model_.forward(inputs, np.zeros_like(inputs),
                                      self.model_.init_states(1))
        return tape.xent.probs[-1].copy()
