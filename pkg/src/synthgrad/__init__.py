"""Neuron-wise synthetic gradients for truncated-BPTT QRNN language models."""

from .config import ExperimentConfig, load_config
from .data import BatchStream, Vocab, build_vocab
from .dni import DNIParams, DNIStateBank, NeuronwiseDNI, dni_meta_backward, dni_predict
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    IncompatibleCheckpointError,
    NumericError,
    ParameterError,
    StateError,
    SynthGradError,
)
from .estimator import QRNNLanguageModel
from .experiment import Trainer, resume, run_experiment
from .model import LMModel
from .optim import (
    Adam,
    AlternationPolicy,
    GradientMode,
    RestartSchedule,
    adam_apply,
    advance_epoch,
    lr_at,
)
from .tensor import RngState
from .train_loop import EpochStats, evaluate, run_epoch, run_window

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AlternationPolicy",
    "BatchStream",
    "ConfigError",
    "DNIParams",
    "DNIStateBank",
    "DataError",
    "DimensionError",
    "EpochStats",
    "ExperimentConfig",
    "GradientMode",
    "IncompatibleCheckpointError",
    "LMModel",
    "NeuronwiseDNI",
    "NumericError",
    "ParameterError",
    "QRNNLanguageModel",
    "RestartSchedule",
    "RngState",
    "StateError",
    "SynthGradError",
    "Trainer",
    "Vocab",
    "adam_apply",
    "advance_epoch",
    "build_vocab",
    "dni_meta_backward",
    "dni_predict",
    "evaluate",
    "load_config",
    "lr_at",
    "resume",
    "run_epoch",
    "run_experiment",
    "run_window",
]
