"""Truncated-BPTT engine with synthetic boundary gradients.

A window is run forward from the carried states. In synthetic mode the DNI
predicts the gradient at the new boundary ``h_T`` and that prediction is
injected into the window's backward pass. The gradient that reaches the
window's *incoming* state is then exactly the bootstrapped target for the
prediction made one window earlier: real backprop over the window plus the
new synthetic gradient carried back across it. That target is consumed by
the DNI's meta-update and the new prediction becomes pending.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import BatchStream
from .dni import DNIParams, DNITape, NeuronwiseDNI, dni_meta_backward, dni_predict
from .errors import DataError, NumericError, StateError
from .model import LMModel
from .optim import Adam, GradientMode, clip_global_norm
from .tensor import RngState

__all__ = [
    "EpochStats",
    "GradientMode",
    "PendingPrediction",
    "WindowResult",
    "evaluate",
    "run_epoch",
    "run_window",
]


@dataclass
class PendingPrediction:
    """Synthetic gradients predicted at the last boundary, awaiting their target."""

    delta_hat: list[np.ndarray]
    tapes: list[DNITape]
    params: list[DNIParams]  # snapshot of phi used for the prediction
    window_index: int


@dataclass
class WindowResult:
    loss: float
    base_grads: dict[str, np.ndarray]
    meta_grads: list[dict[str, np.ndarray]] | None
    meta_loss: float | None
    states: list[np.ndarray]
    pending: PendingPrediction | None
    targets: list[np.ndarray] | None = None
    grad_h0: list[np.ndarray] | None = None
    injected: list[np.ndarray] | None = None


def _check_finite(arrays, what: str, window_index: int) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite {what} in window {window_index}")


def run_window(model: LMModel, dni: NeuronwiseDNI | None, mode: GradientMode,
               inputs: np.ndarray, targets: np.ndarray, states: list[np.ndarray],
               pending: PendingPrediction | None, *, train_dni_during_real: bool = True,
               window_index: int = 0, rng: RngState | None = None) -> WindowResult:
    """Forward, predict, backward and meta-gradient for one truncation window.

    Nothing is applied: base and meta gradients are returned for the caller
    to feed to its optimizers.
    """
    if mode is GradientMode.SYNTHETIC and dni is None:
        raise StateError("synthetic mode requires a DNI")
    loss, tape = model.forward(inputs, targets, states, rng=rng)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss in window {window_index}")

    use_dni = dni is not None and (mode is GradientMode.SYNTHETIC or train_dni_during_real)
    delta_new, dni_tapes = None, None
    if use_dni:
        delta_new, dni_tapes = [], []
        for layer, hT in enumerate(tape.final_states):
            d, t = dni_predict(dni.params[layer], hT, dni.bank, layer)
            delta_new.append(d)
            dni_tapes.append(t)
        _check_finite(delta_new, "synthetic gradient", window_index)

    injected = delta_new if mode is GradientMode.SYNTHETIC else None
    base_grads, grad_h0 = model.backward(tape, injected)
    _check_finite(base_grads.values(), "gradient", window_index)

    meta_grads = meta_loss = boot_targets = None
    if pending is not None and use_dni:
        if len(pending.delta_hat) != model.n_layers or pending.window_index != window_index - 1:
            raise StateError(f"pending prediction does not belong to window {window_index - 1}")
        if injected is None:
            # real mode: the synthetic tail is not injected, add it to the target separately
            _, tail = model.backward(tape, delta_new, loss_grad=False)
            boot_targets = [g + t for g, t in zip(grad_h0, tail)]
        else:
            boot_targets = grad_h0
        meta_grads, losses = [], []
        for layer in range(model.n_layers):
            g, ml = dni_meta_backward(pending.params[layer], pending.tapes[layer],
                                      boot_targets[layer], pending.delta_hat[layer])
            meta_grads.append(g)
            losses.append(ml)
        meta_loss = float(np.mean(losses))

    new_pending = None
    if use_dni:
        new_pending = PendingPrediction(delta_hat=delta_new, tapes=dni_tapes,
                                        params=[p.copy() for p in dni.params],
                                        window_index=window_index)
    return WindowResult(loss=loss, base_grads=base_grads, meta_grads=meta_grads,
                        meta_loss=meta_loss, states=tape.final_states, pending=new_pending,
                        targets=boot_targets, grad_h0=grad_h0,
                        injected=injected)


def _perplexity(mean_loss: float) -> float:
    return math.exp(mean_loss) if mean_loss < 709.0 else math.inf


@dataclass
class EpochStats:
    mean_loss: float
    perplexity: float
    windows: int
    tokens: int
    dropped_tokens: int
    wall_time: float
    meta_loss: float | None = None
    grad_norms: list[float] = field(default_factory=list, repr=False)


def run_epoch(model: LMModel, dni: NeuronwiseDNI | None, mode: GradientMode,
              stream: BatchStream, base_opt: Adam, lr: float, *,
              dni_opt: Adam | None = None, dni_lr: float = 1e-3,
              clip: float | None = 10.0, train_dni_during_real: bool = True,
              freeze_dni: bool = False, rng: RngState | None = None) -> EpochStats:
    """One pass over ``stream`` with a base update after every window."""
    start = time.perf_counter()
    stream.reset()
    states = model.init_states(stream.batch)
    if dni is not None:
        dni.start_epoch(model.hidden_size, stream.batch)
    pending = None
    params = model.named_parameters()
    dni_params = dni.named_parameters() if dni is not None else None
    total_loss, total_tokens, windows = 0.0, 0, 0
    meta_losses, norms = [], []
    while (window := stream.next_window()) is not None:
        inputs, targets = window
        res = run_window(model, dni, mode, inputs, targets, states, pending,
                         train_dni_during_real=train_dni_during_real,
                         window_index=windows, rng=rng)
        norms.append(clip_global_norm(res.base_grads, clip))
        base_opt.step(params, res.base_grads, lr)
        if res.meta_grads is not None:
            meta_losses.append(res.meta_loss)
            if not freeze_dni and dni_opt is not None:
                flat = {f"dni{i}.{name}": g for i, layer_grads in enumerate(res.meta_grads)
                        for name, g in layer_grads.items()}
                dni_opt.step(dni_params, flat, dni_lr)
        n = inputs.size
        total_loss += res.loss * n
        total_tokens += n
        windows += 1
        states = res.states
        pending = res.pending
    # the last prediction has no successor window; it is dropped
    mean_loss = total_loss / total_tokens
    return EpochStats(mean_loss=mean_loss, perplexity=_perplexity(mean_loss), windows=windows,
                      tokens=total_tokens, dropped_tokens=stream.dropped_tokens,
                      wall_time=time.perf_counter() - start,
                      meta_loss=float(np.mean(meta_losses)) if meta_losses else None,
                      grad_norms=norms)


def evaluate(model: LMModel, stream: BatchStream) -> float:
    """Perplexity over the stream with the hidden state carried between windows."""
    stream.reset()
    states = model.init_states(stream.batch)
    total, count = 0.0, 0
    while (window := stream.next_window()) is not None:
        inputs, targets = window
        loss, tape = model.forward(inputs, targets, states)
        total += loss * inputs.size
        count += inputs.size
        states = tape.final_states
    if count == 0:
        raise DataError("cannot evaluate on an empty stream")
    return _perplexity(total / count)
