"""Neuron-wise synthetic-gradient predictor.

One small network ``g(h, h_g; phi)`` is shared by every neuron of a base
layer. Each (layer, neuron, batch lane) keeps its own recurrent state
``h_g``, so predictions differ only through inputs and state, never through
parameters. The network is

    scalar h_T -> up MLP (1 -> d_g -> d_g) -> one QRNN step (d_g)
               -> down MLP (d_g -> d_g -> 1) -> scalar gradient estimate

and it advances once per truncation boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import (
    MLPParams,
    MLPTape,
    QRNNParams,
    QRNNTape,
    mlp_backward,
    mlp_forward,
    qrnn_backward,
    qrnn_forward,
)
from .errors import DimensionError, StateError
from .tensor import RngState, check_finite, resolve_dtype


@dataclass
class DNIParams:
    up: MLPParams
    core: QRNNParams
    down: MLPParams

    @classmethod
    def init(cls, d_g: int, rng: RngState, dtype="float64") -> "DNIParams":
        dtype = resolve_dtype(dtype)
        return cls(
            up=MLPParams.init([1, d_g, d_g], rng, dtype),
            core=QRNNParams.init(d_g, d_g, rng, 1, dtype),
            down=MLPParams.init([d_g, d_g, 1], rng, dtype, zero_last=True),
        )

    @property
    def d_g(self) -> int:
        return self.core.d_hidden

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, part in (("up", self.up), ("core", self.core), ("down", self.down)):
            for name, p in part.named().items():
                out[f"{prefix}.{name}"] = p
        return out

    def size(self) -> int:
        return sum(p.size for p in self.named().values())

    def copy(self) -> "DNIParams":
        return DNIParams(self.up.copy(), self.core.copy(), self.down.copy())


class DNIStateBank:
    """Private DNI core states ``hg[layer, neuron, lane, :]``."""

    def __init__(self):
        self.hg: np.ndarray | None = None

    def allocate(self, n_layers: int, n_neurons: int, batch: int, d_g: int, dtype="float64"):
        self.hg = np.zeros((n_layers, n_neurons, batch, d_g), dtype=resolve_dtype(dtype))

    @property
    def initialized(self) -> bool:
        return self.hg is not None

    def reset(self, which: str = "all", layer: int | None = None) -> None:
        """Zero the states; ``which`` is ``"all"``, ``"restart"`` or ``"layer"``."""
        if self.hg is None:
            return
        if which in ("all", "restart"):
            self.hg[...] = 0.0
        elif which == "layer":
            if layer is None:
                raise StateError("reset('layer') needs a layer index")
            self.hg[layer] = 0.0
        else:
            raise StateError(f"unknown reset target {which!r}")


@dataclass
class DNITape:
    layer: int
    batch: int
    neurons: int
    up: MLPTape
    core: QRNNTape
    down: MLPTape


def dni_predict(params: DNIParams, hT_layer: np.ndarray, bank: DNIStateBank, layer: int):
    """Predict the boundary gradient for every neuron of one base layer.

    ``hT_layer`` is ``[B, H]``. Advances ``bank.hg[layer]`` and returns
    ``(delta_hat [B, H], tape)``.
    """
    if not bank.initialized:
        raise StateError("DNI state bank has not been allocated")
    B, H = hT_layer.shape
    _, Hb, Bb, d_g = bank.hg.shape
    if (Hb, Bb, d_g) != (H, B, params.d_g):
        raise DimensionError(f"bank slice {(Hb, Bb, d_g)} does not match input {(H, B, params.d_g)}")
    check_finite(hT_layer, "DNI input h_T")
    n = H * B
    # neuron-major rows: row = i * B + b
    x = hT_layer.T.reshape(n, 1)
    u, up_tape = mlp_forward(params.up, x)
    hg = bank.hg[layer].reshape(n, d_g)
    _, hg_new, core_tape = qrnn_forward(params.core, u[None], hg)
    out, down_tape = mlp_forward(params.down, hg_new)
    bank.hg[layer] = hg_new.reshape(H, B, d_g)
    delta_hat = out.reshape(H, B).T.copy()
    return delta_hat, DNITape(layer=layer, batch=B, neurons=H, up=up_tape, core=core_tape,
                              down=down_tape)


def dni_vjp(params: DNIParams, tape: DNITape, grad_delta: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of ``sum(grad_delta * delta_hat)`` w.r.t. the shared parameters.

    The incoming core state is a leaf, so nothing flows to earlier boundaries.
    """
    B, H = tape.batch, tape.neurons
    if grad_delta.shape != (B, H):
        raise StateError(f"cotangent {grad_delta.shape} does not match tape {(B, H)}")
    g_out = grad_delta.T.reshape(H * B, 1)
    down_g, g_hg = mlp_backward(params.down, tape.down, g_out)
    core_g, _, g_u = qrnn_backward(params.core, tape.core, np.zeros_like(tape.core.z), g_hg)
    up_g, _ = mlp_backward(params.up, tape.up, g_u[0])
    grads = {}
    for prefix, part in (("up", up_g), ("core", core_g), ("down", down_g)):
        for name, g in part.items():
            grads[f"{prefix}.{name}"] = g
    return {name: grads[name] for name in params.named()}


def dni_meta_backward(params: DNIParams, tape: DNITape, target: np.ndarray,
                      predicted: np.ndarray):
    """Gradient of the mean squared error between prediction and target.

    The loss is ``mean_{b,i} (predicted - target)^2``; ``target`` is a
    constant. Gradients from all neurons and lanes are summed into the
    shared parameters. Returns ``(grads, meta_loss)``.
    """
    B, H = tape.batch, tape.neurons
    if target.shape != (B, H) or predicted.shape != (B, H):
        raise StateError(f"target {target.shape} / prediction {predicted.shape} vs tape {(B, H)}")
    diff = predicted - target
    meta_loss = float(np.mean(diff * diff))
    return dni_vjp(params, tape, (2.0 / (B * H)) * diff), meta_loss


class NeuronwiseDNI:
    """Per-layer shared DNI parameters plus the per-neuron state bank."""

    def __init__(self, n_layers: int, d_g: int = 50, rng: RngState | None = None,
                 dtype="float64"):
        rng = rng if rng is not None else RngState(0)
        self.dtype = resolve_dtype(dtype)
        self.d_g = d_g
        self.params = [DNIParams.init(d_g, rng, self.dtype) for _ in range(n_layers)]
        self.bank = DNIStateBank()

    @property
    def n_layers(self) -> int:
        return len(self.params)

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, p in enumerate(self.params):
            for name, v in p.named().items():
                out[f"dni{i}.{name}"] = v
        return out

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            if name not in values or values[name].shape != p.shape:
                raise StateError(f"missing or mis-shaped DNI parameter {name}")
            p[...] = values[name]

    def start_epoch(self, n_neurons: int, batch: int) -> None:
        self.bank.allocate(self.n_layers, n_neurons, batch, self.d_g, self.dtype)
