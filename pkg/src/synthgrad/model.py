"""Embedding -> stacked QRNN -> softmax language model with a manual backward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import (
    QRNNParams,
    QRNNTape,
    XentTape,
    embedding_backward,
    embedding_forward,
    qrnn_backward,
    qrnn_forward,
    softmax_xent_backward,
    softmax_xent_forward,
)
from .errors import DimensionError, ParameterError, StateError
from .tensor import RngState, init_uniform, matmul, resolve_dtype

INIT_RANGE = 0.1


@dataclass
class WindowTape:
    """Everything cached by one forward pass over a truncation window."""

    ids: np.ndarray
    layer_tapes: list[QRNNTape]
    layer_inputs: list[np.ndarray]
    dropout_masks: list[np.ndarray | None]
    top: np.ndarray
    xent: XentTape
    final_states: list[np.ndarray] = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.ids.shape[0]


class LMModel:
    """Character- or word-level QRNN language model.

    Parameters live in plain arrays that optimizers update in place;
    :meth:`named_parameters` exposes them under stable dotted names.
    """

    def __init__(self, vocab_size: int, embed_size: int = 32, hidden_size: int = 64,
                 n_layers: int = 2, k: int = 1, dropout: float = 0.0,
                 dtype="float64", rng: RngState | None = None):
        if min(vocab_size, embed_size, hidden_size, n_layers) < 1:
            raise ParameterError("model dimensions must be positive")
        if k not in (1, 2):
            raise ParameterError(f"conv width k must be 1 or 2, got {k}")
        if not 0.0 <= dropout < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {dropout}")
        self.dtype = resolve_dtype(dtype)
        rng = rng if rng is not None else RngState(0)
        self.vocab_size = vocab_size
        self.embed_size = embed_size
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.k = k
        self.dropout = dropout
        self.embed = init_uniform((vocab_size, embed_size), INIT_RANGE, rng, self.dtype)
        self.layers = [
            QRNNParams.init(embed_size if i == 0 else hidden_size, hidden_size, rng, k, self.dtype)
            for i in range(n_layers)
        ]
        self.out_W = init_uniform((hidden_size, vocab_size), INIT_RANGE, rng, self.dtype)
        self.out_b = np.zeros(vocab_size, dtype=self.dtype)

    # -- parameters -------------------------------------------------------

    def named_parameters(self) -> dict[str, np.ndarray]:
        params = {"embed": self.embed}
        for i, layer in enumerate(self.layers):
            for name, p in layer.named().items():
                params[f"qrnn{i}.{name}"] = p
        params["out.W"] = self.out_W
        params["out.b"] = self.out_b
        return params

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            if name not in values:
                raise StateError(f"missing parameter {name}")
            if values[name].shape != p.shape:
                raise StateError(f"parameter {name}: shape {values[name].shape} != {p.shape}")
            p[...] = values[name]

    def init_states(self, batch: int) -> list[np.ndarray]:
        return [np.zeros((batch, self.hidden_size), dtype=self.dtype) for _ in self.layers]

    # -- passes -----------------------------------------------------------

    def forward(self, inputs: np.ndarray, targets: np.ndarray, states: list[np.ndarray],
                rng: RngState | None = None):
        """Mean cross-entropy over a ``[T, B]`` window; returns ``(loss, tape)``.

        Dropout masks are drawn only when ``rng`` is given and dropout > 0.
        """
        inputs = np.asarray(inputs)
        if inputs.ndim != 2 or np.shape(targets) != inputs.shape:
            raise DimensionError(f"inputs {inputs.shape} and targets {np.shape(targets)} must be [T, B]")
        if len(states) != self.n_layers:
            raise DimensionError(f"expected {self.n_layers} carried states, got {len(states)}")
        T, B = inputs.shape
        x = embedding_forward(self.embed, inputs)
        layer_tapes, layer_inputs, masks, finals = [], [], [], []
        for i, layer in enumerate(self.layers):
            mask = None
            if i > 0 and rng is not None and self.dropout > 0:
                keep = 1.0 - self.dropout
                mask = ((rng.uniform01(x.size) < keep) / keep).astype(self.dtype).reshape(x.shape)
                x = x * mask
            layer_inputs.append(x)
            masks.append(mask)
            h_seq, hT, tape = qrnn_forward(layer, x, states[i])
            layer_tapes.append(tape)
            finals.append(hT.copy())
            x = h_seq
        top = x.reshape(T * B, self.hidden_size)
        logits = matmul(top, self.out_W) + self.out_b
        loss, xent = softmax_xent_forward(logits, targets)
        return loss, WindowTape(ids=inputs, layer_tapes=layer_tapes, layer_inputs=layer_inputs,
                                dropout_masks=masks, top=top, xent=xent, final_states=finals)

    def backward(self, tape: WindowTape, boundary_grads: list[np.ndarray] | None = None,
                 loss_grad: bool = True):
        """Gradients of ``loss + sum_l <boundary_grads[l], h_T^l>``.

        With ``loss_grad=False`` only the boundary term is differentiated.
        Returns ``(grads, grad_h0)`` where ``grad_h0[l]`` is the gradient at
        layer ``l``'s carried-in state.
        """
        if tape is None:
            raise StateError("backward called without a forward tape")
        T, B = tape.ids.shape
        H = self.hidden_size
        if boundary_grads is not None and len(boundary_grads) != self.n_layers:
            raise StateError("one boundary gradient per layer required")
        grads: dict[str, np.ndarray] = {}
        if loss_grad:
            dlogits = softmax_xent_backward(tape.xent)
            grads["out.W"] = matmul(tape.top.T, dlogits)
            grads["out.b"] = dlogits.sum(axis=0)
            g = matmul(dlogits, self.out_W.T).reshape(T, B, H)
        else:
            grads["out.W"] = np.zeros_like(self.out_W)
            grads["out.b"] = np.zeros_like(self.out_b)
            g = np.zeros((T, B, H), dtype=self.dtype)
        grad_h0 = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            boundary = None if boundary_grads is None else boundary_grads[i]
            lg, grad_h0[i], g = qrnn_backward(self.layers[i], tape.layer_tapes[i], g, boundary)
            for name, v in lg.items():
                grads[f"qrnn{i}.{name}"] = v
            if tape.dropout_masks[i] is not None:
                g = g * tape.dropout_masks[i]
        grads["embed"] = embedding_backward(self.embed.shape, tape.ids, g)
        ordered = {name: grads[name] for name in self.named_parameters()}
        return ordered, grad_h0
