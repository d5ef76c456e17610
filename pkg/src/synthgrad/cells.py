"""Forward and reverse-mode passes for the layers used by the LM and the DNI.

Every forward returns its outputs plus a tape of cached activations; the
matching backward consumes the tape and returns gradients without touching
the parameters. Layout is time-major: sequences are ``[T, B, d]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, NumericError, StateError
from .tensor import init_uniform, matmul, sigmoid, tanh


# ---------------------------------------------------------------------------
# QRNN layer with f-pooling
# ---------------------------------------------------------------------------

@dataclass
class QRNNParams:
    """Gate weights of a QRNN layer.

    ``W_z`` and ``W_f`` have shape ``[k * d_in, d_hidden]``; the rows are the
    concatenated inputs ``[x_{t-k+1}, ..., x_t]``.
    """

    W_z: np.ndarray
    W_f: np.ndarray
    b_z: np.ndarray
    b_f: np.ndarray
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise DimensionError(f"conv width k must be >= 1, got {self.k}")
        h = self.W_z.shape[1]
        if (self.W_f.shape != self.W_z.shape or self.b_z.shape != (h,)
                or self.b_f.shape != (h,) or self.W_z.shape[0] % self.k):
            raise DimensionError(
                f"inconsistent QRNN shapes W_z={self.W_z.shape} W_f={self.W_f.shape} "
                f"b_z={self.b_z.shape} b_f={self.b_f.shape} k={self.k}")

    @classmethod
    def init(cls, d_in: int, d_hidden: int, rng, k: int = 1, dtype=np.float64):
        bound = 1.0 / np.sqrt(k * d_in)
        return cls(
            W_z=init_uniform((k * d_in, d_hidden), bound, rng, dtype),
            W_f=init_uniform((k * d_in, d_hidden), bound, rng, dtype),
            b_z=np.zeros(d_hidden, dtype=dtype),
            b_f=np.zeros(d_hidden, dtype=dtype),
            k=k,
        )

    @property
    def d_in(self) -> int:
        return self.W_z.shape[0] // self.k

    @property
    def d_hidden(self) -> int:
        return self.W_z.shape[1]

    def named(self) -> dict[str, np.ndarray]:
        return {"W_z": self.W_z, "W_f": self.W_f, "b_z": self.b_z, "b_f": self.b_f}

    def copy(self) -> "QRNNParams":
        return QRNNParams(self.W_z.copy(), self.W_f.copy(), self.b_z.copy(),
                          self.b_f.copy(), self.k)


@dataclass
class QRNNTape:
    xc: np.ndarray  # [T*B, k*d_in] convolved inputs
    z: np.ndarray   # [T, B, H]
    f: np.ndarray   # [T, B, H]
    h: np.ndarray   # [T+1, B, H], h[0] is the carried-in boundary state


def _conv_inputs(x: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return x
    # zero left-padding at the window start
    parts = []
    for lag in range(k - 1, -1, -1):
        shifted = np.zeros_like(x)
        shifted[lag:] = x[:x.shape[0] - lag]
        parts.append(shifted)
    return np.concatenate(parts, axis=-1)


def qrnn_forward(params: QRNNParams, x: np.ndarray, h0: np.ndarray):
    """Run f-pooling over ``x`` ``[T, B, d_in]`` starting from ``h0`` ``[B, H]``.

    Returns ``(h_seq, hT, tape)``.
    """
    if x.ndim != 3 or x.shape[2] != params.d_in:
        raise DimensionError(f"QRNN input {x.shape} does not match d_in={params.d_in}")
    T, B, _ = x.shape
    H = params.d_hidden
    if h0.shape != (B, H):
        raise DimensionError(f"QRNN h0 {h0.shape} != {(B, H)}")
    xc = _conv_inputs(x, params.k).reshape(T * B, -1)
    z = tanh(matmul(xc, params.W_z) + params.b_z).reshape(T, B, H)
    f = sigmoid(matmul(xc, params.W_f) + params.b_f).reshape(T, B, H)
    a = (1.0 - f) * z
    h = np.empty((T + 1, B, H), dtype=x.dtype)
    h[0] = h0
    for t in range(T):
        h[t + 1] = f[t] * h[t] + a[t]
    if not np.all(np.isfinite(h)):
        bad = int(np.argmax(~np.isfinite(h[1:]).reshape(T, -1).all(axis=1)))
        raise NumericError(f"non-finite QRNN activation at timestep {bad}")
    h_seq = h[1:]
    return h_seq, h_seq[-1], QRNNTape(xc=xc, z=z, f=f, h=h)


def qrnn_backward(params: QRNNParams, tape: QRNNTape, grad_h_seq: np.ndarray,
                  grad_hT: np.ndarray | None = None):
    """Reverse-mode pass for ``sum_t <grad_h_seq[t], h_t> + <grad_hT, h_T>``.

    ``h0`` is a leaf: its gradient is returned but not propagated further.
    Returns ``(grads, grad_h0, grad_x)``.
    """
    if tape is None or tape.h is None:
        raise StateError("QRNN backward called without a forward tape")
    z, f, h = tape.z, tape.f, tape.h
    T, B, H = z.shape
    if grad_h_seq.shape != (T, B, H):
        raise StateError(f"grad_h_seq {grad_h_seq.shape} does not match tape {(T, B, H)}")
    dh = np.empty_like(z)
    carry = np.zeros((B, H), dtype=z.dtype) if grad_hT is None else grad_hT
    if carry.shape != (B, H):
        raise StateError(f"boundary gradient {carry.shape} does not match tape {(B, H)}")
    for t in range(T - 1, -1, -1):
        dh[t] = grad_h_seq[t] + carry
        carry = dh[t] * f[t]
    grad_h0 = carry
    dpre_z = (dh * (1.0 - f) * (1.0 - z * z)).reshape(T * B, H)
    dpre_f = (dh * (h[:-1] - z) * f * (1.0 - f)).reshape(T * B, H)
    grads = {
        "W_z": matmul(tape.xc.T, dpre_z),
        "W_f": matmul(tape.xc.T, dpre_f),
        "b_z": dpre_z.sum(axis=0),
        "b_f": dpre_f.sum(axis=0),
    }
    dxc = (matmul(dpre_z, params.W_z.T) + matmul(dpre_f, params.W_f.T)).reshape(T, B, -1)
    d_in = params.d_in
    grad_x = dxc[:, :, (params.k - 1) * d_in:].copy()
    for lag in range(1, params.k):
        lo = (params.k - 1 - lag) * d_in
        grad_x[:T - lag] += dxc[lag:, :, lo:lo + d_in]
    return grads, grad_h0, grad_x


# ---------------------------------------------------------------------------
# MLP: affine layers, tanh between them, linear output
# ---------------------------------------------------------------------------

@dataclass
class MLPParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("MLP needs one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise DimensionError(f"MLP layer {i}: bias {b.shape} vs weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"MLP layer {i}: dimension chain broken")

    @classmethod
    def init(cls, dims: list[int], rng, dtype=np.float64, zero_last: bool = False):
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            if last and zero_last:
                weights.append(np.zeros((a, b), dtype=dtype))
            else:
                weights.append(init_uniform((a, b), 1.0 / np.sqrt(a), rng, dtype))
            biases.append(np.zeros(b, dtype=dtype))
        return cls(weights, biases)

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class MLPTape:
    inputs: list[np.ndarray] = field(default_factory=list)  # input of each affine layer
    outputs: list[np.ndarray] = field(default_factory=list)  # tanh outputs of hidden layers


def mlp_forward(params: MLPParams, x: np.ndarray):
    """``x`` is ``[N, d_in]``; returns ``(y, tape)``."""
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise DimensionError(f"MLP input {x.shape} vs first weight {params.weights[0].shape}")
    tape = MLPTape()
    a = x
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(a)
        a = matmul(a, w) + b
        if i < n - 1:
            a = tanh(a)
            tape.outputs.append(a)
    return a, tape


def mlp_backward(params: MLPParams, tape: MLPTape, grad_y: np.ndarray):
    """Returns ``(grads, grad_x)``; grads keyed like :meth:`MLPParams.named`."""
    if len(tape.inputs) != len(params.weights):
        raise StateError("MLP tape does not match parameters")
    grads = {}
    g = grad_y
    for i in range(len(params.weights) - 1, -1, -1):
        if i < len(params.weights) - 1:
            y = tape.outputs[i]
            g = g * (1.0 - y * y)
        grads[f"W{i}"] = matmul(tape.inputs[i].T, g)
        grads[f"b{i}"] = g.sum(axis=0)
        g = matmul(g, params.weights[i].T)
    return dict(sorted(grads.items())), g


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

def embedding_forward(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(f"token id outside vocabulary of size {table.shape[0]}")
    return table[ids]


def embedding_backward(table_shape, ids: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    grad = np.zeros(table_shape, dtype=grad_out.dtype)
    np.add.at(grad, np.asarray(ids).ravel(), grad_out.reshape(-1, table_shape[1]))
    return grad


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

@dataclass
class XentTape:
    probs: np.ndarray
    targets: np.ndarray


def softmax_xent_forward(logits: np.ndarray, targets: np.ndarray):
    """Mean negative log-likelihood (nats) of ``targets`` ``[N]`` under ``logits`` ``[N, V]``."""
    targets = np.asarray(targets).ravel()
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise DimensionError(f"logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise DataError(f"target id outside vocabulary of size {logits.shape[1]}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(targets.shape[0]), targets].mean()
    return float(loss), XentTape(probs=np.exp(logp), targets=targets)


def softmax_xent_backward(tape: XentTape, scale: float = 1.0) -> np.ndarray:
    n = tape.targets.shape[0]
    g = tape.probs.copy()
    g[np.arange(n), tape.targets] -= 1.0
    return g * (scale / n)
