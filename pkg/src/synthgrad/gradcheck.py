"""Randomized certification of every hand-written backward pass.

Each ``check_*`` function draws one random small configuration, builds a
scalar objective from the forward pass, and compares the analytic gradient
with central differences via :func:`oracle.fd_check`. ``check_bootstrap``
compares the training loop's DNI target with the 2T-span oracle.
"""

from __future__ import annotations

import copy

import numpy as np

from . import cells
from .dni import DNIParams, DNIStateBank, NeuronwiseDNI, dni_meta_backward, dni_predict, dni_vjp
from .model import LMModel
from .optim import GradientMode
from .oracle import FDReport, fd_check, two_window_oracle
from .tensor import RngState
from .train_loop import run_window

EPS = 1e-5
TOL_REL = 1e-5
TOL_ABS = 1e-8


def _fd(f, params, grads) -> FDReport:
    return fd_check(f, params, grads, eps=EPS, tol_rel=TOL_REL, tol_abs=TOL_ABS)


def check_embedding(rng: np.random.Generator) -> FDReport:
    V, E, T, B = rng.integers(3, 8), rng.integers(2, 5), rng.integers(1, 5), rng.integers(1, 4)
    table = rng.normal(size=(V, E))
    ids = rng.integers(0, V, size=(T, B))
    G = rng.normal(size=(T, B, E))
    grad = cells.embedding_backward(table.shape, ids, G)
    return _fd(lambda p: float(np.sum(G * cells.embedding_forward(p, ids))), table, grad)


def check_qrnn(rng: np.random.Generator) -> FDReport:
    T, B = rng.integers(1, 6), rng.integers(1, 4)
    d_in, H, k = rng.integers(1, 5), rng.integers(1, 5), int(rng.integers(1, 3))
    p = cells.QRNNParams(rng.normal(size=(k * d_in, H)) * 0.7, rng.normal(size=(k * d_in, H)) * 0.7,
                         rng.normal(size=H) * 0.3, rng.normal(size=H) * 0.3, k)
    x = rng.normal(size=(T, B, d_in))
    h0 = rng.normal(size=(B, H)) * 0.5
    G, gT = rng.normal(size=(T, B, H)), rng.normal(size=(B, H))
    h_seq, _, tape = cells.qrnn_forward(p, x, h0)
    grads, g_h0, g_x = cells.qrnn_backward(p, tape, G, gT)
    variables = dict(p.named(), h0=h0, x=x)
    analytic = dict(grads, h0=g_h0, x=g_x)

    def objective(v):
        q = cells.QRNNParams(v["W_z"], v["W_f"], v["b_z"], v["b_f"], k)
        hs, hT, _ = cells.qrnn_forward(q, v["x"], v["h0"])
        return float(np.sum(G * hs) + np.sum(gT * hT))

    return _fd(objective, variables, analytic)


def check_mlp(rng: np.random.Generator) -> FDReport:
    dims = [int(d) for d in rng.integers(1, 5, size=rng.integers(2, 5))]
    p = cells.MLPParams([rng.normal(size=(a, b)) for a, b in zip(dims[:-1], dims[1:])],
                        [rng.normal(size=b) * 0.3 for b in dims[1:]])
    N = rng.integers(1, 5)
    x = rng.normal(size=(N, dims[0]))
    G = rng.normal(size=(N, dims[-1]))
    _, tape = cells.mlp_forward(p, x)
    grads, gx = cells.mlp_backward(p, tape, G)
    variables = dict(p.named(), x=x)

    def objective(v):
        q = cells.MLPParams([v[f"W{i}"] for i in range(len(dims) - 1)],
                            [v[f"b{i}"] for i in range(len(dims) - 1)])
        y, _ = cells.mlp_forward(q, v["x"])
        return float(np.sum(G * y))

    return _fd(objective, variables, dict(grads, x=gx))


def check_softmax_xent(rng: np.random.Generator) -> FDReport:
    N, V = rng.integers(1, 7), rng.integers(2, 7)
    logits = rng.normal(size=(N, V)) * 2.0
    targets = rng.integers(0, V, size=N)
    _, tape = cells.softmax_xent_forward(logits, targets)
    grad = cells.softmax_xent_backward(tape)
    return _fd(lambda z: cells.softmax_xent_forward(z, targets)[0], logits, grad)


def _random_dni(rng, d_g):
    p = DNIParams.init(d_g, _rng_state(rng))
    for w in p.named().values():
        w[...] = rng.normal(size=w.shape) * 0.6
    return p


def _rng_state(rng):
    return RngState(int(rng.integers(0, 2**63)))


def _dni_setup(rng):
    B, H, d_g = rng.integers(1, 4), rng.integers(1, 5), int(rng.integers(1, 5))
    params = _random_dni(rng, d_g)
    bank = DNIStateBank()
    bank.allocate(1, H, B, d_g)
    bank.hg[...] = rng.normal(size=bank.hg.shape) * 0.5
    hT = rng.normal(size=(B, H)) * 0.5
    return params, bank, hT


def _predict_with(named_values, template: DNIParams, bank, hT):
    q = copy.deepcopy(template)
    for name, arr in q.named().items():
        arr[...] = named_values[name]
    b = DNIStateBank()
    b.hg = bank.hg.copy()
    return dni_predict(q, hT, b, 0)[0]


def check_dni_predict(rng: np.random.Generator) -> FDReport:
    params, bank, hT = _dni_setup(rng)
    C = rng.normal(size=hT.shape)
    work = DNIStateBank()
    work.hg = bank.hg.copy()
    _, tape = dni_predict(params, hT, work, 0)
    grads = dni_vjp(params, tape, C)
    values = {k: v.copy() for k, v in params.named().items()}
    return _fd(lambda v: float(np.sum(C * _predict_with(v, params, bank, hT))), values, grads)


def check_dni_meta(rng: np.random.Generator) -> FDReport:
    params, bank, hT = _dni_setup(rng)
    target = rng.normal(size=hT.shape)
    work = DNIStateBank()
    work.hg = bank.hg.copy()
    pred, tape = dni_predict(params, hT, work, 0)
    grads, _ = dni_meta_backward(params, tape, target, pred)
    values = {k: v.copy() for k, v in params.named().items()}

    def meta_loss(v):
        d = _predict_with(v, params, bank, hT) - target
        return float(np.mean(d * d))

    return _fd(meta_loss, values, grads)


def check_lm_window(rng: np.random.Generator) -> FDReport:
    """Whole-model window objective with injected boundary gradients."""
    V, E, H = rng.integers(3, 7), rng.integers(1, 4), rng.integers(1, 4)
    L, T, B, k = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 3), int(rng.integers(1, 3))
    model = LMModel(int(V), int(E), int(H), int(L), k=k, rng=_rng_state(rng))
    for p in model.named_parameters().values():
        p[...] = rng.normal(size=p.shape) * 0.5
    ids = rng.integers(0, V, size=(T + 1, B))
    states = [rng.normal(size=(B, H)) * 0.5 for _ in range(L)]
    inject = [rng.normal(size=(B, H)) * 0.1 for _ in range(L)]
    _, tape = model.forward(ids[:-1], ids[1:], states)
    grads, g_h0 = model.backward(tape, inject)
    variables = dict(model.named_parameters())
    analytic = dict(grads)
    for i, (s, g) in enumerate(zip(states, g_h0)):
        variables[f"h0[{i}]"] = s
        analytic[f"h0[{i}]"] = g

    def objective(_v):
        loss, t = model.forward(ids[:-1], ids[1:], states)
        return loss + sum(float(np.sum(c * h)) for c, h in zip(inject, t.final_states))

    return _fd(objective, variables, analytic)


CELL_CHECKS = {
    "embedding": check_embedding,
    "qrnn": check_qrnn,
    "mlp": check_mlp,
    "softmax_xent": check_softmax_xent,
    "dni_predict": check_dni_predict,
    "dni_meta": check_dni_meta,
    "lm_window": check_lm_window,
}


def run_cell_checks(n_configs: int = 20, seed: int = 0) -> dict[str, list[FDReport]]:
    out = {}
    for i, (name, fn) in enumerate(CELL_CHECKS.items()):
        rng = np.random.default_rng([seed, i])
        out[name] = [fn(rng) for _ in range(n_configs)]
    return out


# ---------------------------------------------------------------------------
# bootstrapped target vs the 2T-span oracle
# ---------------------------------------------------------------------------

def check_bootstrap(rng: np.random.Generator, T: int | None = None,
                    layers: int | None = None) -> float:
    """Max abs difference between the loop's target and the oracle, all layers.

    ``T`` and ``layers`` are drawn from {2, 3, 5} and {1, 2} unless given.
    """
    T = int(rng.choice([2, 3, 5])) if T is None else T
    L = int(rng.choice([1, 2])) if layers is None else layers
    V, E, H, B, d_g = int(rng.integers(3, 7)), int(rng.integers(2, 5)), 4, 2, 3
    k = int(rng.integers(1, 3))
    mode = GradientMode.SYNTHETIC if rng.random() < 0.5 else GradientMode.REAL
    model = LMModel(V, E, H, L, k=k, rng=_rng_state(rng))
    dni = NeuronwiseDNI(L, d_g, rng=_rng_state(rng))
    for p in dni.named_parameters().values():
        p[...] = rng.normal(size=p.shape) * 0.5
    dni.start_epoch(H, B)
    ids = rng.integers(0, V, size=(2 * T + 1, B))
    w1 = (ids[:T], ids[1:T + 1])
    w2 = (ids[T:2 * T], ids[T + 1:])
    s0 = [rng.normal(size=(B, H)) * 0.5 for _ in range(L)]
    first = run_window(model, dni, mode, *w1, s0, None, window_index=0)
    second = run_window(model, dni, mode, *w2, first.states, first.pending, window_index=1)
    expected = two_window_oracle(model, w1, w2, second.pending.delta_hat, s0)
    return max(float(np.max(np.abs(a - b))) for a, b in zip(second.targets, expected))


def run_bootstrap_checks(n_instances: int = 50, seed: int = 0) -> list[float]:
    return [check_bootstrap(np.random.default_rng([seed, 99, i])) for i in range(n_instances)]
