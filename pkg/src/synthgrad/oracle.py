"""Independent checks for the hand-written gradients.

``fd_check`` compares analytic gradients with central differences.

``two_window_oracle`` recomputes the bootstrapped boundary target over a
2T span by forward-mode differentiation: it pushes one tangent per
coordinate of the first-boundary state through a separately written forward
pass of the second window. It shares nothing with the reverse-mode code in
``cells``/``model`` except the tensor primitives, so agreement between the
two is evidence rather than tautology. Slow by design; test use only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, StateError
from .tensor import matmul, sigmoid, tanh


@dataclass
class FDReport:
    max_rel: float = 0.0
    max_abs: float = 0.0
    checked: int = 0
    failures: list[tuple] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def fd_check(f: Callable, params, analytic, eps: float = 1e-5, tol_rel: float = 1e-5,
             tol_abs: float = 1e-8, max_coords: int | None = None) -> FDReport:
    """Central-difference check of ``analytic`` against ``f(params)``.

    ``params`` is an array or a dict of arrays, perturbed in place and
    restored after every evaluation. A coordinate passes when its absolute
    error is within ``tol_abs`` or its relative error within ``tol_rel``.
    ``max_rel`` covers coordinates whose gradient magnitude exceeds ``tol_abs``.
    """
    single = isinstance(params, np.ndarray)
    pdict = {"": params} if single else params
    gdict = {"": analytic} if single else analytic
    report = FDReport()
    for name, p in pdict.items():
        if p.dtype != np.float64:
            raise StateError("finite-difference checks require float64 parameters")
        g = np.asarray(gdict[name])
        if g.shape != p.shape:
            raise StateError(f"analytic gradient for {name!r} has shape {g.shape}, param {p.shape}")
        flat = p.reshape(-1)
        coords = range(flat.size) if max_coords is None else range(min(flat.size, max_coords))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(params)
            flat[i] = orig - eps
            fm = f(params)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite objective while perturbing {name}[{i}]")
            num = (fp - fm) / (2.0 * eps)
            ana = float(g.reshape(-1)[i])
            err = abs(ana - num)
            rel = err / max(abs(ana), abs(num), 1e-300)
            report.checked += 1
            report.max_abs = max(report.max_abs, err)
            if max(abs(ana), abs(num)) > tol_abs:
                report.max_rel = max(report.max_rel, rel)
            if err > tol_abs and rel > tol_rel:
                report.failures.append((name, i, ana, num))
    return report


# ---------------------------------------------------------------------------
# 2T-span oracle
# ---------------------------------------------------------------------------

def _snapshot(model) -> dict:
    if getattr(model, "dropout", 0.0):
        raise StateError("the oracle requires a model without dropout")
    return {
        "embed": np.array(model.embed, dtype=np.float64),
        "layers": [(np.array(l.W_z, dtype=np.float64), np.array(l.W_f, dtype=np.float64),
                    np.array(l.b_z, dtype=np.float64), np.array(l.b_f, dtype=np.float64), l.k)
                   for l in model.layers],
        "out_W": np.array(model.out_W, dtype=np.float64),
        "out_b": np.array(model.out_b, dtype=np.float64),
    }


def _shift_concat(x: np.ndarray, k: int) -> np.ndarray:
    # x: [..., T, B, d]; zero-padded window [x_{t-k+1} .. x_t]
    T = x.shape[-3]
    cols = []
    for lag in range(k - 1, -1, -1):
        s = np.zeros_like(x)
        if lag < T:
            s[..., lag:, :, :] = x[..., :T - lag, :, :]
        cols.append(s)
    return np.concatenate(cols, axis=-1)


def _apply(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    lead = x.shape[:-1]
    return matmul(x.reshape(-1, x.shape[-1]), w).reshape(*lead, w.shape[1])


def _plain_forward(snap, ids, states):
    x = snap["embed"][ids]
    finals = []
    for (W_z, W_f, b_z, b_f, k), h in zip(snap["layers"], states):
        xc = _shift_concat(x, k)
        z = tanh(_apply(W_z, xc) + b_z)
        f = sigmoid(_apply(W_f, xc) + b_f)
        hs = []
        for t in range(x.shape[0]):
            h = f[t] * h + (1.0 - f[t]) * z[t]
            hs.append(h)
        x = np.stack(hs)
        finals.append(h)
    return finals


def two_window_oracle(model, window1, window2, injected_tail, initial_states,
                      mask_losses: bool = False) -> list[np.ndarray]:
    """Gradient of ``L(window2) + sum_l <tail_l, h_2T^l>`` w.r.t. every ``h_T^l``.

    ``window1``/``window2`` are ``(inputs, targets)`` pairs of shape
    ``[T, B]``; ``initial_states`` are the states at the start of window 1;
    ``injected_tail`` holds one ``[B, H]`` array per layer (or ``None``).
    ``L(window2)`` is the mean cross-entropy of window 2, dropped entirely
    when ``mask_losses`` is set.
    """
    snap = _snapshot(model)
    L = len(snap["layers"])
    H = snap["out_W"].shape[0]
    in1, _ = (np.asarray(a) for a in window1)
    in2, tg2 = (np.asarray(a) for a in window2)
    B = in1.shape[1]
    if in2.shape[1] != B or len(initial_states) != L:
        raise StateError("snapshot, windows and states disagree on batch or depth")
    for s in initial_states:
        if s.shape != (B, H):
            raise StateError(f"initial state {s.shape} does not match {(B, H)}")
    tails = injected_tail if injected_tail is not None else [None] * L

    boundary = _plain_forward(snap, in1, [np.asarray(s, np.float64) for s in initial_states])

    T2 = in2.shape[0]
    D = B * H
    eye = np.eye(D).reshape(D, B, H)
    x0 = snap["embed"][in2]
    results = []
    for src in range(L):
        # primal and tangent through window 2, tangents seeded at layer src
        x, dx = x0, np.zeros((D,) + x0.shape)
        dtail = 0.0
        for lay, (W_z, W_f, b_z, b_f, k) in enumerate(snap["layers"]):
            xc, dxc = _shift_concat(x, k), _shift_concat(dx, k)
            z = tanh(_apply(W_z, xc) + b_z)
            f = sigmoid(_apply(W_f, xc) + b_f)
            dz = (1.0 - z * z) * _apply(W_z, dxc)
            df = f * (1.0 - f) * _apply(W_f, dxc)
            h = boundary[lay]
            dh = eye.copy() if lay == src else np.zeros((D, B, H))
            hs, dhs = [], []
            for t in range(T2):
                dh = df[:, t] * h + f[t] * dh + (1.0 - f[t]) * dz[:, t] - df[:, t] * z[t]
                h = f[t] * h + (1.0 - f[t]) * z[t]
                hs.append(h)
                dhs.append(dh)
            x, dx = np.stack(hs), np.stack(dhs, axis=1)
            if tails[lay] is not None:
                dtail = dtail + np.einsum("dbh,bh->d", dh, np.asarray(tails[lay], np.float64))
        dloss = 0.0
        if not mask_losses:
            n = T2 * B
            logits = _apply(snap["out_W"], x.reshape(n, H)) + snap["out_b"]
            logits = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), tg2.reshape(-1)] -= 1.0
            dlogits = _apply(snap["out_W"], dx.reshape(D, n, H))
            dloss = np.einsum("dnv,nv->d", dlogits, p) / n
        results.append(np.broadcast_to(dloss + dtail, (D,)).reshape(B, H).copy())
    return results
