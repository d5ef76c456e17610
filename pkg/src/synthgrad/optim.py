"""Adam, cosine annealing with warm restarts, and the real/synthetic alternation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError, ParameterError


class GradientMode(Enum):
    """Source of the gradient at truncation boundaries."""

    REAL = "real"  # boundary gradient is zero (plain truncated BPTT)
    SYNTHETIC = "synthetic"  # boundary gradient predicted by the DNI


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **hyper)

    def reset(self) -> None:
        self.m[...] = 0.0
        self.v[...] = 0.0
        self.t = 0


def adam_apply(state: AdamState, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
    """One bias-corrected Adam step, in place on ``param`` and ``state``."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(f"adam: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if not lr > 0:
        raise ParameterError(f"learning rate must be > 0, got {lr}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to adam")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Adam over a dict of named parameters."""

    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.states = {name: AdamState.like(p, beta1=beta1, beta2=beta2, eps=eps)
                       for name, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        for name, p in params.items():
            adam_apply(self.states[name], p, grads[name], lr)

    def reset(self) -> None:
        for s in self.states.values():
            s.reset()

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name, s in self.states.items():
            out[f"{prefix}.m.{name}"] = s.m
            out[f"{prefix}.v.{name}"] = s.v
        return out

    def steps(self) -> dict[str, int]:
        return {name: s.t for name, s in self.states.items()}

    def load(self, prefix: str, arrays: dict[str, np.ndarray], steps: dict[str, int]) -> None:
        for name, s in self.states.items():
            s.m[...] = arrays[f"{prefix}.m.{name}"]
            s.v[...] = arrays[f"{prefix}.v.{name}"]
            s.t = int(steps[name])


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# warm restarts
# ---------------------------------------------------------------------------

@dataclass
class RestartSchedule:
    """Per-epoch cosine annealing; run ``i`` lasts ``2**i * e_base`` epochs.

    With ``enabled=False`` the learning rate stays at ``eta_max`` and no
    restart ever fires.
    """

    e_base: int
    eta_max: float
    eta_min: float = 0.0
    run_index: int = 0
    e_cur: int = 0
    enabled: bool = True

    def __post_init__(self):
        if self.e_base < 1:
            raise ParameterError(f"e_base must be a positive integer, got {self.e_base}")
        if not self.eta_max >= self.eta_min >= 0:
            raise ParameterError("need eta_max >= eta_min >= 0")

    @property
    def run_length(self) -> int:
        return 2 ** self.run_index * self.e_base


def lr_at(sched: RestartSchedule) -> float:
    if not sched.enabled:
        return sched.eta_max
    frac = sched.e_cur / sched.run_length
    return sched.eta_min + 0.5 * (sched.eta_max - sched.eta_min) * (1.0 + math.cos(frac * math.pi))


@dataclass
class AlternationPolicy:
    """Maps a run index to the gradient mode used throughout that run."""

    rule: Callable[[int], GradientMode] = field(default=None)
    name: str = "alternate"

    def __post_init__(self):
        if self.rule is None:
            self.rule = _alternate

    def __call__(self, run_index: int) -> GradientMode:
        return self.rule(run_index)

    @classmethod
    def alternating(cls) -> "AlternationPolicy":
        return cls(_alternate, "alternate")

    @classmethod
    def constant(cls, mode: GradientMode) -> "AlternationPolicy":
        return cls(lambda _i: mode, f"constant-{mode.value}")


def _alternate(run_index: int) -> GradientMode:
    return GradientMode.REAL if run_index % 2 == 0 else GradientMode.SYNTHETIC


@dataclass(frozen=True)
class Restarted:
    run_index: int
    mode: GradientMode


def advance_epoch(sched: RestartSchedule, policy: AlternationPolicy) -> Restarted | None:
    """Record a finished epoch; returns :class:`Restarted` when a run ends."""
    if not sched.enabled:
        sched.e_cur += 1
        return None
    sched.e_cur += 1
    if sched.e_cur >= sched.run_length:
        sched.run_index += 1
        sched.e_cur = 0
        return Restarted(sched.run_index, policy(sched.run_index))
    return None
