"""Dense tensor primitives on top of numpy.

Tensors are plain C-contiguous ``numpy.ndarray`` objects. The functions here
add the checks the hand-written backward passes rely on: exact-or-scalar
broadcasting only, explicit dimension errors, and finiteness guards.

Randomness comes from :class:`RngState`, a counter-based SplitMix64 stream,
so initializations are bit-identical across platforms and numpy versions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

FLOAT64 = np.dtype(np.float64)
FLOAT32 = np.dtype(np.float32)

_PRECISIONS = {"float64": FLOAT64, "64": FLOAT64, "float32": FLOAT32, "32": FLOAT32}


def resolve_dtype(precision) -> np.dtype:
    """Map a precision name (``"float64"``, ``"32"``, a dtype...) to a numpy dtype."""
    if isinstance(precision, str):
        try:
            return _PRECISIONS[precision.lower()]
        except KeyError:
            raise ParameterError(f"unsupported precision {precision!r}") from None
    dt = np.dtype(precision)
    if dt not in (FLOAT32, FLOAT64):
        raise ParameterError(f"unsupported precision {dt}")
    return dt


# ---------------------------------------------------------------------------
# deterministic PRNG
# ---------------------------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _mix_scalar(x: int) -> int:
    return int(_mix64(np.array([x & _MASK64], dtype=np.uint64))[0])


@dataclass
class RngState:
    """Counter-based SplitMix64 generator.

    Output ``i`` is ``mix(seed + (i + 1) * golden)``; the whole state is the
    pair ``(seed, counter)``, which makes checkpointing trivial.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        self.counter = int(self.counter)

    def spawn(self, stream: int) -> "RngState":
        """Independent generator for a named sub-stream (does not consume self)."""
        return RngState(_mix_scalar(self.seed ^ _mix_scalar(stream + 0x5EED)))

    def next_uint64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * _GAMMA)

    def uniform01(self, n: int) -> np.ndarray:
        """``n`` float64 samples in [0, 1) with 53 random bits each."""
        return (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def get_state(self) -> tuple[int, int]:
        return self.seed, self.counter

    def set_state(self, state: tuple[int, int]) -> None:
        self.seed, self.counter = int(state[0]), int(state[1])


def init_uniform(shape: Sequence[int], bound: float, rng: RngState,
                 dtype=FLOAT64) -> np.ndarray:
    """I.i.d. samples from U(-bound, +bound)."""
    if not bound > 0:
        raise ParameterError(f"init bound must be > 0, got {bound}")
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise DimensionError(f"shape must be positive, got {shape}")
    n = int(np.prod(shape))
    u = rng.uniform01(n)
    return (bound * (2.0 * u - 1.0)).reshape(shape).astype(resolve_dtype(dtype))


def zeros(shape: Sequence[int], dtype=FLOAT64) -> np.ndarray:
    return np.zeros(tuple(shape), dtype=resolve_dtype(dtype))


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def _check_broadcast(a, b) -> None:
    sa, sb = np.shape(a), np.shape(b)
    if sa != sb and sa != () and sb != ():
        raise DimensionError(f"incompatible shapes {sa} and {sb} (only exact or scalar broadcast)")


def add(a, b):
    _check_broadcast(a, b)
    return np.add(a, b)


def sub(a, b):
    _check_broadcast(a, b)
    return np.subtract(a, b)


def mul(a, b):
    _check_broadcast(a, b)
    return np.multiply(a, b)


def sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def tanh(x):
    return np.tanh(x)


def oneminus(x):
    return 1.0 - x


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "oneminus": oneminus}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args):
    """Dispatch ``op`` over its arguments; output is always freshly allocated."""
    if op in _UNARY:
        if len(args) != 1:
            raise ParameterError(f"{op} takes one argument")
        return _UNARY[op](np.asarray(args[0]))
    if op in _BINARY:
        if len(args) != 2:
            raise ParameterError(f"{op} takes two arguments")
        return _BINARY[op](np.asarray(args[0]), np.asarray(args[1]))
    raise ParameterError(f"unknown elementwise op {op!r}")


def reduce(op: str, t: np.ndarray, axis: int | None = None):
    t = np.asarray(t)
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {t.ndim}")
    if op == "sum":
        return np.sum(t, axis=axis)
    if op == "mean":
        return np.mean(t, axis=axis)
    if op == "max-index":
        return np.argmax(t, axis=axis)
    raise ParameterError(f"unknown reduction {op!r}")


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
