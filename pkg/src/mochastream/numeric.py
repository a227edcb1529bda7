"""Dense-tensor substrate: validated float arrays, stable nonlinearities with
explicit backward rules, and a counter-based random number facility.

All operations are pure functions over numpy arrays in float32 or float64.
Forward ops preserve the input dtype; every differentiable op has a matching
``*_backward`` returning gradients w.r.t. its inputs.
"""

from __future__ import annotations

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)

# Mixing constants from splitmix64, used to derive child stream ids.
_MIX_MULT = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_U64 = (1 << 64) - 1


class NonFiniteError(ArithmeticError):
    """A value became NaN/Inf where the numeric contract requires finiteness."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


def as_tensor(x, dtype=None) -> np.ndarray:
    """Validate ``x`` as a rank<=3 float tensor and return a C-contiguous copy/view.

    Raises DimensionError on bad rank/dtype, NonFiniteError on NaN/Inf entries.
    """
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        if dtype is None and np.issubdtype(arr.dtype, np.number):
            arr = arr.astype(np.float64)
        else:
            raise DimensionError(f"expected float32/float64 tensor, got {arr.dtype}")
    if arr.ndim > 3:
        raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of 3")
    arr = np.ascontiguousarray(arr)
    check_finite(arr, "as_tensor input")
    return arr


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b


def matmul_backward(a, b, grad):
    """Gradients of ``matmul(a, b)`` w.r.t. both operands."""
    return grad @ b.T, a.T @ grad


def add(a, b):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"add expects equal shapes, got {np.shape(a)} and {np.shape(b)}")
    return a + b


def add_backward(grad):
    return grad, grad


def scale(x, c: float):
    return x * c


def scale_backward(grad, c: float):
    return grad * c


def concat(parts, axis: int = -1) -> np.ndarray:
    if not parts:
        raise DimensionError("concat of zero tensors")
    return np.concatenate(parts, axis=axis)


def concat_backward(grad, sizes, axis: int = -1):
    """Split ``grad`` back into pieces of the given sizes along ``axis``."""
    offsets = np.cumsum(sizes)[:-1]
    return np.split(grad, offsets, axis=axis)


def narrow(x, start: int, length: int, axis: int = -1) -> np.ndarray:
    """Contiguous slice of ``length`` elements starting at ``start``."""
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise DimensionError(f"slice [{start}:{start + length}) out of range for axis size {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    return x[tuple(index)]


def narrow_backward(grad, x_shape, start: int, axis: int = -1):
    out = np.zeros(x_shape, dtype=grad.dtype)
    index = [slice(None)] * len(x_shape)
    index[axis] = slice(start, start + grad.shape[axis])
    out[tuple(index)] = grad
    return out


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def stable_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax along ``axis``; safe for large magnitudes."""
    if x.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(y, grad, axis: int = -1):
    """Backward rule given the forward output ``y = softmax(x)``."""
    inner = np.sum(grad * y, axis=axis, keepdims=True)
    return y * (grad - inner)


def sigmoid(x):
    # Evaluate exp only on the non-overflowing branch for each sign.
    arr = np.asarray(x)
    scalar = arr.ndim == 0
    a = np.atleast_1d(arr)
    if a.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        a = a.astype(np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ex = np.exp(a[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out


def sigmoid_backward(y, grad):
    return grad * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_backward(y, grad):
    return grad * (1.0 - y * y)


# ---------------------------------------------------------------------------
# random numbers
# ---------------------------------------------------------------------------

def _mix64(*words: int) -> int:
    """splitmix64-style avalanche over a sequence of 64-bit words."""
    h = 0x9B97F4A7C15E3779
    for w in words:
        h = (h + (w & _U64)) & _U64
        h = (h ^ (h >> 30)) * _MIX_A & _U64
        h = (h ^ (h >> 27)) * _MIX_B & _U64
        h ^= h >> 31
        h = (h * _MIX_MULT + 1) & _U64
    return h


class RngStream:
    """Reproducible random stream addressed by (seed, stream id).

    Backed by the counter-based Philox generator, so identical (seed, stream)
    pairs replay identical sequences regardless of what other streams did —
    parallel schedules cannot perturb results.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _U64
        self.stream = int(stream) & _U64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(counter=0, key=key))

    def derive(self, *tags: int) -> "RngStream":
        """Child stream with an id mixed from this stream's id and ``tags``."""
        return RngStream(self.seed, _mix64(self.stream, *tags))

    def normal(self, shape=None, dtype=np.float64):
        draw = self._gen.standard_normal(size=shape)
        return draw if shape is None else draw.astype(dtype, copy=False)

    def uniform(self, shape=None):
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, shape=None):
        """Uniform integers in [low, high); high <= low yields low (empty range)."""
        if high <= low:
            return low if shape is None else np.full(shape, low)
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def gaussian(rng: RngStream) -> float:
    """One standard-normal draw from the stream."""
    return float(rng.normal())


def uniform_init(rng: RngStream, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Fan-in-scaled uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return ((rng.uniform(shape) * 2.0 - 1.0) * bound).astype(dtype)
