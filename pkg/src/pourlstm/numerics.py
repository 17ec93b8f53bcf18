"""Dense float64 helpers shared by the model and the optimizer.

A "matrix" here is simply a 2-D ``numpy.ndarray`` of dtype float64. The
public functions check shapes on every call and never broadcast; the engine
itself works on stacked 3-D arrays internally and only relies on the
elementwise activations from this module.

Randomness goes through :class:`Rng`, a thin wrapper over numpy's PCG64
bit generator. PCG64 is a fixed, documented algorithm (128-bit LCG state,
XSL-RR output permutation), so a given seed yields the same stream on every
platform.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got array of shape {m.shape}")
    return m


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=np.float64)


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def _same_shape(a, b, op: str):
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "add")
    return a + b


def hadamard(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "hadamard")
    return a * b


def scale(a, k: float) -> np.ndarray:
    return as_matrix(a) * float(k)


def sigmoid(x) -> np.ndarray:
    """Logistic function, evaluated on the branch that cannot overflow.

    For x >= 0 uses 1/(1+exp(-x)); for x < 0 uses exp(x)/(1+exp(x)).
    Works on arrays of any rank.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


class Rng:
    """Seeded random stream (PCG64).

    Single owner: do not share one instance between threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


def glorot_uniform(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """Entries drawn i.i.d. from U(-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols)))."""
    if rows < 1 or cols < 1:
        raise ValueError(f"glorot_uniform needs positive dimensions, got {rows}x{cols}")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))
