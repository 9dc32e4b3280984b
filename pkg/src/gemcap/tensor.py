"""Dense float64 arrays, deterministic random streams and the primitive math.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
validate shapes the way the layers expect and raise gemcap errors instead of
numpy broadcasting silently.

Random numbers come from numpy's Philox counter-based bit generator. A stream
is identified by ``(seed, *index)``; child streams are derived through
``SeedSequence`` spawn keys, so the same tuple yields the same bytes on every
platform and distinct tuples yield independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .error_handler import InvalidAxis, InvalidShape, ShapeMismatch

Tensor = np.ndarray
DTYPE = np.float64

ADD, SUB, MUL, MAX = "add", "sub", "mul", "max"
SUM, MEAN, ARGMAX = "sum", "mean", "argmax"


class Rng:
    """Philox stream bound to ``(seed, *index)``."""

    ALGORITHM = "philox4x64-10"

    def __init__(self, seed: int, *index: int):
        self.seed = int(seed)
        self.index: Tuple[int, ...] = tuple(int(i) for i in index)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.index)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, *index: int) -> "Rng":
        return Rng(self.seed, *(self.index + tuple(index)))

    def normal(self, mean: float, std: float, shape: Sequence[int]) -> np.ndarray:
        return self._gen.normal(mean, std, size=tuple(shape)).astype(DTYPE)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def choice(self, options: Sequence):
        return options[int(self._gen.integers(0, len(options)))]

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def gumbel(self, shape) -> np.ndarray:
        return self._gen.gumbel(size=shape)

    def seed_int(self) -> int:
        """Draw a fresh 63-bit seed, used to hand a stream to a worker."""
        return int(self._gen.integers(0, 2**63 - 1))


def split(seed: int, *index: int) -> Rng:
    return Rng(seed, *index)


@dataclass(frozen=True)
class Zeros:
    pass


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Normal:
    mean: float
    std: float
    rng: Rng


Fill = Union[Zeros, Constant, Normal]


def check_shape(shape: Sequence[int]) -> Tuple[int, ...]:
    dims = tuple(shape)
    if not dims:
        raise InvalidShape(shape=list(dims), detail="shape must be non-empty")
    for dim in dims:
        if int(dim) != dim or dim < 1:
            raise InvalidShape(shape=list(dims), detail="every dimension must be >= 1")
    return tuple(int(d) for d in dims)


def create(shape: Sequence[int], fill: Fill = Zeros()) -> Tensor:
    """Build a tensor; Normal fill draws elements in row-major order."""
    dims = check_shape(shape)
    if isinstance(fill, Zeros):
        return np.zeros(dims, dtype=DTYPE)
    if isinstance(fill, Constant):
        return np.full(dims, float(fill.value), dtype=DTYPE)
    if isinstance(fill, Normal):
        return fill.rng.normal(fill.mean, fill.std, dims)
    raise TypeError(f"unsupported fill {fill!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(detail=f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(detail=f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def ew(op: str, a: Tensor, b: Union[Tensor, float]) -> Tensor:
    """Elementwise op; ``b`` is a same-shape tensor or a scalar."""
    if isinstance(b, np.ndarray) and b.ndim > 0:
        if b.shape != a.shape:
            raise ShapeMismatch(detail=f"elementwise {op} on {a.shape} and {b.shape}")
    if op == ADD:
        return a + b
    if op == SUB:
        return a - b
    if op == MUL:
        return a * b
    if op == MAX:
        return np.maximum(a, b)
    raise ValueError(f"unknown elementwise op '{op}'")


def reduce(op: str, a: Tensor, axis: int) -> Tensor:
    if axis < 0 or axis >= a.ndim:
        raise InvalidAxis(axis=axis, rank=a.ndim)
    if op == SUM:
        return a.sum(axis=axis)
    if op == MEAN:
        return a.mean(axis=axis)
    if op == ARGMAX:
        # numpy returns the first maximal index
        return np.argmax(a, axis=axis)
    raise ValueError(f"unknown reduction '{op}'")


def all_finite(a: Tensor) -> bool:
    return bool(np.all(np.isfinite(a)))
