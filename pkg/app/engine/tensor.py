"""
Dense tensors backed by numpy arrays.

A Tensor reports its bytes to the active memory ledger when it is built
and again when its owner calls `free()`. Arrays are read-only unless the
tensor was built as `mutable` (parameters and feedback matrices), and only
the in-place helpers at the bottom of this module write into them.
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from engine.exceptions import (
    ConfigurationError,
    ContractViolation,
    DimensionError,
)
from engine.ledger import active_ledger

PRECISIONS = {
    "f32": np.float32,
    "f64": np.float64,
}


def dtype_for(precision):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ConfigurationError(
            f"unknown precision {precision!r}, use one of {sorted(PRECISIONS)}"
        ) from None


class Tensor:
    __slots__ = ("data", "tag", "nbytes", "_ledger", "_live")

    def __init__(self, data, tag, *, mutable=False):
        array = np.asarray(data)
        if array.ndim == 0:
            array = array.reshape(1)
        if any(dim <= 0 for dim in array.shape):
            raise DimensionError(f"{tag}: empty dimension in shape {array.shape}")
        if not mutable:
            array = array.view()
            array.flags.writeable = False
        elif not array.flags.writeable:
            array = array.copy()
        self.data = array
        self.tag = tag
        self.nbytes = int(array.nbytes)
        self._ledger = active_ledger()
        self._live = True
        if self._ledger is not None:
            self._ledger.alloc(self.nbytes, tag)

    @classmethod
    def zeros(cls, shape, tag, dtype=np.float32, mutable=False):
        return cls(np.zeros(shape, dtype=dtype), tag, mutable=mutable)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_live(self):
        return self._live

    def free(self):
        """release the tensor; only the first call reaches the ledger"""
        if not self._live:
            return
        self._live = False
        if self._ledger is not None:
            self._ledger.free(self.nbytes, self.tag)

    def __repr__(self):
        state = "" if self._live else " freed"
        return f"<Tensor {self.tag} {self.shape} {self.dtype}{state}>"


@dataclass(frozen=True)
class Rng:
    """
    Seeded PCG64 streams.

    The generator for `(seed, *stream)` is built from a numpy SeedSequence
    over those integers, so stream `(2, 3)` yields the same values no
    matter how many other streams were drawn before it.
    """
    seed: int
    stream: Tuple[int, ...] = ()
    algorithm = "PCG64"

    def __post_init__(self):
        if self.seed < 0 or any(i < 0 for i in self.stream):
            raise ConfigurationError("seeds and stream ids must be non-negative")

    def substream(self, *ids):
        return Rng(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self):
        sequence = np.random.SeedSequence([self.seed, *self.stream])
        return np.random.Generator(np.random.PCG64(sequence))


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def validate(self):
        if not self.lo < self.hi:
            raise ConfigurationError(f"uniform needs lo < hi, got {self}")

    def draw(self, generator, shape):
        return generator.uniform(self.lo, self.hi, size=shape)


@dataclass(frozen=True)
class Normal:
    mean: float
    std: float

    def validate(self):
        if not self.std > 0:
            raise ConfigurationError(f"normal needs std > 0, got {self}")

    def draw(self, generator, shape):
        return generator.normal(self.mean, self.std, size=shape)


def fan_uniform(fan):
    """uniform(-1/sqrt(fan), 1/sqrt(fan))"""
    bound = 1.0 / math.sqrt(fan)
    return Uniform(-bound, bound)


def random_fill(rng, shape, distribution, tag="random", dtype=np.float32,
                mutable=False):
    distribution.validate()
    shape = tuple(int(dim) for dim in shape)
    if not shape or any(dim <= 0 for dim in shape):
        raise DimensionError(f"random_fill: invalid shape {shape}")
    values = distribution.draw(rng.generator(), shape)
    return Tensor(values.astype(dtype), tag, mutable=mutable)


def _require_matrix(name, *tensors):
    for tensor in tensors:
        if tensor.ndim != 2:
            raise DimensionError(
                f"{name}: expected matrices, got shapes "
                f"{' and '.join(str(t.shape) for t in tensors)}"
            )


def matmul(a, b, tag="matmul"):
    """a[m x k] . b[k x n]"""
    _require_matrix("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return Tensor(a.data @ b.data, tag)


def matmul_transpose_left(a, b, tag="matmul", scale=None):
    """a[k x m]^T . b[k x n], the transpose is never copied"""
    _require_matrix("matmul_transpose_left", a, b)
    if a.shape[0] != b.shape[0]:
        raise DimensionError(
            f"matmul_transpose_left: cannot multiply {a.shape}^T by {b.shape}"
        )
    product = a.data.T @ b.data
    if scale is not None:
        product *= product.dtype.type(scale)
    return Tensor(product, tag)


def matmul_transpose_right(a, b, tag="matmul", bias=None):
    """
    a[m x k] . b[n x k]^T, plus an optional bias row added to every row.
    A vector `a` is treated as a single row.
    """
    if a.ndim not in (1, 2):
        raise DimensionError(
            f"matmul_transpose_right: expected a vector or matrix, got {a.shape}"
        )
    _require_matrix("matmul_transpose_right", b)
    if a.shape[-1] != b.shape[1]:
        raise DimensionError(
            f"matmul_transpose_right: cannot multiply {a.shape} by {b.shape}^T"
        )
    # a C-ordered right operand keeps results bitwise equal to matmul with
    # an explicitly transposed matrix
    product = a.data @ np.ascontiguousarray(b.data.T)
    if bias is not None:
        if bias.shape != (b.shape[0],):
            raise DimensionError(
                f"bias {bias.shape} does not match {b.shape[0]} outputs"
            )
        product += bias.data
    return Tensor(product, tag)


def outer(u, v, tag="outer"):
    if u.ndim != 1 or v.ndim != 1:
        raise DimensionError(f"outer: expected vectors, got {u.shape} and {v.shape}")
    return Tensor(np.outer(u.data, v.data), tag)


def hadamard(a, b, tag="hadamard"):
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return Tensor(a.data * b.data, tag)


def all_finite(tensor):
    return bool(np.all(np.isfinite(tensor.data)))


def scaled_subtract_(target, update, scale):
    """target <- target - scale * update, in place"""
    if target.shape != update.shape:
        raise DimensionError(
            f"cannot update {target.tag} {target.shape} with {update.shape}"
        )
    if not target.data.flags.writeable:
        raise ContractViolation(f"{target.tag} is not a mutable tensor")
    target.data -= target.dtype.type(scale) * update.data


def assign_(target, values):
    """overwrite a mutable tensor's values without a new allocation"""
    values = np.asarray(values)
    if target.shape != values.shape:
        raise DimensionError(
            f"cannot assign {values.shape} into {target.tag} {target.shape}"
        )
    target.data[...] = values
