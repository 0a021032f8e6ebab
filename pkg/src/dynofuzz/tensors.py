"""Concrete tensor values, dtypes, and the numeric kernels of the reference evaluator.

Everything here is value-semantic: a TensorValue owns an immutable, contiguous
numpy array, and every kernel returns a fresh array. Kernels always receive
contiguous inputs, which keeps elementwise results bit-identical whether an
operator is applied to a whole tensor or slice-by-slice along an axis (the
property the unrolling mutation relies on).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

MAX_RANK = 4

Shape = tuple[int, ...]
Scalar = bool | int | float


class ShapeMismatch(ValueError):
    pass


class DTypeMismatch(TypeError):
    pass


class PreconditionViolated(ValueError):
    pass


class IndexOutOfBounds(IndexError):
    pass


class DType(enum.Enum):
    F32 = "f32"
    F64 = "f64"
    I64 = "i64"
    BOOL = "bool"

    @property
    def np_dtype(self) -> np.dtype:
        return _NP_DTYPES[self]

    @property
    def is_float(self) -> bool:
        return self in (DType.F32, DType.F64)

    @property
    def is_numeric(self) -> bool:
        return self is not DType.BOOL

    @classmethod
    def from_tag(cls, tag: str) -> "DType":
        try:
            return cls(tag)
        except ValueError:
            raise DTypeMismatch(f"unknown dtype tag {tag!r}") from None


_NP_DTYPES = {
    DType.F32: np.dtype(np.float32),
    DType.F64: np.dtype(np.float64),
    DType.I64: np.dtype(np.int64),
    DType.BOOL: np.dtype(np.bool_),
}


def check_shape(dims: Iterable[int]) -> Shape:
    """Validate rank/extent limits and return the shape as a tuple."""
    shape = tuple(int(d) for d in dims)
    if len(shape) > MAX_RANK:
        raise ShapeMismatch(f"rank {len(shape)} exceeds maximum {MAX_RANK}")
    if any(d < 1 for d in shape):
        raise ShapeMismatch(f"non-positive extent in shape {shape}")
    return shape


def element_count(shape: Shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


@dataclass(frozen=True)
class TensorValue:
    """An immutable n-dimensional array with an explicit dtype.

    The wrapped array is always C-contiguous and write-locked; mutation-style
    operations (``index_set``) return a new value.
    """

    dtype: DType
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = self.data
        if not isinstance(arr, np.ndarray):
            # numpy scalars (e.g. from sampling with size=()) quack like 0-d
            # arrays; normalize so .data is always a real ndarray
            arr = np.asarray(arr)
            object.__setattr__(self, "data", arr)
        if arr.dtype != self.dtype.np_dtype:
            raise DTypeMismatch(
                f"array dtype {arr.dtype} does not match {self.dtype}"
            )
        check_shape(arr.shape)
        if arr.flags.writeable or not arr.flags.c_contiguous:
            # ndarray.copy (unlike ascontiguousarray) preserves rank-0 shapes
            arr = arr.copy(order="C")
            arr.flags.writeable = False
            object.__setattr__(self, "data", arr)

    @classmethod
    def of(cls, dtype: DType, values) -> "TensorValue":
        arr = np.asarray(values, dtype=dtype.np_dtype)
        return cls(dtype, arr)

    @property
    def shape(self) -> Shape:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    def tolist(self):
        return self.data.tolist()

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorValue):
            return NotImplemented
        return (
            self.dtype is other.dtype
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __hash__(self) -> int:
        return hash((self.dtype, self.shape, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"TensorValue({self.dtype.value}, shape={self.shape})"


def _check_pos(t: TensorValue, pos: tuple[int, ...]) -> tuple[int, ...]:
    pos = tuple(int(p) for p in pos)
    if t.rank == 0:
        raise IndexOutOfBounds("rank-0 tensor has no indexable positions")
    if len(pos) != t.rank:
        raise IndexOutOfBounds(f"index {pos} has wrong arity for shape {t.shape}")
    for p, d in zip(pos, t.shape):
        if not 0 <= p < d:
            raise IndexOutOfBounds(f"index {pos} out of bounds for shape {t.shape}")
    return pos


def to_scalar(dtype: DType, value: np.generic) -> Scalar:
    if dtype is DType.BOOL:
        return bool(value)
    if dtype is DType.I64:
        return int(value)
    return float(value)


def index_get(t: TensorValue, pos: tuple[int, ...]) -> Scalar:
    """Read one element; floats are widened exactly to Python floats."""
    pos = _check_pos(t, pos)
    return to_scalar(t.dtype, t.data[pos])


def scalar_matches_dtype(dtype: DType, v: Scalar) -> bool:
    if isinstance(v, bool):
        return dtype is DType.BOOL
    if isinstance(v, int):
        return dtype is DType.I64
    if isinstance(v, float):
        return dtype.is_float
    return False


def index_set(t: TensorValue, pos: tuple[int, ...], v: Scalar) -> TensorValue:
    """Return a copy of ``t`` with the element at ``pos`` replaced by ``v``."""
    pos = _check_pos(t, pos)
    if not scalar_matches_dtype(t.dtype, v):
        raise DTypeMismatch(f"scalar {v!r} does not match tensor dtype {t.dtype}")
    arr = t.data.copy()
    arr[pos] = v
    return TensorValue(t.dtype, arr)


def check_valid(t: TensorValue) -> bool:
    """True iff the tensor contains no NaN and no infinity."""
    if not t.dtype.is_float:
        return True
    return bool(np.isfinite(t.data).all())


def tensors_close(a: TensorValue, b: TensorValue, rtol: float, atol: float) -> bool:
    """Elementwise closeness with a shape/dtype gate.

    Floats: |a_i - b_i| <= atol + rtol*|b_i| with positionally matching NaNs
    (infinities match only when equal). Integers and booleans compare exactly.
    """
    if a.dtype is not b.dtype or a.shape != b.shape:
        return False
    if not a.dtype.is_float:
        return bool(np.array_equal(a.data, b.data))
    x, y = a.data, b.data
    nan_x, nan_y = np.isnan(x), np.isnan(y)
    if not np.array_equal(nan_x, nan_y):
        return False
    ok = nan_x | (x == y)
    # the tolerance band only makes sense where both sides are finite
    finite = np.isfinite(x) & np.isfinite(y)
    with np.errstate(invalid="ignore"):
        within = np.abs(x - y) <= atol + rtol * np.abs(y)
    ok |= finite & within
    return bool(ok.all())


# --- reference kernels ------------------------------------------------------
#
# Each kernel is a pure function of contiguous numpy arrays, computing at the
# arrays' own precision. The compiled-target emission templates in the opset
# mirror these semantics exactly (including the [-30, 30] pre-clamp of the
# saturating transcendentals).

SAFE_DIV_MIN_ABS = 1e-3
TRANSCENDENTAL_CLAMP = 30.0


def _clamp_arg(x: np.ndarray) -> np.ndarray:
    lo = x.dtype.type(-TRANSCENDENTAL_CLAMP)
    hi = x.dtype.type(TRANSCENDENTAL_CLAMP)
    return np.clip(x, lo, hi)


def k_add(a, b):
    return a + b


def k_sub(a, b):
    return a - b


def k_mul(a, b):
    return a * b


def k_safe_div(a, b):
    return a / b


def k_neg(a):
    return -a


def k_relu(a):
    return np.maximum(a, a.dtype.type(0))


def k_sigmoid(a):
    x = _clamp_arg(a)
    one = x.dtype.type(1)
    return one / (one + np.exp(-x))


def k_tanh(a):
    return np.tanh(_clamp_arg(a))


def k_abs(a):
    return np.abs(a)


def k_exp_clamped(a):
    return np.exp(_clamp_arg(a))


def k_matmul(a, b):
    return np.matmul(a, b)


def k_max_reduce(a, axis):
    return np.max(a, axis=axis)


def k_min_reduce(a, axis):
    return np.min(a, axis=axis)


def k_sum_reduce(a, axis):
    return np.sum(a, axis=axis)


def k_reshape(a, target):
    return a.reshape(target)


def k_transpose(a, dim0, dim1):
    return np.swapaxes(a, dim0, dim1)


def k_concat(a, b, axis):
    return np.concatenate([a, b], axis=axis)


def k_fill(shape, np_dtype, value):
    return np.full(shape, value, dtype=np_dtype)


def k_cast(a, np_dtype):
    return a.astype(np_dtype)


def k_maximum(a, b):
    return np.maximum(a, b)


def k_minimum(a, b):
    return np.minimum(a, b)


def k_where(cond, a, b):
    return np.where(cond, a, b)


def k_stack(parts, axis):
    return np.stack(parts, axis=axis)


def take_slice(a: np.ndarray, axis: int, index: int) -> np.ndarray:
    """The ``index``-th slice of ``a`` along ``axis``, C-contiguous.

    Contiguity matters for bit-stability: kernels must see slice operands
    through the same code path as whole tensors. Rank-0 results keep their
    shape (ascontiguousarray would promote them to rank 1).
    """
    sl = [slice(None)] * a.ndim
    sl[axis] = index
    return np.asarray(a[tuple(sl)], order="C")


def put_slice(a: np.ndarray, axis: int, index: int, value: np.ndarray) -> np.ndarray:
    out = a.copy()
    sl = [slice(None)] * a.ndim
    sl[axis] = index
    out[tuple(sl)] = value
    return out


# --- tensor archive ---------------------------------------------------------
#
# Wire format shared with the runner shim, bit-exact:
#   {"tensors": {"<name>": {"dtype": "f32|f64|i64|bool",
#                           "shape": [..], "data": [..]}}}
# Float elements are serialized as shortest round-trip decimal strings in
# row-major order; integers and booleans are plain JSON values.


def format_float(v: float | np.floating) -> str:
    return np.format_float_positional(v, unique=True, trim="0")


def _encode_data(t: TensorValue) -> list:
    flat = t.data.reshape(-1)
    if t.dtype.is_float:
        return [format_float(v) for v in flat]
    return flat.tolist()


def _decode_data(dtype: DType, shape: Shape, data: list) -> np.ndarray:
    if dtype.is_float:
        vals = np.asarray([float(s) for s in data], dtype=np.float64)
        arr = vals.astype(dtype.np_dtype)
    else:
        arr = np.asarray(data, dtype=dtype.np_dtype)
    if arr.size != element_count(shape):
        raise ShapeMismatch(
            f"archive entry has {arr.size} elements for shape {tuple(shape)}"
        )
    return arr.reshape(shape)


def dump_archive(tensors: Mapping[str, TensorValue]) -> str:
    doc = {
        "tensors": {
            name: {
                "dtype": t.dtype.value,
                "shape": list(t.shape),
                "data": _encode_data(t),
            }
            for name, t in sorted(tensors.items())
        }
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_archive(text: str) -> dict[str, TensorValue]:
    doc = json.loads(text)
    out: dict[str, TensorValue] = {}
    for name, entry in doc["tensors"].items():
        dtype = DType.from_tag(entry["dtype"])
        shape = check_shape(entry["shape"])
        out[name] = TensorValue(dtype, _decode_data(dtype, shape, entry["data"]))
    return out
