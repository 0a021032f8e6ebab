"""Operator registry: signatures, inference rules, preconditions, kernels, templates.

Every operator carries total shape/dtype rules (rejections are returned, never
raised), a validity precondition over concrete inputs, the reference kernel,
and the exact target-code template used by the emitter. The full template
table is reproduced in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .tensors import (
    DType,
    DTypeMismatch,
    PreconditionViolated,
    SAFE_DIV_MIN_ABS,
    Shape,
    ShapeMismatch,
    TensorValue,
    check_shape,
    element_count,
)
from . import tensors as T

import numpy as np


@dataclass(frozen=True)
class Rejection:
    """Structured refusal from an inference rule."""

    reason: str


class InferredSig(NamedTuple):
    shape: Shape
    dtype: DType


@dataclass(frozen=True)
class OpSpec:
    name: str
    arity: int
    attr_schema: dict[str, str] = field(default_factory=dict)
    shape_rule: Callable[[list[Shape], dict], Shape | Rejection] = None
    dtype_rule: Callable[[list[DType], dict], DType | Rejection] = None
    precondition: Callable[[list[TensorValue], dict], bool] | None = None
    elementwise: bool = False
    emission_template: str = ""
    kernel: Callable = None


def _same_shapes(shapes: list[Shape], attrs: dict) -> Shape | Rejection:
    first = shapes[0]
    for s in shapes[1:]:
        if s != first:
            return Rejection(f"shape mismatch {s} vs {first}")
    return first


def _same_numeric(dtypes: list[DType], attrs: dict) -> DType | Rejection:
    first = dtypes[0]
    if any(d is not first for d in dtypes):
        return Rejection("operands must share one dtype")
    if not first.is_numeric:
        return Rejection("boolean operands not supported")
    return first


def _same_float(dtypes: list[DType], attrs: dict) -> DType | Rejection:
    first = dtypes[0]
    if any(d is not first for d in dtypes):
        return Rejection("operands must share one dtype")
    if not first.is_float:
        return Rejection("float operands required")
    return first


def _matmul_shape(shapes: list[Shape], attrs: dict) -> Shape | Rejection:
    a, b = shapes
    if len(a) != 2 or len(b) != 2:
        return Rejection("matmul requires rank-2 operands")
    if a[1] != b[0]:
        return Rejection(f"inner dimensions differ: {a} x {b}")
    return (a[0], b[1])


def _reduce_shape(shapes: list[Shape], attrs: dict) -> Shape | Rejection:
    (s,) = shapes
    axis = attrs.get("axis")
    if len(s) < 1:
        return Rejection("reduction requires rank >= 1")
    if not isinstance(axis, int) or not 0 <= axis < len(s):
        return Rejection(f"axis {axis} out of range for shape {s}")
    return s[:axis] + s[axis + 1 :]


def _reshape_shape(shapes: list[Shape], attrs: dict) -> Shape | Rejection:
    (s,) = shapes
    target = attrs.get("target")
    try:
        target = check_shape(target)
    except (ShapeMismatch, TypeError):
        return Rejection(f"invalid reshape target {target!r}")
    if element_count(target) != element_count(s):
        return Rejection(f"element count mismatch: {s} -> {target}")
    return target


def _transpose_shape(shapes: list[Shape], attrs: dict) -> Shape | Rejection:
    (s,) = shapes
    d0, d1 = attrs.get("dim0"), attrs.get("dim1")
    if len(s) < 2:
        return Rejection("transpose requires rank >= 2")
    if not (isinstance(d0, int) and isinstance(d1, int)):
        return Rejection("transpose axes must be integers")
    if not (0 <= d0 < len(s) and 0 <= d1 < len(s)) or d0 == d1:
        return Rejection(f"invalid transpose axes ({d0}, {d1}) for shape {s}")
    out = list(s)
    out[d0], out[d1] = out[d1], out[d0]
    return tuple(out)


def _concat_shape(shapes: list[Shape], attrs: dict) -> Shape | Rejection:
    a, b = shapes
    axis = attrs.get("axis")
    if len(a) != len(b) or len(a) < 1:
        return Rejection(f"concat rank mismatch {a} vs {b}")
    if not isinstance(axis, int) or not 0 <= axis < len(a):
        return Rejection(f"axis {axis} out of range for shape {a}")
    for k, (x, y) in enumerate(zip(a, b)):
        if k != axis and x != y:
            return Rejection(f"non-concat extents differ at axis {k}: {a} vs {b}")
    out = list(a)
    out[axis] = a[axis] + b[axis]
    return tuple(out)


def _fill_shape(shapes: list[Shape], attrs: dict) -> Shape | Rejection:
    try:
        return check_shape(attrs.get("shape"))
    except (ShapeMismatch, TypeError):
        return Rejection(f"invalid fill shape {attrs.get('shape')!r}")


def _fill_dtype(dtypes: list[DType], attrs: dict) -> DType | Rejection:
    dt = attrs.get("dtype")
    if not isinstance(dt, DType):
        return Rejection("fill requires a dtype attribute")
    v = attrs.get("value")
    if not T.scalar_matches_dtype(dt, v):
        return Rejection(f"fill value {v!r} does not match dtype {dt}")
    return dt


# Ordered: generation samples from this table, so iteration must be stable.
CAST_PAIRS: tuple[tuple[DType, DType], ...] = (
    (DType.F32, DType.F64),
    (DType.F64, DType.F32),
    (DType.I64, DType.F32),
    (DType.I64, DType.F64),
    (DType.BOOL, DType.I64),
)


def _cast_dtype(dtypes: list[DType], attrs: dict) -> DType | Rejection:
    to = attrs.get("to")
    if not isinstance(to, DType):
        return Rejection("cast requires a 'to' dtype attribute")
    if (dtypes[0], to) not in CAST_PAIRS:
        return Rejection(f"cast {dtypes[0]} -> {to} not supported")
    return to


def _where_dtype(dtypes: list[DType], attrs: dict) -> DType | Rejection:
    cond, a, b = dtypes
    if cond is not DType.BOOL:
        return Rejection("where condition must be boolean")
    if a is not b:
        return Rejection("where branches must share one dtype")
    return a


def _concat_dtype(dtypes: list[DType], attrs: dict) -> DType | Rejection:
    if dtypes[0] is not dtypes[1]:
        return Rejection("concat operands must share one dtype")
    return dtypes[0]


def _identity_dtype(dtypes: list[DType], attrs: dict) -> DType | Rejection:
    return dtypes[0]


def _safe_div_pre(inputs: list[TensorValue], attrs: dict) -> bool:
    return bool((np.abs(inputs[1].data) >= SAFE_DIV_MIN_ABS).all())


def _ew(name: str, arity: int, dtype_rule, template: str, kernel) -> OpSpec:
    return OpSpec(
        name=name,
        arity=arity,
        shape_rule=_same_shapes,
        dtype_rule=dtype_rule,
        elementwise=True,
        emission_template=template,
        kernel=kernel,
    )


_CLAMP = "torch.clamp({0}, -30.0, 30.0)"

_REGISTRY: tuple[OpSpec, ...] = (
    _ew("add", 2, _same_numeric, "torch.add({0}, {1})", T.k_add),
    _ew("sub", 2, _same_numeric, "torch.sub({0}, {1})", T.k_sub),
    _ew("mul", 2, _same_numeric, "torch.mul({0}, {1})", T.k_mul),
    OpSpec(
        name="safe_div",
        arity=2,
        shape_rule=_same_shapes,
        dtype_rule=_same_float,
        precondition=_safe_div_pre,
        elementwise=True,
        emission_template="torch.div({0}, {1})",
        kernel=T.k_safe_div,
    ),
    _ew("neg", 1, _same_numeric, "torch.neg({0})", T.k_neg),
    _ew("relu", 1, _same_numeric, "torch.relu({0})", T.k_relu),
    _ew("sigmoid", 1, _same_float, f"torch.sigmoid({_CLAMP})", T.k_sigmoid),
    _ew("tanh", 1, _same_float, f"torch.tanh({_CLAMP})", T.k_tanh),
    _ew("abs", 1, _same_numeric, "torch.abs({0})", T.k_abs),
    _ew("exp_clamped", 1, _same_float, f"torch.exp({_CLAMP})", T.k_exp_clamped),
    OpSpec(
        name="matmul",
        arity=2,
        shape_rule=_matmul_shape,
        dtype_rule=_same_float,
        emission_template="torch.matmul({0}, {1})",
        kernel=T.k_matmul,
    ),
    OpSpec(
        name="max_reduce",
        arity=1,
        attr_schema={"axis": "int in [0, rank)"},
        shape_rule=_reduce_shape,
        dtype_rule=_same_numeric,
        emission_template="torch.amax({0}, dim={axis})",
        kernel=T.k_max_reduce,
    ),
    OpSpec(
        name="min_reduce",
        arity=1,
        attr_schema={"axis": "int in [0, rank)"},
        shape_rule=_reduce_shape,
        dtype_rule=_same_numeric,
        emission_template="torch.amin({0}, dim={axis})",
        kernel=T.k_min_reduce,
    ),
    OpSpec(
        name="sum_reduce",
        arity=1,
        attr_schema={"axis": "int in [0, rank)"},
        shape_rule=_reduce_shape,
        dtype_rule=_same_numeric,
        emission_template="torch.sum({0}, dim={axis})",
        kernel=T.k_sum_reduce,
    ),
    OpSpec(
        name="reshape",
        arity=1,
        attr_schema={"target": "shape with equal element count"},
        shape_rule=_reshape_shape,
        dtype_rule=_identity_dtype,
        emission_template="torch.reshape({0}, {target}).clone()",
        kernel=T.k_reshape,
    ),
    OpSpec(
        name="transpose",
        arity=1,
        attr_schema={"dim0": "axis", "dim1": "distinct axis"},
        shape_rule=_transpose_shape,
        dtype_rule=_identity_dtype,
        emission_template="torch.transpose({0}, {dim0}, {dim1}).clone()",
        kernel=T.k_transpose,
    ),
    OpSpec(
        name="concat",
        arity=2,
        attr_schema={"axis": "int in [0, rank)"},
        shape_rule=_concat_shape,
        dtype_rule=_concat_dtype,
        emission_template="torch.cat([{0}, {1}], dim={axis})",
        kernel=T.k_concat,
    ),
    OpSpec(
        name="fill",
        arity=0,
        attr_schema={"shape": "output shape", "dtype": "output dtype", "value": "scalar"},
        shape_rule=_fill_shape,
        dtype_rule=_fill_dtype,
        emission_template="torch.full({shape}, {value}, dtype={dtype})",
        kernel=None,  # dispatched specially: needs dtype/shape attrs, not inputs
    ),
    OpSpec(
        name="cast",
        arity=1,
        attr_schema={"to": "target dtype (f32<->f64, i64->f32/f64, bool->i64)"},
        shape_rule=lambda shapes, attrs: shapes[0],
        dtype_rule=_cast_dtype,
        emission_template="{0}.to({dtype})",
        kernel=None,
    ),
    _ew("maximum", 2, _same_numeric, "torch.maximum({0}, {1})", T.k_maximum),
    _ew("minimum", 2, _same_numeric, "torch.minimum({0}, {1})", T.k_minimum),
    OpSpec(
        name="where",
        arity=3,
        shape_rule=_same_shapes,
        dtype_rule=_where_dtype,
        elementwise=True,
        emission_template="torch.where({0}, {1}, {2})",
        kernel=T.k_where,
    ),
)

_BY_NAME = {op.name: op for op in _REGISTRY}


def registry() -> list[OpSpec]:
    return list(_REGISTRY)


def get_op(name: str) -> OpSpec:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown operator {name!r}") from None


def infer(
    op: OpSpec,
    input_shapes: list[Shape],
    input_dtypes: list[DType],
    attrs: dict | None = None,
) -> InferredSig | Rejection:
    """Predict the output signature, or explain why the inputs are rejected."""
    attrs = attrs or {}
    if len(input_shapes) != op.arity or len(input_dtypes) != op.arity:
        return Rejection(f"{op.name} expects {op.arity} inputs")
    shape = op.shape_rule(list(input_shapes), attrs)
    if isinstance(shape, Rejection):
        return shape
    dtype = op.dtype_rule(list(input_dtypes), attrs)
    if isinstance(dtype, Rejection):
        return dtype
    return InferredSig(shape, dtype)


def eval_op(op: OpSpec | str, inputs: list[TensorValue], attrs: dict | None = None) -> TensorValue:
    """Apply the reference kernel. Deterministic; raises on invalid callers."""
    if isinstance(op, str):
        op = get_op(op)
    attrs = attrs or {}
    if len(inputs) != op.arity:
        raise ShapeMismatch(f"{op.name} expects {op.arity} inputs, got {len(inputs)}")
    shape = op.shape_rule([t.shape for t in inputs], attrs)
    if isinstance(shape, Rejection):
        raise ShapeMismatch(f"{op.name}: {shape.reason}")
    dtype = op.dtype_rule([t.dtype for t in inputs], attrs)
    if isinstance(dtype, Rejection):
        raise DTypeMismatch(f"{op.name}: {dtype.reason}")
    sig = InferredSig(shape, dtype)
    if op.precondition is not None and not op.precondition(inputs, attrs):
        raise PreconditionViolated(f"{op.name}: precondition failed")

    arrays = [t.data for t in inputs]
    if op.name == "fill":
        out = T.k_fill(sig.shape, sig.dtype.np_dtype, attrs["value"])
    elif op.name == "cast":
        out = T.k_cast(arrays[0], sig.dtype.np_dtype)
    elif op.name in ("max_reduce", "min_reduce", "sum_reduce"):
        out = op.kernel(arrays[0], attrs["axis"])
    elif op.name == "reshape":
        out = op.kernel(arrays[0], attrs["target"])
    elif op.name == "transpose":
        out = op.kernel(arrays[0], attrs["dim0"], attrs["dim1"])
    elif op.name == "concat":
        out = op.kernel(arrays[0], arrays[1], attrs["axis"])
    else:
        out = op.kernel(*arrays)
    result = TensorValue(sig.dtype, np.asarray(out, dtype=sig.dtype.np_dtype))
    if result.shape != sig.shape:
        raise ShapeMismatch(
            f"{op.name}: kernel produced {result.shape}, rule predicted {sig.shape}"
        )
    return result


# --- emission helpers --------------------------------------------------------

_TORCH_DTYPE_NAMES = {
    DType.F32: "torch.float32",
    DType.F64: "torch.float64",
    DType.I64: "torch.int64",
    DType.BOOL: "torch.bool",
}


def torch_dtype_name(dtype: DType) -> str:
    return _TORCH_DTYPE_NAMES[dtype]


def render_attr(value) -> str:
    if isinstance(value, DType):
        return torch_dtype_name(value)
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        inner = ", ".join(str(int(v)) for v in value)
        return f"({inner},)" if len(value) == 1 else f"({inner})"
    return str(value)


def render_call(op: OpSpec | str, args: list[str], attrs: dict | None = None) -> str:
    """Instantiate an operator's emission template with argument names."""
    if isinstance(op, str):
        op = get_op(op)
    attrs = attrs or {}
    rendered = {k: render_attr(v) for k, v in attrs.items()}
    if op.name in ("fill", "cast"):
        rendered["dtype"] = render_attr(attrs.get("dtype", attrs.get("to")))
    return op.emission_template.format(*args, **rendered)
