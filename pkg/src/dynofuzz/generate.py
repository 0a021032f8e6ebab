"""Constructive generation of valid seed graphs, concrete inputs, and SSA programs.

Nodes are inserted forward: sample an operator, try to satisfy its rules from
existing values or fresh placeholders, verify with the inference rules, and
retry within a budget. A coarse magnitude bound is tracked per value so that
chains of products/reductions cannot overflow, which keeps rejection sampling
of inputs near a 100% hit rate.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import ir, ops
from .tensors import (DType, PreconditionViolated, Shape, TensorValue, check_valid,
                      element_count)


class GenerationBudgetExhausted(RuntimeError):
    pass


class InputSearchFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class SeedSpec:
    rng_seed: int
    num_ops: int = 20
    max_rank: int = 4
    max_extent: int = 8
    dtype_weights: tuple[tuple[str, float], ...] = (
        ("f32", 0.55),
        ("f64", 0.15),
        ("i64", 0.2),
        ("bool", 0.1),
    )
    input_value_range: tuple[float, float] = (-4.0, 4.0)

    def to_json(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "num_ops": self.num_ops,
            "max_rank": self.max_rank,
            "max_extent": self.max_extent,
            "dtype_weights": [list(w) for w in self.dtype_weights],
            "input_value_range": list(self.input_value_range),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SeedSpec":
        return cls(
            rng_seed=int(doc["rng_seed"]),
            num_ops=int(doc["num_ops"]),
            max_rank=int(doc["max_rank"]),
            max_extent=int(doc["max_extent"]),
            dtype_weights=tuple((str(t), float(w)) for t, w in doc["dtype_weights"]),
            input_value_range=tuple(doc["input_value_range"]),
        )


@dataclass(frozen=True)
class GraphNode:
    id: int
    op: str
    attrs: dict
    input_ids: tuple[int, ...]
    out_shape: Shape
    out_dtype: DType


@dataclass(frozen=True)
class Placeholder:
    id: int
    name: str
    shape: Shape
    dtype: DType


Graph = tuple[list[GraphNode], list[Placeholder]]

# Absolute-value cap enforced on every node's tracked bound; keeps f32 far
# from overflow and i64 exact.
MAG_LIMIT = 1e9
ELEM_LIMIT = 4096
# Denominator placeholders are sampled away from zero with this margin,
# comfortably above the safe_div precondition threshold.
DENOM_MIN_SAMPLE = 0.05
INT_INPUT_BOUND = 4
NODE_RETRY_BUDGET = 60
INPUT_ATTEMPTS = 50

DEFAULT_OP_WEIGHTS: dict[str, float] = {
    "add": 3.0,
    "sub": 2.0,
    "mul": 2.0,
    "safe_div": 1.0,
    "neg": 1.5,
    "relu": 3.0,
    "sigmoid": 1.5,
    "tanh": 1.5,
    "abs": 1.5,
    "exp_clamped": 1.0,
    "matmul": 1.5,
    "max_reduce": 1.0,
    "min_reduce": 1.0,
    "sum_reduce": 1.0,
    "reshape": 1.5,
    "transpose": 1.5,
    "concat": 1.5,
    "fill": 0.75,
    "cast": 1.5,
    "maximum": 1.5,
    "minimum": 1.5,
    "where": 1.5,
}

_FLOATS = (DType.F32, DType.F64)
_NUMERIC = (DType.F32, DType.F64, DType.I64)
_FLOAT_ONLY = {"safe_div", "sigmoid", "tanh", "exp_clamped"}


class _Val(NamedTuple):
    id: int
    shape: Shape
    dtype: DType
    bound: float


class _Builder:
    def __init__(self, spec: SeedSpec):
        self.spec = spec
        self.rng = random.Random(spec.rng_seed)
        self.nodes: list[GraphNode] = []
        self.placeholders: list[Placeholder] = []
        self.pool: list[_Val] = []
        self.next_id = 0

    # -- sampling helpers --

    def _rand_shape(self, rank: int | None = None) -> Shape:
        if rank is None:
            rank = self.rng.randint(1, self.spec.max_rank)
        while True:
            shape = tuple(
                self.rng.randint(1, self.spec.max_extent) for _ in range(rank)
            )
            if element_count(shape) <= ELEM_LIMIT:
                return shape

    def _rand_dtype(self, allowed: tuple[DType, ...]) -> DType:
        table = dict(self.spec.dtype_weights)
        names = [d for d in allowed if table.get(d.value, 0) > 0]
        if not names:
            return allowed[0]
        weights = [table[d.value] for d in names]
        return self.rng.choices(names, weights=weights, k=1)[0]

    def _input_bound(self, dtype: DType) -> float:
        if dtype is DType.BOOL:
            return 1.0
        if dtype is DType.I64:
            return float(INT_INPUT_BOUND)
        lo, hi = self.spec.input_value_range
        return max(abs(lo), abs(hi))

    def _new_placeholder(self, shape: Shape, dtype: DType) -> _Val:
        pid = self.next_id
        self.next_id += 1
        ph = Placeholder(pid, f"in{len(self.placeholders)}", shape, dtype)
        self.placeholders.append(ph)
        val = _Val(pid, shape, dtype, self._input_bound(dtype))
        self.pool.append(val)
        return val

    def _pick(self, candidates: list[_Val]) -> _Val | None:
        if not candidates:
            return None
        return self.rng.choice(candidates)

    def _match_or_placeholder(self, shape: Shape, dtype: DType, exclude_id: int) -> _Val:
        matches = [
            v for v in self.pool if v.shape == shape and v.dtype is dtype and v.id != exclude_id
        ]
        if matches and self.rng.random() < 0.75:
            return self.rng.choice(matches)
        return self._new_placeholder(shape, dtype)

    # -- per-operator input/attr planning --

    def _plan(self, op: ops.OpSpec) -> tuple[list[_Val], dict] | None:
        rng = self.rng
        name = op.name
        if name == "fill":
            dtype = self._rand_dtype((DType.F32, DType.F64, DType.I64, DType.BOOL))
            shape = self._rand_shape()
            if dtype is DType.BOOL:
                value: bool | int | float = rng.random() < 0.5
            elif dtype is DType.I64:
                value = rng.randint(-INT_INPUT_BOUND, INT_INPUT_BOUND)
            else:
                lo, hi = self.spec.input_value_range
                value = float(np.float64(rng.uniform(lo, hi)))
            return [], {"shape": shape, "dtype": dtype, "value": value}

        if op.elementwise and name != "where":
            allowed = _FLOATS if name in _FLOAT_ONLY else _NUMERIC
            first = self._pick([v for v in self.pool if v.dtype in allowed])
            if first is None:
                first = self._new_placeholder(self._rand_shape(), self._rand_dtype(allowed))
            if op.arity == 1:
                return [first], {}
            if name == "safe_div":
                # Conditioned denominator: always a dedicated placeholder so
                # input sampling can keep it away from zero.
                den = self._new_placeholder(first.shape, first.dtype)
                return [first, den], {}
            second = self._match_or_placeholder(first.shape, first.dtype, first.id)
            return [first, second], {}

        if name == "where":
            first = self._pick([v for v in self.pool if v.dtype is not DType.BOOL])
            if first is None:
                first = self._new_placeholder(
                    self._rand_shape(), self._rand_dtype(_NUMERIC)
                )
            conds = [v for v in self.pool if v.dtype is DType.BOOL and v.shape == first.shape]
            cond = (
                rng.choice(conds)
                if conds and rng.random() < 0.75
                else self._new_placeholder(first.shape, DType.BOOL)
            )
            second = self._match_or_placeholder(first.shape, first.dtype, first.id)
            return [cond, first, second], {}

        if name == "matmul":
            first = self._pick(
                [v for v in self.pool if len(v.shape) == 2 and v.dtype in _FLOATS]
            )
            if first is None:
                first = self._new_placeholder(self._rand_shape(2), self._rand_dtype(_FLOATS))
            k = first.shape[1]
            seconds = [
                v
                for v in self.pool
                if len(v.shape) == 2 and v.shape[0] == k and v.dtype is first.dtype
            ]
            if seconds and rng.random() < 0.6:
                second = rng.choice(seconds)
            else:
                n = rng.randint(1, self.spec.max_extent)
                second = self._new_placeholder((k, n), first.dtype)
            return [first, second], {}

        if name in ("max_reduce", "min_reduce", "sum_reduce"):
            src = self._pick(
                [v for v in self.pool if len(v.shape) >= 1 and v.dtype in _NUMERIC]
            )
            if src is None:
                src = self._new_placeholder(self._rand_shape(), self._rand_dtype(_NUMERIC))
            return [src], {"axis": rng.randrange(len(src.shape))}

        if name == "reshape":
            src = self._pick(self.pool)
            if src is None:
                src = self._new_placeholder(self._rand_shape(), self._rand_dtype(_NUMERIC))
            target = self._sample_reshape_target(element_count(src.shape))
            return [src], {"target": target}

        if name == "transpose":
            src = self._pick([v for v in self.pool if len(v.shape) >= 2])
            if src is None:
                src = self._new_placeholder(
                    self._rand_shape(rng.randint(2, self.spec.max_rank)),
                    self._rand_dtype(_NUMERIC),
                )
            d0, d1 = rng.sample(range(len(src.shape)), 2)
            return [src], {"dim0": d0, "dim1": d1}

        if name == "concat":
            first = self._pick([v for v in self.pool if len(v.shape) >= 1])
            if first is None:
                first = self._new_placeholder(self._rand_shape(), self._rand_dtype(_NUMERIC))
            axis = rng.randrange(len(first.shape))
            matches = [
                v
                for v in self.pool
                if v.dtype is first.dtype
                and len(v.shape) == len(first.shape)
                and all(x == y for j, (x, y) in enumerate(zip(v.shape, first.shape)) if j != axis)
            ]
            if matches and rng.random() < 0.5:
                second = rng.choice(matches)
            else:
                other = list(first.shape)
                other[axis] = rng.randint(1, self.spec.max_extent)
                second = self._new_placeholder(tuple(other), first.dtype)
            return [first, second], {"axis": axis}

        if name == "cast":
            pairs = [
                (v, to)
                for v in self.pool
                for (frm, to) in ops.CAST_PAIRS
                if v.dtype is frm
            ]
            if not pairs:
                src = self._new_placeholder(self._rand_shape(), DType.I64)
                pairs = [(src, DType.F32), (src, DType.F64)]
            src, to = rng.choice(pairs)
            return [src], {"to": to}

        return None

    def _sample_reshape_target(self, count: int) -> Shape:
        rng = self.rng
        cap = self.spec.max_extent
        for _ in range(12):
            if count == 1:
                rank = rng.randint(0, self.spec.max_rank)
                return tuple(1 for _ in range(rank))
            rank = rng.randint(1, self.spec.max_rank)
            dims: list[int] = []
            rest = count
            ok = True
            for i in range(rank - 1):
                left = rank - 1 - i
                choices = [
                    d for d in range(1, cap + 1) if rest % d == 0 and rest // d <= cap**left
                ]
                if not choices:
                    ok = False
                    break
                d = rng.choice(choices)
                dims.append(d)
                rest //= d
            if ok and 1 <= rest <= cap:
                dims.append(rest)
                return tuple(dims)
        # a valid factorization may be elusive for awkward counts
        return None

    # -- magnitude bounds --

    def _bound_of(self, op: ops.OpSpec, inputs: list[_Val], attrs: dict, out_shape: Shape) -> float:
        name = op.name
        bs = [v.bound for v in inputs]
        if name in ("add", "sub"):
            return bs[0] + bs[1]
        if name == "mul":
            return bs[0] * bs[1]
        if name == "safe_div":
            return bs[0] / DENOM_MIN_SAMPLE
        if name in ("neg", "abs", "relu"):
            return bs[0]
        if name in ("sigmoid", "tanh"):
            return 1.0
        if name == "exp_clamped":
            return float(np.exp(min(30.0, bs[0])))
        if name == "matmul":
            return inputs[0].shape[1] * bs[0] * bs[1]
        if name == "sum_reduce":
            return inputs[0].shape[attrs["axis"]] * bs[0]
        if name in ("max_reduce", "min_reduce"):
            return bs[0]
        if name in ("reshape", "transpose", "cast"):
            return bs[0]
        if name == "concat":
            return max(bs)
        if name == "fill":
            v = attrs["value"]
            return abs(float(v)) if not isinstance(v, bool) else 1.0
        if name in ("maximum", "minimum"):
            return max(bs)
        if name == "where":
            return max(bs[1], bs[2])
        return max(bs, default=1.0)

    # -- driver --

    def build(self) -> Graph:
        names = list(DEFAULT_OP_WEIGHTS)
        weights = [DEFAULT_OP_WEIGHTS[n] for n in names]
        for _ in range(self.spec.num_ops):
            placed = False
            for _attempt in range(NODE_RETRY_BUDGET):
                op = ops.get_op(self.rng.choices(names, weights=weights, k=1)[0])
                plan = self._plan(op)
                if plan is None:
                    continue
                inputs, attrs = plan
                if op.name == "reshape" and attrs.get("target") is None:
                    continue
                sig = ops.infer(
                    op, [v.shape for v in inputs], [v.dtype for v in inputs], attrs
                )
                if isinstance(sig, ops.Rejection):
                    continue
                if element_count(sig.shape) > ELEM_LIMIT:
                    continue
                bound = self._bound_of(op, inputs, attrs, sig.shape)
                if bound > MAG_LIMIT:
                    continue
                node = GraphNode(
                    id=self.next_id,
                    op=op.name,
                    attrs=attrs,
                    input_ids=tuple(v.id for v in inputs),
                    out_shape=sig.shape,
                    out_dtype=sig.dtype,
                )
                self.next_id += 1
                self.nodes.append(node)
                self.pool.append(_Val(node.id, sig.shape, sig.dtype, bound))
                placed = True
                break
            if not placed:
                raise GenerationBudgetExhausted(
                    f"no valid node found within {NODE_RETRY_BUDGET} tries"
                )
        return self.nodes, self.placeholders


def generate_graph(spec: SeedSpec) -> Graph:
    """Build a DAG of exactly ``spec.num_ops`` nodes; deterministic per seed."""
    return _Builder(spec).build()


def _denominator_ids(nodes: list[GraphNode]) -> set[int]:
    return {n.input_ids[1] for n in nodes if n.op == "safe_div"}


def evaluate_graph(
    graph: Graph, inputs: dict[str, TensorValue], require_valid: bool = True
) -> dict[int, TensorValue]:
    """Node-by-node reference evaluation; raises on NaN/Inf when requested."""
    nodes, placeholders = graph
    values: dict[int, TensorValue] = {}
    for ph in placeholders:
        values[ph.id] = inputs[ph.name]
    for node in nodes:
        out = ops.eval_op(node.op, [values[i] for i in node.input_ids], node.attrs)
        if out.shape != node.out_shape or out.dtype is not node.out_dtype:
            raise RuntimeError(
                f"node {node.id} ({node.op}): evaluated {out.dtype.value}{out.shape}, "
                f"graph recorded {node.out_dtype.value}{node.out_shape}"
            )
        if require_valid and not check_valid(out):
            raise InputSearchFailed(f"node {node.id} ({node.op}) produced NaN/Inf")
        values[node.id] = out
    return values


def generate_inputs(graph: Graph, spec: SeedSpec) -> dict[str, TensorValue]:
    """Sample concrete inputs until the whole graph evaluates validly."""
    nodes, placeholders = graph
    denoms = _denominator_ids(nodes)
    lo, hi = spec.input_value_range
    span = max(abs(lo), abs(hi))
    for attempt in range(INPUT_ATTEMPTS):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([spec.rng_seed & 0xFFFFFFFFFFFFFFFF, attempt, 0xD1CE]))
        )
        inputs: dict[str, TensorValue] = {}
        for ph in placeholders:
            if ph.dtype.is_float:
                if ph.id in denoms:
                    mag = rng.uniform(DENOM_MIN_SAMPLE, span, size=ph.shape)
                    sign = rng.integers(0, 2, size=ph.shape) * 2 - 1
                    arr = mag * sign
                else:
                    arr = rng.uniform(lo, hi, size=ph.shape)
                arr = arr.astype(ph.dtype.np_dtype)
            elif ph.dtype is DType.I64:
                arr = rng.integers(
                    -INT_INPUT_BOUND, INT_INPUT_BOUND + 1, size=ph.shape, dtype=np.int64
                )
            else:
                arr = rng.integers(0, 2, size=ph.shape).astype(np.bool_)
            inputs[ph.name] = TensorValue(ph.dtype, arr)
        try:
            evaluate_graph(graph, inputs, require_valid=True)
        except (InputSearchFailed, PreconditionViolated) as e:
            if attempt == INPUT_ATTEMPTS - 1:
                raise InputSearchFailed(
                    f"no valid inputs after {INPUT_ATTEMPTS} attempts: {e}"
                ) from e
            continue
        return inputs
    raise InputSearchFailed(f"no valid inputs after {INPUT_ATTEMPTS} attempts")


def lower_to_ssa(graph: Graph) -> ir.Program:
    """Topological emission into SSA statements; sinks become program outputs."""
    nodes, placeholders = graph
    names: dict[int, str] = {ph.id: ph.name for ph in placeholders}
    for j, node in enumerate(nodes):
        names[node.id] = f"v{j}"
    params = tuple(ir.Param(ph.name, ph.shape, ph.dtype) for ph in placeholders)
    body = tuple(
        ir.Assign(
            target=names[node.id],
            op=node.op,
            args=tuple(names[i] for i in node.input_ids),
            attrs=dict(node.attrs),
        )
        for node in nodes
    )
    consumed = {i for node in nodes for i in node.input_ids}
    returns = tuple(names[node.id] for node in nodes if node.id not in consumed)
    return ir.Program(params=params, body=body, returns=returns)


def build_seed(spec: SeedSpec) -> tuple[ir.Program, dict[str, TensorValue]]:
    """Convenience: graph -> inputs -> SSA program."""
    graph = generate_graph(spec)
    inputs = generate_inputs(graph, spec)
    return lower_to_ssa(graph), inputs
