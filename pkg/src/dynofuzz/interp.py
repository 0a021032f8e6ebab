"""Step-wise reference execution of programs, with exact halting for profiling.

The interpreter mirrors Python's scoping rules: closures resolve free names in
their defining scope at call time (so hoisted function definitions work), a
name bound anywhere in a scope shadows enclosing scopes throughout it, and
element stores mutate the binding in the owning scope. Values are immutable
TensorValues, so environment snapshots are cheap and cannot be invalidated by
later in-place effects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ir, ops
from .tensors import (
    Scalar,
    TensorValue,
    check_valid,
    index_get,
    index_set,
    k_stack,
    put_slice,
    take_slice,
    to_scalar,
)


class ReferenceRuntimeError(RuntimeError):
    """Reference evaluation failed: an earlier mutation produced a bad program."""


class InvalidIntermediate(ReferenceRuntimeError):
    """A statement produced NaN/Inf while validity checking was requested."""


@dataclass
class Closure:
    fdef: ir.FuncDef
    scope: "Env"


Value = object  # TensorValue | Scalar | Closure


class Env:
    __slots__ = ("vars", "parent", "local_names")

    def __init__(self, parent: "Env | None" = None, local_names: set[str] | None = None):
        self.vars: dict[str, Value] = {}
        self.parent = parent
        self.local_names = local_names or set()

    def lookup(self, name: str) -> Value:
        env: Env | None = self
        while env is not None:
            if name in env.vars:
                return env.vars[name]
            if name in env.local_names:
                raise ReferenceRuntimeError(f"{name} referenced before assignment")
            env = env.parent
        raise ReferenceRuntimeError(f"{name} is not defined")

    def bind(self, name: str, value: Value) -> None:
        self.vars[name] = value

    def rebind_owner(self, name: str, value: Value) -> None:
        """Replace the value in whichever scope owns the name (element store)."""
        env: Env | None = self
        while env is not None:
            if name in env.vars:
                env.vars[name] = value
                return
            if name in env.local_names:
                raise ReferenceRuntimeError(f"{name} mutated before assignment")
            env = env.parent
        raise ReferenceRuntimeError(f"{name} is not defined")


def _as_scalar(value: Value) -> Scalar:
    if isinstance(value, TensorValue):
        if value.rank != 0:
            raise ReferenceRuntimeError("expected a scalar value")
        return to_scalar(value.dtype, value.data[()])
    if isinstance(value, (bool, int, float)):
        return value
    raise ReferenceRuntimeError(f"expected a scalar value, got {type(value).__name__}")


def _tensor(value: Value, name: str) -> TensorValue:
    if not isinstance(value, TensorValue):
        raise ReferenceRuntimeError(f"{name} is not a tensor value")
    return value


def eval_scalar_expr(expr: ir.ScalarExpr, env: Env) -> Scalar:
    if isinstance(expr, ir.IntConst):
        return expr.c
    t = _tensor(env.lookup(expr.var), expr.var)
    if isinstance(expr, ir.Element):
        return index_get(t, expr.pos)
    if isinstance(expr, ir.ShapeDim):
        if not 0 <= expr.k < t.rank:
            raise ReferenceRuntimeError(f"shape dim {expr.k} out of range for {t.shape}")
        return t.shape[expr.k]
    if isinstance(expr, ir.Rank):
        return t.rank
    if isinstance(expr, ir.MaxOf):
        return to_scalar(t.dtype, np.max(t.data))
    if isinstance(expr, ir.MinOf):
        return to_scalar(t.dtype, np.min(t.data))
    raise ReferenceRuntimeError(f"unknown scalar expression {expr!r}")


_CMP = {
    ir.CmpOp.GT: lambda a, b: a > b,
    ir.CmpOp.LT: lambda a, b: a < b,
    ir.CmpOp.GE: lambda a, b: a >= b,
    ir.CmpOp.LE: lambda a, b: a <= b,
}


def eval_condition(cond: ir.ConditionExpr, env: Env) -> bool:
    lhs = eval_scalar_expr(cond.lhs, env)
    rhs = eval_scalar_expr(cond.rhs, env)
    return bool(_CMP[cond.op](lhs, rhs))


class _Interp:
    def __init__(self, require_valid: bool = False):
        self.require_valid = require_valid

    def _check(self, t: TensorValue, what: str) -> TensorValue:
        if self.require_valid and not check_valid(t):
            raise InvalidIntermediate(f"{what} contains NaN/Inf")
        return t

    def exec_stmt(self, stmt: ir.Stmt, env: Env) -> None:
        if isinstance(stmt, ir.Assign):
            inputs = [_tensor(env.lookup(a), a) for a in stmt.args]
            try:
                out = ops.eval_op(stmt.op, inputs, stmt.attrs)
            except Exception as e:
                raise ReferenceRuntimeError(f"{stmt.op} failed: {e}") from e
            env.bind(stmt.target, self._check(out, stmt.target))

        elif isinstance(stmt, ir.SliceAssign):
            idx = env.lookup(stmt.index)
            if not isinstance(idx, int):
                raise ReferenceRuntimeError(f"{stmt.index} is not a loop index")
            target = _tensor(env.lookup(stmt.target), stmt.target)
            slices = [
                TensorValue(t.dtype, take_slice(t.data, stmt.axis, idx))
                for t in (_tensor(env.lookup(a), a) for a in stmt.args)
            ]
            out = ops.eval_op(stmt.op, slices)
            env.rebind_owner(
                stmt.target,
                TensorValue(target.dtype, put_slice(target.data, stmt.axis, idx, out.data)),
            )

        elif isinstance(stmt, ir.ForLoop):
            for i in range(stmt.extent):
                env.bind(stmt.axis_var, i)
                for s in stmt.body:
                    self.exec_stmt(s, env)

        elif isinstance(stmt, ir.ComprehensionAssign):
            args = [_tensor(env.lookup(a), a) for a in stmt.args]
            parts = [
                ops.eval_op(
                    stmt.op,
                    [TensorValue(t.dtype, take_slice(t.data, stmt.axis, i)) for t in args],
                )
                for i in range(stmt.extent)
            ]
            stacked = k_stack([p.data for p in parts], stmt.axis)
            result = TensorValue(parts[0].dtype, stacked)
            env.bind(stmt.target, self._check(result, stmt.target))

        elif isinstance(stmt, ir.BackupStore):
            t = _tensor(env.lookup(stmt.source_var), stmt.source_var)
            env.bind(stmt.tmp_name, index_get(t, stmt.pos))

        elif isinstance(stmt, ir.PointStore):
            t = _tensor(env.lookup(stmt.target_var), stmt.target_var)
            env.rebind_owner(stmt.target_var, index_set(t, stmt.pos, stmt.scalar))

        elif isinstance(stmt, ir.RestoreStore):
            t = _tensor(env.lookup(stmt.target_var), stmt.target_var)
            v = _as_scalar(env.lookup(stmt.tmp_name))
            env.rebind_owner(stmt.target_var, index_set(t, stmt.pos, v))

        elif isinstance(stmt, ir.IfBlock):
            if eval_condition(stmt.cond, env):
                for s in stmt.body:
                    self.exec_stmt(s, env)

        elif isinstance(stmt, ir.FuncDef):
            env.bind(stmt.name, Closure(stmt, env))

        elif isinstance(stmt, ir.Call):
            fn = env.lookup(stmt.func_name)
            if not isinstance(fn, Closure):
                raise ReferenceRuntimeError(f"{stmt.func_name} is not callable")
            local = Env(parent=fn.scope, local_names=ir.body_bindings(fn.fdef.captured_body))
            for s in fn.fdef.captured_body:
                self.exec_stmt(s, local)
            results = [local.lookup(n) for n in fn.fdef.returned_names]
            if len(results) != len(stmt.result_names):
                raise ReferenceRuntimeError("call result arity mismatch")
            for name, value in zip(stmt.result_names, results):
                env.bind(name, value)

        else:  # pragma: no cover - closed union
            raise ReferenceRuntimeError(f"unknown statement {stmt!r}")


def _top_env(prog: ir.Program, inputs: dict[str, TensorValue]) -> Env:
    env = Env(local_names=ir.body_bindings(prog.body))
    for p in prog.params:
        if p.name not in inputs:
            raise ReferenceRuntimeError(f"missing input {p.name}")
        t = inputs[p.name]
        if t.shape != p.shape or t.dtype is not p.dtype:
            raise ReferenceRuntimeError(
                f"input {p.name}: got {t.dtype.value}{t.shape}, "
                f"declared {p.dtype.value}{p.shape}"
            )
        env.bind(p.name, t)
    return env


def run_program(
    prog: ir.Program,
    inputs: dict[str, TensorValue],
    require_valid: bool = False,
) -> list[TensorValue]:
    """Full reference run; returns the output tensors in declaration order."""
    env = _top_env(prog, inputs)
    interp = _Interp(require_valid=require_valid)
    for stmt in prog.body:
        interp.exec_stmt(stmt, env)
    out = []
    for name in prog.returns:
        t = _tensor(env.lookup(name), name)
        if require_valid and not check_valid(t):
            raise InvalidIntermediate(f"output {name} contains NaN/Inf")
        out.append(t)
    return out


@dataclass
class Profile:
    """Environment observed just before a designated top-level statement."""

    env: dict[str, Value]
    halted_at: tuple[int, ...]

    def tensors(self) -> dict[str, TensorValue]:
        return {k: v for k, v in self.env.items() if isinstance(v, TensorValue)}


def profile_until(prog: ir.Program, inputs: dict[str, TensorValue], stop: int) -> Profile:
    """Execute top-level statements [0, stop) and snapshot the live environment.

    The snapshot reflects every effect (including element stores) of the
    statements strictly before ``stop`` and nothing after.
    """
    if not 0 <= stop <= len(prog.body):
        raise ValueError(f"stop {stop} out of range for body of {len(prog.body)}")
    env = _top_env(prog, inputs)
    interp = _Interp()
    for stmt in prog.body[:stop]:
        interp.exec_stmt(stmt, env)
    return Profile(env=dict(env.vars), halted_at=(stop,))


def trace_top_env(
    prog: ir.Program, inputs: dict[str, TensorValue]
) -> list[dict[str, Value]]:
    """Snapshots of the top scope after each top-level statement.

    Entry 0 is the state before any statement; entry i+1 follows statement i.
    Used by the reducer to seed re-routed inputs with profiled values.
    """
    env = _top_env(prog, inputs)
    interp = _Interp()
    snaps = [dict(env.vars)]
    for stmt in prog.body:
        interp.exec_stmt(stmt, env)
        snaps.append(dict(env.vars))
    return snaps
