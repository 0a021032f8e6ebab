"""Test-program AST: an SSA core plus every construct the mutations introduce.

A Program is immutable; mutations build new Programs. The emitter is a pure
function of the AST (identical Program -> identical bytes). Name resolution
follows Python closure semantics: a function body may read names defined in
an enclosing scope *after* the definition, as long as they are bound before
the call executes (hoisting). The validator and the static analyzer both walk
programs in execution order, which is statically known because synthesized
conditional blocks are true by construction and loop extents are fixed.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Union

from .tensors import DType, Shape, scalar_matches_dtype
from . import ops as O


class MalformedProgram(ValueError):
    pass


class Param(NamedTuple):
    name: str
    shape: Shape
    dtype: DType


# --- statements ---------------------------------------------------------------


@dataclass(frozen=True)
class Assign:
    target: str
    op: str
    args: tuple[str, ...]
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SliceAssign:
    """One unrolled step: target[.., index, ..] = op(args[.., index, ..]).

    ``rank`` duplicates the operand rank so emission stays local even when a
    later mutation moves the statement into a function body.
    """

    target: str
    axis: int
    index: str
    op: str
    args: tuple[str, ...]
    rank: int


@dataclass(frozen=True)
class ForLoop:
    axis_var: str
    extent: int
    body: tuple["Stmt", ...]


@dataclass(frozen=True)
class ComprehensionAssign:
    """List-comprehension form of unrolling, re-stacked along ``axis``."""

    target: str
    axis: int
    index: str
    op: str
    args: tuple[str, ...]
    rank: int
    extent: int


@dataclass(frozen=True)
class BackupStore:
    tmp_name: str
    source_var: str
    pos: tuple[int, ...]


@dataclass(frozen=True)
class PointStore:
    target_var: str
    pos: tuple[int, ...]
    scalar: bool | int | float


@dataclass(frozen=True)
class RestoreStore:
    target_var: str
    pos: tuple[int, ...]
    tmp_name: str


@dataclass(frozen=True)
class IfBlock:
    cond: "ConditionExpr"
    body: tuple["Stmt", ...]


@dataclass(frozen=True)
class FuncDef:
    name: str
    free_vars: tuple[str, ...]
    captured_body: tuple["Stmt", ...]
    returned_names: tuple[str, ...]


@dataclass(frozen=True)
class Call:
    result_names: tuple[str, ...]
    func_name: str
    args: tuple[str, ...] = ()


Stmt = Union[
    Assign,
    SliceAssign,
    ForLoop,
    ComprehensionAssign,
    BackupStore,
    PointStore,
    RestoreStore,
    IfBlock,
    FuncDef,
    Call,
]


# --- condition expressions ------------------------------------------------------


@dataclass(frozen=True)
class Element:
    var: str
    pos: tuple[int, ...]


@dataclass(frozen=True)
class ShapeDim:
    var: str
    k: int


@dataclass(frozen=True)
class Rank:
    var: str


@dataclass(frozen=True)
class MaxOf:
    var: str


@dataclass(frozen=True)
class MinOf:
    var: str


@dataclass(frozen=True)
class IntConst:
    c: int


ScalarExpr = Union[Element, ShapeDim, Rank, MaxOf, MinOf, IntConst]


class CmpOp(enum.Enum):
    GT = ">"
    LT = "<"
    GE = ">="
    LE = "<="


@dataclass(frozen=True)
class ConditionExpr:
    lhs: ScalarExpr
    op: CmpOp
    rhs: ScalarExpr


def scalar_expr_var(e: ScalarExpr) -> str | None:
    return None if isinstance(e, IntConst) else e.var


def condition_vars(cond: ConditionExpr) -> set[str]:
    return {v for v in (scalar_expr_var(cond.lhs), scalar_expr_var(cond.rhs)) if v}


# --- program --------------------------------------------------------------------


@dataclass(frozen=True)
class Program:
    params: tuple[Param, ...]
    body: tuple[Stmt, ...]
    returns: tuple[str, ...]

    def replace_body(self, body: list[Stmt]) -> "Program":
        return Program(self.params, tuple(body), self.returns)


class EmitStyle(enum.Enum):
    TORCH = "torch"


# --- name utilities ---------------------------------------------------------------


def _bound_in_stmt(stmt: Stmt) -> Iterator[str]:
    """Names the statement binds in its own scope (element writes excluded)."""
    if isinstance(stmt, (Assign, ComprehensionAssign)):
        yield stmt.target
    elif isinstance(stmt, BackupStore):
        yield stmt.tmp_name
    elif isinstance(stmt, FuncDef):
        yield stmt.name
    elif isinstance(stmt, Call):
        yield from stmt.result_names
    elif isinstance(stmt, ForLoop):
        yield stmt.axis_var
        for s in stmt.body:
            yield from _bound_in_stmt(s)
    elif isinstance(stmt, IfBlock):
        for s in stmt.body:
            yield from _bound_in_stmt(s)


def all_names(prog: Program) -> set[str]:
    names = {p.name for p in prog.params}

    def visit(stmts: tuple[Stmt, ...]) -> None:
        for s in stmts:
            names.update(_bound_in_stmt(s))
            if isinstance(s, FuncDef):
                visit(s.captured_body)
            elif isinstance(s, (ForLoop, IfBlock)):
                visit(s.body)

    visit(prog.body)
    return names


def fresh_name(prefix: str, taken: set[str]) -> str:
    pat = re.compile(re.escape(prefix) + r"(\d+)$")
    top = -1
    for n in taken:
        m = pat.match(n)
        if m:
            top = max(top, int(m.group(1)))
    return f"{prefix}{top + 1}"


def body_defined_or_mutated(body: tuple[Stmt, ...]) -> tuple[str, ...]:
    """Names a function body defines or element-mutates, in first-touch order.

    This is exactly the set a FuncDef must return so the effects are
    reflected in the enclosing scope.
    """
    seen: dict[str, None] = {}

    def touch(name: str) -> None:
        seen.setdefault(name)

    def visit(stmts: tuple[Stmt, ...]) -> None:
        for s in stmts:
            if isinstance(s, (Assign, ComprehensionAssign)):
                touch(s.target)
            elif isinstance(s, SliceAssign):
                touch(s.target)
            elif isinstance(s, BackupStore):
                touch(s.tmp_name)
            elif isinstance(s, (PointStore, RestoreStore)):
                touch(s.target_var)
            elif isinstance(s, FuncDef):
                touch(s.name)
            elif isinstance(s, Call):
                for n in s.result_names:
                    touch(n)
            elif isinstance(s, ForLoop):
                touch(s.axis_var)
                visit(s.body)
            elif isinstance(s, IfBlock):
                visit(s.body)

    visit(body)
    return tuple(seen)


def body_bindings(body: tuple[Stmt, ...]) -> set[str]:
    """True name bindings of a scope (element writes are lookups, not bindings)."""
    out: set[str] = set()
    for s in body:
        out.update(_bound_in_stmt(s))
    return out


def free_reads(body: tuple[Stmt, ...]) -> tuple[str, ...]:
    """Names a function body reads (or element-writes) from enclosing scopes.

    Follows Python locality: a name *bound* anywhere in the body is local to
    it and never free, regardless of read/bind order; a name that is only
    element-written resolves to the enclosing scope and is free.
    """
    local = body_bindings(body)
    out: dict[str, None] = {}

    def read(name: str) -> None:
        if name not in local:
            out.setdefault(name)

    def visit(stmts: tuple[Stmt, ...]) -> None:
        for s in stmts:
            if isinstance(s, Assign):
                for a in s.args:
                    read(a)
            elif isinstance(s, SliceAssign):
                read(s.target)
                read(s.index)
                for a in s.args:
                    read(a)
            elif isinstance(s, ComprehensionAssign):
                for a in s.args:
                    read(a)
            elif isinstance(s, BackupStore):
                read(s.source_var)
            elif isinstance(s, PointStore):
                read(s.target_var)
            elif isinstance(s, RestoreStore):
                read(s.target_var)
                read(s.tmp_name)
            elif isinstance(s, IfBlock):
                for v in condition_vars(s.cond):
                    read(v)
                visit(s.body)
            elif isinstance(s, ForLoop):
                visit(s.body)
            elif isinstance(s, FuncDef):
                for n in free_reads(s.captured_body):
                    if n not in local:
                        out.setdefault(n)
            elif isinstance(s, Call):
                read(s.func_name)
                for a in s.args:
                    read(a)

    visit(body)
    return tuple(n for n in out if n not in local)


def contains_funcdef(stmts: tuple[Stmt, ...]) -> bool:
    for s in stmts:
        if isinstance(s, FuncDef):
            return True
        if isinstance(s, (IfBlock, ForLoop)) and contains_funcdef(s.body):
            return True
    return False


# --- emission ---------------------------------------------------------------------


def _render_pos(pos: tuple[int, ...]) -> str:
    return ", ".join(str(p) for p in pos)


def _render_scalar_literal(v: bool | int | float) -> str:
    if isinstance(v, bool):
        return "True" if v else "False"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _slice_expr(name: str, rank: int, axis: int, index: str) -> str:
    parts = [":"] * rank
    parts[axis] = index
    return f"{name}[{', '.join(parts)}]"


def render_scalar_expr(e: ScalarExpr) -> str:
    if isinstance(e, Element):
        return f"{e.var}[{_render_pos(e.pos)}]"
    if isinstance(e, ShapeDim):
        return f"{e.var}.shape[{e.k}]"
    if isinstance(e, Rank):
        return f"len({e.var}.shape)"
    if isinstance(e, MaxOf):
        return f"{e.var}.max()"
    if isinstance(e, MinOf):
        return f"{e.var}.min()"
    return str(e.c)


def render_condition(cond: ConditionExpr) -> str:
    return f"{render_scalar_expr(cond.lhs)} {cond.op.value} {render_scalar_expr(cond.rhs)}"


def emit(prog: Program, style: EmitStyle = EmitStyle.TORCH) -> str:
    """Deterministic target source for a well-formed program.

    Raises MalformedProgram naming the first violated rule otherwise.
    """
    violations = validate(prog)
    if violations:
        raise MalformedProgram(str(violations[0]))
    lines: list[str] = []
    params = ", ".join(p.name for p in prog.params)
    lines.append(f"def f({params}):")

    def emit_stmts(stmts: tuple[Stmt, ...], depth: int) -> None:
        pad = "    " * depth
        for s in stmts:
            if isinstance(s, Assign):
                call = O.render_call(s.op, list(s.args), s.attrs)
                lines.append(f"{pad}{s.target} = {call}")
            elif isinstance(s, SliceAssign):
                lhs = _slice_expr(s.target, s.rank, s.axis, s.index)
                sliced = [_slice_expr(a, s.rank, s.axis, s.index) for a in s.args]
                lines.append(f"{pad}{lhs} = {O.render_call(s.op, sliced)}")
            elif isinstance(s, ForLoop):
                lines.append(f"{pad}for {s.axis_var} in range({s.extent}):")
                emit_stmts(s.body, depth + 1)
            elif isinstance(s, ComprehensionAssign):
                sliced = [_slice_expr(a, s.rank, s.axis, s.index) for a in s.args]
                call = O.render_call(s.op, sliced)
                lines.append(
                    f"{pad}{s.target} = torch.stack("
                    f"[{call} for {s.index} in range({s.extent})], dim={s.axis})"
                )
            elif isinstance(s, BackupStore):
                lines.append(
                    f"{pad}{s.tmp_name} = {s.source_var}[{_render_pos(s.pos)}].clone()"
                )
            elif isinstance(s, PointStore):
                lit = _render_scalar_literal(s.scalar)
                lines.append(f"{pad}{s.target_var}[{_render_pos(s.pos)}] = {lit}")
            elif isinstance(s, RestoreStore):
                lines.append(f"{pad}{s.target_var}[{_render_pos(s.pos)}] = {s.tmp_name}")
            elif isinstance(s, IfBlock):
                lines.append(f"{pad}if {render_condition(s.cond)}:")
                emit_stmts(s.body, depth + 1)
            elif isinstance(s, FuncDef):
                lines.append(f"{pad}def {s.name}():")
                emit_stmts(s.captured_body, depth + 1)
                ret = ", ".join(s.returned_names)
                if len(s.returned_names) == 1:
                    ret += ","
                lines.append(f"{pad}    return ({ret})")
            elif isinstance(s, Call):
                lhs = ", ".join(s.result_names)
                if len(s.result_names) == 1:
                    lhs = f"({lhs},)"
                call_args = ", ".join(s.args)
                lines.append(f"{pad}{lhs} = {s.func_name}({call_args})")
            else:  # pragma: no cover - closed union
                raise MalformedProgram(f"unknown statement {s!r}")

    emit_stmts(prog.body, 1)
    ret = ", ".join(prog.returns)
    if len(prog.returns) == 1:
        ret += ","
    lines.append(f"    return ({ret})")
    return "\n".join(lines) + "\n"


MODULE_PREAMBLE = "import torch\n\n\n"


def emit_module(prog: Program, style: EmitStyle = EmitStyle.TORCH) -> str:
    """Full importable module text for the runner contract."""
    return MODULE_PREAMBLE + emit(prog, style)


# --- validation and static analysis ------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    path: tuple[int, ...]
    message: str

    def __str__(self) -> str:
        return f"{self.code} at {list(self.path)}: {self.message}"


class VarInfo(NamedTuple):
    kind: str  # tensor | scalar | func | index
    shape: Shape | None
    dtype: DType | None
    payload: object | None  # FuncDef/defining scope for funcs


class UnboundLocal:
    """Sentinel: the name is local to a scope but not yet bound (Python rule)."""


class _Scope:
    __slots__ = ("vars", "parent", "local_names")

    def __init__(self, parent: "_Scope | None" = None, local_names: set[str] | None = None):
        self.vars: dict[str, VarInfo] = {}
        self.parent = parent
        # Names bound anywhere in this scope shadow enclosing scopes even
        # before their binding statement executes.
        self.local_names: set[str] = local_names or set()

    def resolve(self, name: str) -> "VarInfo | type[UnboundLocal] | None":
        scope: _Scope | None = self
        while scope is not None:
            if name in scope.vars:
                return scope.vars[name]
            if name in scope.local_names:
                return UnboundLocal
            scope = scope.parent
        return None

    def bind(self, name: str, info: VarInfo) -> None:
        self.vars[name] = info

    def owner_of(self, name: str) -> "_Scope | None":
        scope: _Scope | None = self
        while scope is not None:
            if name in scope.vars or name in scope.local_names:
                return scope
            scope = scope.parent
        return None


class TopStmtTouch(NamedTuple):
    """Top-scope names a top-level statement reads / writes when executed."""

    reads: frozenset[str]
    writes: frozenset[str]


@dataclass
class ProgramInfo:
    """Execution-order facts about a well-formed program."""

    tensor_defs: dict[str, tuple[Shape, DType, int]]  # name -> sig + def index
    touches: list[TopStmtTouch]
    sigs: dict[str, VarInfo]

    def rank_of(self, name: str) -> int:
        return len(self.tensor_defs[name][0])

    def shape_of(self, name: str) -> Shape:
        return self.tensor_defs[name][0]


_MAX_CALL_DEPTH = 64


class _Walker:
    """Shared execution-order walk for validate() and analyze()."""

    def __init__(self, prog: Program):
        self.prog = prog
        self.violations: list[Violation] = []
        self.top = _Scope()
        self.tensor_defs: dict[str, tuple[Shape, DType, int]] = {}
        self.touches: list[TopStmtTouch] = []
        self._cur_reads: set[str] = set()
        self._cur_writes: set[str] = set()
        self._top_index = -1

    def fail(self, code: str, path: tuple[int, ...], message: str) -> None:
        self.violations.append(Violation(code, path, message))

    # -- effect recording (top scope only) --

    def _note_read(self, scope: _Scope, name: str) -> None:
        if scope.owner_of(name) is self.top:
            self._cur_reads.add(name)

    def _note_write(self, scope: _Scope, name: str) -> None:
        if scope is self.top or scope.owner_of(name) is self.top:
            self._cur_writes.add(name)

    def _read(self, scope: _Scope, name: str, path: tuple[int, ...], want: str | None = None) -> VarInfo | None:
        info = scope.resolve(name)
        if info is None:
            self.fail("UndefinedName", path, f"{name} is not defined here")
            return None
        if info is UnboundLocal:
            self.fail("UnboundLocalRead", path, f"{name} is local here but not yet bound")
            return None
        self._note_read(scope, name)
        if want is not None and info.kind != want:
            self.fail("WrongKind", path, f"{name} is a {info.kind}, expected {want}")
            return None
        return info

    def _bind(self, scope: _Scope, name: str, info: VarInfo) -> None:
        scope.bind(name, info)
        if scope is self.top:
            self._cur_writes.add(name)
            if info.kind == "tensor" and name not in self.tensor_defs:
                self.tensor_defs[name] = (info.shape, info.dtype, self._top_index)

    def _mutate(self, scope: _Scope, name: str, path: tuple[int, ...]) -> VarInfo | None:
        info = scope.resolve(name)
        if info is None:
            self.fail("UndefinedName", path, f"{name} is not defined here")
            return None
        if info is UnboundLocal:
            self.fail("UnboundLocalRead", path, f"{name} is local here but not yet bound")
            return None
        if scope.owner_of(name) is self.top:
            self._cur_writes.add(name)
        if info.kind != "tensor":
            self.fail("WrongKind", path, f"{name} is a {info.kind}, expected tensor")
            return None
        return info

    # -- statement walk --

    def run(self) -> None:
        prog = self.prog
        self.top.local_names = body_bindings(prog.body)
        seen_params: set[str] = set()
        for p in prog.params:
            if p.name in seen_params:
                self.fail("DuplicateParam", (), f"parameter {p.name} repeats")
            seen_params.add(p.name)
            self.top.bind(p.name, VarInfo("tensor", p.shape, p.dtype, None))
            self.tensor_defs[p.name] = (p.shape, p.dtype, -1)
        if not prog.returns:
            self.fail("NoReturns", (), "programs must return at least one value")

        for i, stmt in enumerate(prog.body):
            self._top_index = i
            self._cur_reads, self._cur_writes = set(), set()
            self.visit(stmt, self.top, (i,), 0)
            self.touches.append(
                TopStmtTouch(frozenset(self._cur_reads), frozenset(self._cur_writes))
            )

        for name in prog.returns:
            info = self.top.resolve(name)
            if info is UnboundLocal:
                info = None
            if info is None:
                self.fail("UndefinedName", (len(prog.body),), f"return of undefined {name}")
            elif info.kind != "tensor":
                self.fail("WrongKind", (len(prog.body),), f"return {name} is a {info.kind}")

    def _check_pos(self, info: VarInfo, pos: tuple[int, ...], path: tuple[int, ...]) -> bool:
        if info.shape is None:
            return False
        if len(info.shape) == 0:
            self.fail("IndexOutOfBounds", path, "rank-0 tensor has no positions")
            return False
        if len(pos) != len(info.shape) or any(
            not 0 <= p < d for p, d in zip(pos, info.shape)
        ):
            self.fail("IndexOutOfBounds", path, f"{pos} invalid for shape {info.shape}")
            return False
        return True

    def _scalar_value_kind(self, e: ScalarExpr, scope: _Scope, path: tuple[int, ...]) -> None:
        if isinstance(e, IntConst):
            return
        info = self._read(scope, e.var, path, want="tensor")
        if info is None:
            return
        if isinstance(e, Element):
            self._check_pos(info, e.pos, path)
        elif isinstance(e, ShapeDim):
            if not 0 <= e.k < len(info.shape):
                self.fail("IndexOutOfBounds", path, f"shape dim {e.k} of {info.shape}")
        elif isinstance(e, (MaxOf, MinOf)):
            if not info.dtype.is_numeric:
                self.fail("WrongKind", path, f"{e.var}: max/min need a numeric dtype")

    def visit(self, stmt: Stmt, scope: _Scope, path: tuple[int, ...], depth: int) -> None:
        if isinstance(stmt, Assign):
            try:
                op = O.get_op(stmt.op)
            except KeyError:
                self.fail("UnknownOp", path, stmt.op)
                return
            infos = [self._read(scope, a, path, want="tensor") for a in stmt.args]
            if any(i is None for i in infos):
                return
            sig = O.infer(op, [i.shape for i in infos], [i.dtype for i in infos], stmt.attrs)
            if isinstance(sig, O.Rejection):
                self.fail("InferError", path, f"{stmt.op}: {sig.reason}")
                return
            self._bind(scope, stmt.target, VarInfo("tensor", sig.shape, sig.dtype, None))

        elif isinstance(stmt, SliceAssign):
            target = self._mutate(scope, stmt.target, path)
            idx = self._read(scope, stmt.index, path, want="index")
            infos = [self._read(scope, a, path, want="tensor") for a in stmt.args]
            if target is None or idx is None or any(i is None for i in infos):
                return
            op = O.get_op(stmt.op)
            if not op.elementwise:
                self.fail("NotElementwise", path, stmt.op)
            if not 0 <= stmt.axis < len(target.shape):
                self.fail("IndexOutOfBounds", path, f"axis {stmt.axis} of {target.shape}")
                return
            if stmt.rank != len(target.shape):
                self.fail("RankMismatch", path, f"declared rank {stmt.rank} vs {target.shape}")
            for i in infos:
                if i.shape != target.shape:
                    self.fail("InferError", path, "slice-step shape mismatch")

        elif isinstance(stmt, ForLoop):
            if stmt.extent < 1:
                self.fail("EmptyLoop", path, f"extent {stmt.extent}")
            self._bind(scope, stmt.axis_var, VarInfo("index", None, None, None))
            for j, s in enumerate(stmt.body):
                self.visit(s, scope, path + (j,), depth)
            for j, s in enumerate(stmt.body):
                if isinstance(s, SliceAssign) and s.index == stmt.axis_var:
                    t = scope.resolve(s.target)
                    if t is not None and t.shape is not None and 0 <= s.axis < len(t.shape):
                        if t.shape[s.axis] != stmt.extent:
                            self.fail(
                                "IncompleteUnroll",
                                path + (j,),
                                f"loop extent {stmt.extent} != axis size {t.shape[s.axis]}",
                            )

        elif isinstance(stmt, ComprehensionAssign):
            infos = [self._read(scope, a, path, want="tensor") for a in stmt.args]
            if any(i is None for i in infos):
                return
            op = O.get_op(stmt.op)
            if not op.elementwise:
                self.fail("NotElementwise", path, stmt.op)
            shape = infos[0].shape
            if not 0 <= stmt.axis < len(shape):
                self.fail("IndexOutOfBounds", path, f"axis {stmt.axis} of {shape}")
                return
            if stmt.rank != len(shape) or stmt.extent != shape[stmt.axis]:
                self.fail(
                    "RankMismatch",
                    path,
                    f"declared rank/extent ({stmt.rank}, {stmt.extent}) vs shape {shape}",
                )
            sig = O.infer(op, [i.shape for i in infos], [i.dtype for i in infos], {})
            if isinstance(sig, O.Rejection):
                self.fail("InferError", path, f"{stmt.op}: {sig.reason}")
                return
            self._bind(scope, stmt.target, VarInfo("tensor", sig.shape, sig.dtype, None))

        elif isinstance(stmt, BackupStore):
            info = self._read(scope, stmt.source_var, path, want="tensor")
            if info is None:
                return
            self._check_pos(info, stmt.pos, path)
            self._bind(scope, stmt.tmp_name, VarInfo("scalar", None, info.dtype, None))

        elif isinstance(stmt, PointStore):
            info = self._mutate(scope, stmt.target_var, path)
            if info is None:
                return
            if self._check_pos(info, stmt.pos, path):
                if not scalar_matches_dtype(info.dtype, stmt.scalar):
                    self.fail("WrongKind", path, f"literal {stmt.scalar!r} vs {info.dtype}")

        elif isinstance(stmt, RestoreStore):
            info = self._mutate(scope, stmt.target_var, path)
            tmp = self._read(scope, stmt.tmp_name, path)
            if info is None or tmp is None:
                return
            self._check_pos(info, stmt.pos, path)
            if tmp.kind not in ("scalar", "tensor"):
                self.fail("WrongKind", path, f"{stmt.tmp_name} is a {tmp.kind}")

        elif isinstance(stmt, IfBlock):
            if contains_funcdef(stmt.body):
                self.fail("FuncDefInIfBlock", path, "conditional function definitions are not allowed")
            self._scalar_value_kind(stmt.cond.lhs, scope, path)
            self._scalar_value_kind(stmt.cond.rhs, scope, path)
            for j, s in enumerate(stmt.body):
                self.visit(s, scope, path + (j,), depth)

        elif isinstance(stmt, FuncDef):
            expect = set(body_defined_or_mutated(stmt.captured_body))
            got = set(stmt.returned_names)
            if got != expect or len(stmt.returned_names) != len(got):
                self.fail(
                    "ReturnSetMismatch",
                    path,
                    f"returned {sorted(got)} but body touches {sorted(expect)}",
                )
            # Body reads are checked at each call site (hoisting-aware).
            self._bind(scope, stmt.name, VarInfo("func", None, None, (stmt, scope)))

        elif isinstance(stmt, Call):
            info = self._read(scope, stmt.func_name, path, want="func")
            if info is None:
                return
            if depth >= _MAX_CALL_DEPTH:
                self.fail("RecursionLimit", path, stmt.func_name)
                return
            fdef, def_scope = info.payload
            if len(stmt.result_names) != len(fdef.returned_names):
                self.fail(
                    "CallArityMismatch",
                    path,
                    f"{len(stmt.result_names)} targets for {len(fdef.returned_names)} results",
                )
                return
            local = _Scope(parent=def_scope, local_names=body_bindings(fdef.captured_body))
            for j, s in enumerate(fdef.captured_body):
                self.visit(s, local, path + (j,), depth + 1)
            for res_name, body_name in zip(stmt.result_names, fdef.returned_names):
                returned = local.resolve(body_name)
                if returned is UnboundLocal:
                    returned = None
                if returned is None:
                    self.fail("UndefinedName", path, f"{body_name} missing at function exit")
                    returned = VarInfo("tensor", None, None, None)
                self._bind(scope, res_name, returned)

        else:  # pragma: no cover - closed union
            self.fail("UnknownStmt", path, repr(stmt))


def validate(prog: Program) -> list[Violation]:
    """Empty list iff the program satisfies every structural invariant."""
    w = _Walker(prog)
    w.run()
    return w.violations


def analyze(prog: Program) -> ProgramInfo:
    """Execution-order signature and effect facts; requires a valid program."""
    w = _Walker(prog)
    w.run()
    if w.violations:
        raise MalformedProgram(str(w.violations[0]))
    return ProgramInfo(
        tensor_defs=w.tensor_defs,
        touches=w.touches,
        sigs=dict(w.top.vars),
    )
