"""The four output-preserving program mutations and their composition scheduler.

Three transformations are equivalent for every valid input: unrolling an
elementwise operator along one axis (loop or comprehension form), backing up
one tensor element / overwriting it / restoring it before the next statement
that touches the tensor, and extracting a statement span into a nested
function whose definition may be hoisted above its free variables. The fourth
wraps a span in a conditional that is true under the profiled execution of
the fixed inputs, so it preserves outputs for those inputs only.

Every mutation is split into a sampling phase (consumes the rng, produces a
parameter record) and a pure application phase, so a (seed, record list) pair
regenerates the mutated program byte-for-byte.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

import numpy as np

from . import interp, ir
from .tensors import DType, TensorValue

MUTATION_KINDS = ("op_resolution", "mutate_then_recover", "functionalize", "tcb")

SPAN_GEOMETRIC_P = 0.5
SPAN_CAP = 5
POINT_VALUE_RANGE = (-4.0, 4.0)
SYNTH_RETRIES = 120
SITE_RETRIES = 16
# Floating-point operands must clear this relative margin unless both sides
# are the same expression; guards against condition flips from backend
# rounding drift.
FLOAT_MARGIN_RTOL = 1e-3


class NoApplicableSite(RuntimeError):
    pass


class SynthesisFailed(RuntimeError):
    pass


class MutationEquivalenceBug(AssertionError):
    """A mutation changed reference outputs; a fuzzer self-bug, never a verdict."""


@dataclass(frozen=True)
class MutationRecord:
    kind: str
    applied: bool
    site: tuple[int, int]
    params: dict
    rng_digest: str

    def to_json(self) -> dict:
        params = dict(self.params)
        if "cond" in params:
            params["cond"] = _cond_to_json(params["cond"])
        return {
            "kind": self.kind,
            "applied": self.applied,
            "site": list(self.site),
            "params": params,
            "rng_digest": self.rng_digest,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MutationRecord":
        params = dict(doc["params"])
        if "cond" in params:
            params["cond"] = _cond_from_json(params["cond"])
        if "pos" in params:
            params["pos"] = tuple(params["pos"])
        return cls(
            kind=doc["kind"],
            applied=bool(doc["applied"]),
            site=tuple(doc["site"]),
            params=params,
            rng_digest=doc["rng_digest"],
        )


def _digest(rng: random.Random) -> str:
    return hashlib.sha1(repr(rng.getstate()).encode()).hexdigest()[:12]


def _cond_to_json(cond: ir.ConditionExpr) -> dict:
    def enc(e: ir.ScalarExpr) -> dict:
        if isinstance(e, ir.Element):
            return {"form": "element", "var": e.var, "pos": list(e.pos)}
        if isinstance(e, ir.ShapeDim):
            return {"form": "shape_dim", "var": e.var, "k": e.k}
        if isinstance(e, ir.Rank):
            return {"form": "rank", "var": e.var}
        if isinstance(e, ir.MaxOf):
            return {"form": "max", "var": e.var}
        if isinstance(e, ir.MinOf):
            return {"form": "min", "var": e.var}
        return {"form": "const", "c": e.c}

    return {"lhs": enc(cond.lhs), "op": cond.op.value, "rhs": enc(cond.rhs)}


def _cond_from_json(doc: dict) -> ir.ConditionExpr:
    def dec(d: dict) -> ir.ScalarExpr:
        form = d["form"]
        if form == "element":
            return ir.Element(d["var"], tuple(d["pos"]))
        if form == "shape_dim":
            return ir.ShapeDim(d["var"], d["k"])
        if form == "rank":
            return ir.Rank(d["var"])
        if form == "max":
            return ir.MaxOf(d["var"])
        if form == "min":
            return ir.MinOf(d["var"])
        return ir.IntConst(d["c"])

    return ir.ConditionExpr(dec(doc["lhs"]), ir.CmpOp(doc["op"]), dec(doc["rhs"]))


# --- operator resolution -----------------------------------------------------


def _zero_for(dtype: DType) -> bool | int | float:
    if dtype is DType.BOOL:
        return False
    if dtype is DType.I64:
        return 0
    return 0.0


def _resolution_sites(prog: ir.Program) -> list[tuple[int, ir.Assign, tuple, DType]]:
    from . import ops

    info = ir.analyze(prog)
    sites = []
    for i, stmt in enumerate(prog.body):
        if not isinstance(stmt, ir.Assign):
            continue
        op = ops.get_op(stmt.op)
        if not op.elementwise:
            continue
        sig = info.tensor_defs.get(stmt.target)
        if sig is None or len(sig[0]) < 1:
            continue
        sites.append((i, stmt, sig[0], sig[1]))
    return sites


def op_resolution(prog: ir.Program, rng: random.Random) -> tuple[ir.Program, MutationRecord]:
    """Unroll one elementwise statement along a random axis."""
    digest = _digest(rng)
    sites = _resolution_sites(prog)
    if not sites:
        raise NoApplicableSite("no elementwise statement with rank >= 1 output")
    i, stmt, shape, dtype = rng.choice(sites)
    axis = rng.randrange(len(shape))
    form = "loop" if rng.random() < 0.5 else "comprehension"
    loop_var = ir.fresh_name("i", ir.all_names(prog))
    params = {"index": i, "axis": axis, "form": form, "loop_var": loop_var}
    record = MutationRecord("op_resolution", True, (i, i + 1), params, digest)
    return apply_op_resolution(prog, params), record


def apply_op_resolution(prog: ir.Program, params: dict) -> ir.Program:
    i, axis, form = params["index"], params["axis"], params["form"]
    loop_var = params["loop_var"]
    stmt = prog.body[i]
    info = ir.analyze(prog)
    shape, dtype, _ = info.tensor_defs[stmt.target]
    body = list(prog.body)
    if form == "loop":
        alloc = ir.Assign(
            target=stmt.target,
            op="fill",
            args=(),
            attrs={"shape": shape, "dtype": dtype, "value": _zero_for(dtype)},
        )
        loop = ir.ForLoop(
            axis_var=loop_var,
            extent=shape[axis],
            body=(
                ir.SliceAssign(stmt.target, axis, loop_var, stmt.op, stmt.args, len(shape)),
            ),
        )
        body[i : i + 1] = [alloc, loop]
    else:
        body[i : i + 1] = [
            ir.ComprehensionAssign(
                stmt.target, axis, loop_var, stmt.op, stmt.args, len(shape), shape[axis]
            )
        ]
    return prog.replace_body(body)


# --- mutate then recover -----------------------------------------------------


def _sample_point_value(dtype: DType, rng: random.Random) -> bool | int | float:
    if dtype is DType.BOOL:
        return rng.random() < 0.5
    if dtype is DType.I64:
        return rng.randint(-4, 4)
    lo, hi = POINT_VALUE_RANGE
    v = rng.uniform(lo, hi)
    if dtype is DType.F32:
        return float(np.float32(v))
    return float(v)


def mutate_then_recover(prog: ir.Program, rng: random.Random) -> tuple[ir.Program, MutationRecord]:
    """Back up one element, overwrite it, restore before the next dependent."""
    digest = _digest(rng)
    info = ir.analyze(prog)
    candidates = [
        (name, shape, dtype, def_idx)
        for name, (shape, dtype, def_idx) in info.tensor_defs.items()
        if len(shape) >= 1
    ]
    if not candidates:
        raise NoApplicableSite("no rank >= 1 tensor is visible at top level")
    name, shape, dtype, def_idx = rng.choice(candidates)
    pos = tuple(rng.randrange(d) for d in shape)
    value = _sample_point_value(dtype, rng)
    insert_at = rng.randint(def_idx + 1, len(prog.body))
    # The value must come back before anything reads the tensor; stopping at
    # element writes as well keeps stacked windows on one tensor nested, which
    # composition relies on for same-position safety.
    restore_before = None
    for q in range(insert_at, len(prog.body)):
        touch = info.touches[q]
        if name in touch.reads or name in touch.writes:
            restore_before = q
            break
    backup = ir.fresh_name("_bk", ir.all_names(prog))
    params = {
        "tensor": name,
        "pos": pos,
        "value": value,
        "insert_at": insert_at,
        "restore_before": restore_before,
        "backup_name": backup,
    }
    end = (restore_before if restore_before is not None else len(prog.body)) + 2
    record = MutationRecord("mutate_then_recover", True, (insert_at, end), params, digest)
    return apply_mutate_then_recover(prog, params), record


def apply_mutate_then_recover(prog: ir.Program, params: dict) -> ir.Program:
    name, pos, value = params["tensor"], tuple(params["pos"]), params["value"]
    insert_at, backup = params["insert_at"], params["backup_name"]
    restore_before = params["restore_before"]
    body = list(prog.body)
    restore_at = (restore_before if restore_before is not None else len(body)) + 2
    body[insert_at:insert_at] = [
        ir.BackupStore(backup, name, pos),
        ir.PointStore(name, pos, value),
    ]
    body.insert(restore_at, ir.RestoreStore(name, pos, backup))
    return prog.replace_body(body)


# --- functionalization -------------------------------------------------------


def _sample_span(rng: random.Random, n: int) -> tuple[int, int]:
    length = 1
    while length < SPAN_CAP and rng.random() < SPAN_GEOMETRIC_P:
        length += 1
    start = rng.randrange(n)
    return start, min(length, n - start)


def _is_def_call_pair(span: tuple[ir.Stmt, ...]) -> bool:
    return (
        len(span) == 2
        and isinstance(span[0], ir.FuncDef)
        and isinstance(span[1], ir.Call)
        and span[1].func_name == span[0].name
    )


def _span_extractable(prog: ir.Program, start: int, length: int) -> bool:
    """Extraction must not move a binding out from under an outside closure.

    If a function defined outside the span reads a name the span binds, its
    closure would resolve to the enclosing scope while the binding moves into
    the new function, leaving the name unbound whenever that closure runs
    during the span (Python would raise NameError).
    """
    span = prog.body[start : start + length]
    bound = ir.body_bindings(span)
    if not bound:
        return True
    for i, s in enumerate(prog.body):
        if start <= i < start + length or not isinstance(s, ir.FuncDef):
            continue
        if bound & set(ir.free_reads(s.captured_body)):
            return False
    return True


def functionalize(prog: ir.Program, rng: random.Random) -> tuple[ir.Program, MutationRecord]:
    """Wrap a statement span in a nested function; hoist its definition."""
    digest = _digest(rng)
    n = len(prog.body)
    if n == 0:
        raise NoApplicableSite("empty body")
    for _ in range(SITE_RETRIES):
        start, length = _sample_span(rng, n)
        span = prog.body[start : start + length]
        if not _is_def_call_pair(span) and _span_extractable(prog, start, length):
            break
    else:
        raise NoApplicableSite("no extractable span found")
    hoist_pos = rng.randint(0, start)
    func_name = ir.fresh_name("subfunc", ir.all_names(prog))
    params = {
        "start": start,
        "length": length,
        "hoist_pos": hoist_pos,
        "func_name": func_name,
    }
    record = MutationRecord("functionalize", True, (start, start + length), params, digest)
    return apply_functionalize(prog, params), record


def apply_functionalize(prog: ir.Program, params: dict) -> ir.Program:
    start, length = params["start"], params["length"]
    hoist_pos, func_name = params["hoist_pos"], params["func_name"]
    span = prog.body[start : start + length]
    returned = ir.body_defined_or_mutated(span)
    fdef = ir.FuncDef(
        name=func_name,
        free_vars=ir.free_reads(span),
        captured_body=span,
        returned_names=returned,
    )
    call = ir.Call(result_names=returned, func_name=func_name)
    body = list(prog.body)
    body[start : start + length] = [call]
    body.insert(hoist_pos, fdef)
    return prog.replace_body(body)


# --- always-true conditional block ---------------------------------------------


_FORMS = ("element", "shape_dim", "rank", "max", "min", "const")


def _operand_value(expr: ir.ScalarExpr, env: interp.Env):
    return interp.eval_scalar_expr(expr, env)


def _sample_operand(
    tensors: list[tuple[str, TensorValue]], rng: random.Random
) -> ir.ScalarExpr | None:
    form = _FORMS[rng.randrange(len(_FORMS))]
    if form == "const":
        return ir.IntConst(rng.randint(-16, 16))
    if not tensors:
        return None
    name, t = rng.choice(tensors)
    if form == "element":
        if t.rank < 1:
            return None
        return ir.Element(name, tuple(rng.randrange(d) for d in t.shape))
    if form == "shape_dim":
        if t.rank < 1:
            return None
        return ir.ShapeDim(name, rng.randrange(t.rank))
    if form == "rank":
        return ir.Rank(name)
    if form in ("max", "min"):
        if not t.dtype.is_numeric:
            return None
        return ir.MaxOf(name) if form == "max" else ir.MinOf(name)
    return None


def _is_bool_element(expr: ir.ScalarExpr, by_name: dict[str, TensorValue]) -> bool:
    return isinstance(expr, ir.Element) and by_name[expr.var].dtype is DType.BOOL


def _pair_well_typed(
    lhs: ir.ScalarExpr, rhs: ir.ScalarExpr, by_name: dict[str, TensorValue]
) -> bool:
    # Boolean elements only compare against the constants 0/1.
    for a, b in ((lhs, rhs), (rhs, lhs)):
        if _is_bool_element(a, by_name):
            if not (isinstance(b, ir.IntConst) and b.c in (0, 1)):
                return False
    return True


def synthesize_condition(
    profile: interp.Profile, rng: random.Random
) -> ir.ConditionExpr:
    """Draw a comparison from the grammar that holds under the profile."""
    tensors = list(profile.tensors().items())
    env = interp.Env()
    env.vars = dict(profile.env)
    by_name = dict(tensors)
    if not tensors:
        raise SynthesisFailed("no live tensor variables at the insertion point")
    for _ in range(SYNTH_RETRIES):
        lhs = _sample_operand(tensors, rng)
        rhs = _sample_operand(tensors, rng)
        if lhs is None or rhs is None:
            continue
        if not _pair_well_typed(lhs, rhs, by_name):
            continue
        lv = _operand_value(lhs, env)
        rv = _operand_value(rhs, env)
        if lv == rv:
            # A strict comparison would be false; only structurally identical
            # operands are immune to backend rounding drift on top of that.
            if lhs != rhs:
                continue
            op = rng.choice((ir.CmpOp.GE, ir.CmpOp.LE))
            return ir.ConditionExpr(lhs, op, rhs)
        if isinstance(lv, float) or isinstance(rv, float):
            margin = FLOAT_MARGIN_RTOL * max(1.0, abs(lv), abs(rv))
            if abs(lv - rv) < margin:
                continue
        if lv > rv:
            op = rng.choice((ir.CmpOp.GT, ir.CmpOp.GE))
        else:
            op = rng.choice((ir.CmpOp.LT, ir.CmpOp.LE))
        return ir.ConditionExpr(lhs, op, rhs)
    raise SynthesisFailed(f"no usable operand pair within {SYNTH_RETRIES} draws")


def tcb_insert(
    prog: ir.Program, inputs: dict[str, TensorValue], rng: random.Random
) -> tuple[ir.Program, MutationRecord]:
    """Wrap a span in a conditional synthesized to hold under the fixed inputs."""
    digest = _digest(rng)
    n = len(prog.body)
    if n == 0:
        raise NoApplicableSite("empty body")
    span = None
    for _ in range(SITE_RETRIES):
        start, length = _sample_span(rng, n)
        if not ir.contains_funcdef(prog.body[start : start + length]):
            span = (start, length)
            break
    if span is None:
        raise NoApplicableSite("no span free of function definitions")
    start, length = span
    profile = interp.profile_until(prog, inputs, stop=start)
    cond = synthesize_condition(profile, rng)
    params = {"start": start, "length": length, "cond": cond}
    record = MutationRecord("tcb", True, (start, start + length), params, digest)
    return apply_tcb(prog, params), record


def apply_tcb(prog: ir.Program, params: dict) -> ir.Program:
    start, length, cond = params["start"], params["length"], params["cond"]
    body = list(prog.body)
    block = ir.IfBlock(cond=cond, body=tuple(body[start : start + length]))
    body[start : start + length] = [block]
    return prog.replace_body(body)


# --- composition ----------------------------------------------------------------


_APPLY = {
    "op_resolution": apply_op_resolution,
    "mutate_then_recover": apply_mutate_then_recover,
    "functionalize": apply_functionalize,
    "tcb": apply_tcb,
}


def outputs_equal(a: list[TensorValue], b: list[TensorValue]) -> bool:
    return len(a) == len(b) and all(x == y for x, y in zip(a, b))


def compose(
    prog: ir.Program,
    inputs: dict[str, TensorValue],
    k: int,
    rng: random.Random,
    weights: dict[str, float] | None = None,
) -> tuple[ir.Program, list[MutationRecord]]:
    """Apply k mutations drawn from a weighted distribution.

    After every applied step the program is re-validated and re-evaluated on
    the fixed inputs; any deviation from the seed outputs is a fuzzer self-bug
    and raises immediately. Inapplicable draws are recorded and skipped.
    """
    weights = weights or {kind: 1.0 for kind in MUTATION_KINDS}
    kinds = [k_ for k_ in MUTATION_KINDS if weights.get(k_, 0) > 0]
    kind_weights = [weights[k_] for k_ in kinds]
    expected = interp.run_program(prog, inputs)
    records: list[MutationRecord] = []
    current = prog
    for _ in range(max(0, k)):
        kind = rng.choices(kinds, weights=kind_weights, k=1)[0]
        digest = _digest(rng)
        try:
            if kind == "tcb":
                current, record = tcb_insert(current, inputs, rng)
            elif kind == "op_resolution":
                current, record = op_resolution(current, rng)
            elif kind == "mutate_then_recover":
                current, record = mutate_then_recover(current, rng)
            else:
                current, record = functionalize(current, rng)
        except (NoApplicableSite, SynthesisFailed) as e:
            records.append(MutationRecord(kind, False, (0, 0), {"reason": str(e)}, digest))
            continue
        violations = ir.validate(current)
        if violations:
            raise MutationEquivalenceBug(f"{kind} produced invalid program: {violations[0]}")
        got = interp.run_program(current, inputs)
        if not outputs_equal(expected, got):
            raise MutationEquivalenceBug(f"{kind} changed reference outputs")
        records.append(record)
    return current, records


def replay(prog: ir.Program, records: list[MutationRecord]) -> ir.Program:
    """Deterministically regenerate the mutated program from its records."""
    current = prog
    for record in records:
        if not record.applied:
            continue
        current = _APPLY[record.kind](current, record.params)
    return current
