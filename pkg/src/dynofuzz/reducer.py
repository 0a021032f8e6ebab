"""Delta-debugging minimization of failing cases, preserving the fingerprint.

ddmin operates on top-level statements. Dropping a statement re-routes the
names it defined to fresh input parameters seeded with values profiled from
the original run (at the point right after the dropped definition). Calls to
dropped function definitions cascade away, since a closure cannot be turned
into an input. Flaky faults are handled by requiring every accepted candidate
to reproduce the fingerprint in all of its repeat runs.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import interp, ir
from .config import BackendConfig
from .harness import NotReproducible, TestCase, case_id_for, run_case
from .tensors import DType, TensorValue


@dataclass
class ReduceStats:
    original_statements: int
    reduced_statements: int
    candidates_tried: int
    runs: int


def _names_bound_at(body: tuple[ir.Stmt, ...]) -> dict[str, int]:
    """First top-level index binding or element-writing each name."""
    first: dict[str, int] = {}
    for i, stmt in enumerate(body):
        for name in ir.body_defined_or_mutated((stmt,)):
            first.setdefault(name, i)
    return first


def _value_to_param(name: str, value) -> tuple[ir.Param, TensorValue]:
    if isinstance(value, TensorValue):
        return ir.Param(name, value.shape, value.dtype), value
    if isinstance(value, bool):
        t = TensorValue(DType.BOOL, np.asarray(value))
    elif isinstance(value, int):
        t = TensorValue(DType.I64, np.asarray(value, dtype=np.int64))
    elif isinstance(value, float):
        t = TensorValue(DType.F64, np.asarray(value, dtype=np.float64))
    else:
        raise NotReproducible(f"{name}: cannot re-route a {type(value).__name__}")
    return ir.Param(name, t.shape, t.dtype), t


def build_candidate(
    case: TestCase,
    keep: set[int],
    snapshots: list[dict],
) -> TestCase | None:
    """Case with only the kept top-level statements, repaired for liveness."""
    original = case.program
    first_def = _names_bound_at(original.body)

    kept = sorted(keep)
    # Calls whose function definition was dropped cascade away (transitively,
    # because dropping a call can orphan names that only it produced and some
    # other kept statement may be a call reading those).
    while True:
        body = [original.body[i] for i in kept]
        defined_funcs = {s.name for s in body if isinstance(s, ir.FuncDef)}
        param_names = {p.name for p in original.params}
        drop: set[int] = set()
        bound = ir.body_bindings(tuple(body))
        for idx, stmt in zip(kept, body):
            for name in ir.free_reads((stmt,)):
                if name in param_names or name in bound:
                    continue
                # name must be seeded from the original run; closures cannot
                if name in first_def:
                    snap = snapshots[first_def[name] + 1].get(name)
                    if isinstance(snap, interp.Closure):
                        drop.add(idx)
        if not drop:
            break
        kept = [i for i in kept if i not in drop]

    body = tuple(original.body[i] for i in kept)
    bound = ir.body_bindings(body)
    param_names = [p.name for p in original.params]
    needed: dict[str, None] = {}
    for stmt in body:
        for name in ir.free_reads((stmt,)):
            if name not in param_names and name not in bound:
                needed.setdefault(name)
    for name in original.returns:
        if name not in param_names and name not in bound:
            needed.setdefault(name)

    params = list(original.params)
    inputs = dict(case.inputs)
    for name in needed:
        if name not in first_def:
            return None
        snap = snapshots[first_def[name] + 1].get(name)
        if snap is None:
            return None
        try:
            param, value = _value_to_param(name, snap)
        except NotReproducible:
            return None
        params.append(param)
        inputs[name] = value

    candidate = ir.Program(tuple(params), body, original.returns)
    if ir.validate(candidate):
        return None
    try:
        reference = interp.run_program(candidate, inputs)
    except interp.ReferenceRuntimeError:
        reference = []
    source = ir.emit_module(candidate)
    return TestCase(
        id=case_id_for(source, inputs),
        program=candidate,
        inputs=inputs,
        seed_spec=case.seed_spec,
        records=case.records,
        source=source,
        reference=reference,
        kept_indices=tuple(kept),
    )


def _rebase_to_original(case: TestCase) -> TestCase:
    """Replay (seed spec + mutation records) back into the unreduced case."""
    from .generate import build_seed
    from . import mutate

    seed_prog, seed_inputs = build_seed(case.seed_spec)
    program = mutate.replay(seed_prog, case.records)
    source = ir.emit_module(program)
    return TestCase(
        id=case_id_for(source, seed_inputs),
        program=program,
        inputs=seed_inputs,
        seed_spec=case.seed_spec,
        records=case.records,
        source=source,
        reference=interp.run_program(program, seed_inputs),
    )


def reduce_case(
    case: TestCase,
    backend: BackendConfig,
    target_fp: str,
    runs_per_candidate: int = 3,
    workdir: str | None = None,
) -> tuple[TestCase, ReduceStats]:
    """ddmin over top-level statements; the result still yields target_fp.

    Raises NotReproducible if the given case no longer does. Already-reduced
    cases are rebased onto the replayed original so every artifact is a pure
    function of (seed spec, mutation records, kept statement indices).
    """
    stats = ReduceStats(len(case.program.body), len(case.program.body), 0, 0)
    scratch_root = workdir or tempfile.mkdtemp(prefix="dynofuzz-reduce-")
    os.makedirs(scratch_root, exist_ok=True)

    def reproduces(candidate: TestCase, times: int) -> bool:
        for r in range(times):
            stats.runs += 1
            case_dir = os.path.join(scratch_root, f"try_{stats.runs}_{candidate.id}")
            verdict = run_case(candidate, backend, case_dir, compiled_first=True)
            if verdict.fingerprint != target_fp:
                return False
        return True

    if not reproduces(case, 1):
        raise NotReproducible(f"original case does not reproduce {target_fp!r}")

    if case.kept_indices is None:
        base = case
        current: set[int] = set(range(len(base.program.body)))
    else:
        base = _rebase_to_original(case)
        current = set(case.kept_indices)
    snapshots = interp.trace_top_env(base.program, base.inputs)
    cache: dict[frozenset, bool] = {}

    def test_keep(keep: set[int]) -> bool:
        key = frozenset(keep)
        if key in cache:
            return cache[key]
        stats.candidates_tried += 1
        candidate = build_candidate(base, keep, snapshots)
        ok = candidate is not None and reproduces(candidate, runs_per_candidate)
        cache[key] = ok
        return ok

    # classic ddmin over the kept-statement set
    granularity = 2
    while len(current) >= 1:
        chunks = _partition(sorted(current), granularity)
        reduced = False
        for chunk in chunks:
            trial = current - set(chunk)
            if test_keep(trial):
                current = trial
                granularity = max(granularity - 1, 2)
                reduced = True
                break
        if not reduced:
            if granularity >= len(current):
                break
            granularity = min(len(current), granularity * 2)

    final = build_candidate(base, current, snapshots)
    if final is None or not reproduces(final, 1):
        final = case
    stats.reduced_statements = len(final.program.body)
    return final, stats


def _partition(items: list[int], k: int) -> list[list[int]]:
    k = min(k, len(items)) or 1
    size = len(items) / k
    return [items[round(i * size) : round((i + 1) * size)] for i in range(k)]
