"""Acceptance gate: every campaign-level guarantee at its stated threshold.

Each test prints one [PASS]/[FAIL] line (visible with -s) and asserts the
criterion. The suite is deterministic: one fixed master seed drives every
generated case.
"""

import dataclasses
import hashlib
import random
import time

from dynofuzz import interp, ir, mutate, reducer
from dynofuzz.config import Config
from dynofuzz.generate import (
    GenerationBudgetExhausted,
    InputSearchFailed,
    SeedSpec,
    generate_graph,
    generate_inputs,
    lower_to_ssa,
)
from dynofuzz.harness import (
    VerdictKind,
    build_iteration_case,
    make_case,
    run_case,
    splitmix64,
)
from dynofuzz.mutate import SynthesisFailed, compose, outputs_equal, synthesize_condition
from dynofuzz.tensors import DType
from conftest import stub_backend

MASTER = 20240809


def _final(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _build(spec: SeedSpec):
    graph = generate_graph(spec)
    inputs = generate_inputs(graph, spec)
    return graph, inputs, lower_to_ssa(graph)


def test_equivalence_suite():
    """1,000 mutated cases preserve seed outputs bit-exactly on the fixed
    inputs; mutations without a conditional block also preserve outputs on 4
    fresh input sets. Budget: 120 s."""
    t0 = time.monotonic()
    exact = 0
    fresh_exact = 0
    fresh_total = 0
    sources = set()
    built = 0
    i = 0
    while built < 1000:
        seed = splitmix64(MASTER, i)
        i += 1
        spec = SeedSpec(rng_seed=seed, num_ops=20)
        try:
            graph, inputs, prog = _build(spec)
        except (GenerationBudgetExhausted, InputSearchFailed):
            continue
        built += 1
        k = 1 + (built % 5)
        rng = random.Random(splitmix64(seed, 0x6D75))
        expected = interp.run_program(prog, inputs)
        mutated, records = compose(prog, inputs, k, rng)
        got = interp.run_program(mutated, inputs)
        if outputs_equal(expected, got):
            exact += 1
        sources.add(ir.emit(mutated))
        has_tcb = any(r.applied and r.kind == "tcb" for r in records)
        if not has_tcb:
            for j in range(4):
                fresh_spec = dataclasses.replace(
                    spec, rng_seed=splitmix64(seed, 7000 + j)
                )
                try:
                    fresh = generate_inputs(graph, fresh_spec)
                except InputSearchFailed:
                    continue
                fresh_total += 1
                if outputs_equal(
                    interp.run_program(prog, fresh), interp.run_program(mutated, fresh)
                ):
                    fresh_exact += 1
    elapsed = time.monotonic() - t0
    ok = exact == 1000 and fresh_exact == fresh_total and elapsed < 120.0
    _final(
        "equivalence-suite",
        ok,
        f"{exact}/1000 bit-exact on fixed inputs, {fresh_exact}/{fresh_total} on "
        f"fresh inputs, {len(sources)} distinct sources, {elapsed:.1f}s",
    )


def test_tcb_truth_and_grammar_coverage():
    """>= 5,000 synthesized conditions all hold under their profiles, covering
    every grammar alternative and comparison operator >= 50 times."""
    rng = random.Random(MASTER)
    total = 0
    true_count = 0
    form_counts: dict[str, int] = {}
    op_counts: dict[str, int] = {}

    def form_of(e) -> str:
        return {
            ir.Element: "element",
            ir.ShapeDim: "shape-dim",
            ir.Rank: "rank",
            ir.MaxOf: "max",
            ir.MinOf: "min",
            ir.IntConst: "constant",
        }[type(e)]

    seed_idx = 0
    while total < 5000:
        spec = SeedSpec(rng_seed=splitmix64(MASTER, 100_000 + seed_idx), num_ops=12)
        seed_idx += 1
        try:
            graph, inputs, prog = _build(spec)
        except (GenerationBudgetExhausted, InputSearchFailed):
            continue
        for _ in range(12):
            stop = rng.randrange(len(prog.body) + 1)
            profile = interp.profile_until(prog, inputs, stop)
            try:
                cond = synthesize_condition(profile, rng)
            except SynthesisFailed:
                continue
            env = interp.Env()
            env.vars = dict(profile.env)
            total += 1
            if interp.eval_condition(cond, env):
                true_count += 1
            for side in (cond.lhs, cond.rhs):
                form_counts[form_of(side)] = form_counts.get(form_of(side), 0) + 1
            op_counts[cond.op.value] = op_counts.get(cond.op.value, 0) + 1
    forms = ("element", "shape-dim", "rank", "max", "min", "constant")
    ops_all = (">", "<", ">=", "<=")
    coverage_ok = all(form_counts.get(f, 0) >= 50 for f in forms) and all(
        op_counts.get(o, 0) >= 50 for o in ops_all
    )
    ok = total >= 5000 and true_count == total and coverage_ok
    _final(
        "tcb-truth",
        ok,
        f"{true_count}/{total} true; forms {sorted(form_counts.items())}; "
        f"ops {sorted(op_counts.items())}",
    )


def test_seed_validity_rate():
    """>= 99% of generation attempts produce cases whose full reference run is
    NaN/Inf-free on every intermediate; accepted cases never violate it."""
    attempts = 1000
    succeeded = 0
    shipped_violations = 0
    for i in range(attempts):
        spec = SeedSpec(rng_seed=splitmix64(MASTER, 200_000 + i), num_ops=20)
        try:
            graph, inputs, prog = _build(spec)
        except (GenerationBudgetExhausted, InputSearchFailed):
            continue
        succeeded += 1
        try:
            interp.run_program(prog, inputs, require_valid=True)
        except interp.InvalidIntermediate:
            shipped_violations += 1
    rate = succeeded / attempts
    ok = rate >= 0.99 and shipped_violations == 0
    _final(
        "seed-validity",
        ok,
        f"{succeeded}/{attempts} attempts valid ({rate:.1%}), "
        f"{shipped_violations} shipped violations",
    )


def test_verdict_oracle():
    """Against four injected fault classes, 200 runs classify with 100%
    accuracy and collapse to exactly 4 unique fingerprints."""
    import tempfile

    cases = []
    i = 0
    while len(cases) < 50:
        spec = SeedSpec(rng_seed=splitmix64(MASTER, 300_000 + i), num_ops=8)
        i += 1
        try:
            case = make_case(spec, k=2)
        except (GenerationBudgetExhausted, InputSearchFailed):
            continue
        first = case.reference[0]
        if first.dtype is DType.F32 and float(abs(first.data).max()) < 100.0:
            cases.append(case)

    backends = {
        VerdictKind.INCONSISTENT: stub_backend("perturb-output"),
        VerdictKind.COMPILER_CRASH: stub_backend("crash-at-compile"),
        VerdictKind.RUN_CRASH: stub_backend("crash-at-run"),
        VerdictKind.COMPILER_HANG: stub_backend(
            "sleep-past-timeout", compile_timeout_s=0.5, run_timeout_s=10.0
        ),
    }
    correct = 0
    total = 0
    fingerprints = set()
    with tempfile.TemporaryDirectory() as scratch:
        for expected_kind, backend in backends.items():
            for j, case in enumerate(cases):
                verdict = run_case(
                    case, backend, f"{scratch}/{expected_kind.value}_{j}"
                )
                total += 1
                if verdict.kind is expected_kind:
                    correct += 1
                fingerprints.add(verdict.fingerprint)
    ok = total == 200 and correct == 200 and len(fingerprints) == 4
    _final(
        "verdict-oracle",
        ok,
        f"{correct}/{total} correct, {len(fingerprints)} unique fingerprints",
    )


def test_reduction_quality_and_idempotence():
    """Statement-keyed fault: reductions reach <= 25% of the original
    statement count in >= 90% of 50 trials and are idempotent in 50/50."""
    import tempfile

    token = "torch.tanh("
    backend = stub_backend("token-crash", "--fault-token", token)
    trials = 0
    small_enough = 0
    idempotent = 0
    i = 0
    with tempfile.TemporaryDirectory() as scratch:
        while trials < 50:
            spec = SeedSpec(rng_seed=splitmix64(MASTER, 400_000 + i), num_ops=16)
            i += 1
            try:
                case = make_case(spec, k=2)
            except (GenerationBudgetExhausted, InputSearchFailed):
                continue
            if token not in case.source:
                continue
            trials += 1
            verdict = run_case(case, backend, f"{scratch}/orig_{trials}")
            assert verdict.kind is VerdictKind.COMPILER_CRASH
            reduced, stats = reducer.reduce_case(
                case, backend, verdict.fingerprint, workdir=f"{scratch}/w_{trials}"
            )
            if stats.reduced_statements <= 0.25 * stats.original_statements:
                small_enough += 1
            again, _ = reducer.reduce_case(
                reduced, backend, verdict.fingerprint, workdir=f"{scratch}/i_{trials}"
            )
            if again.id == reduced.id and again.source == reduced.source:
                idempotent += 1
    ok = small_enough >= 45 and idempotent == 50
    _final(
        "reduction",
        ok,
        f"{small_enough}/50 trials reached <=25% statements, "
        f"{idempotent}/50 idempotent",
    )


def test_case_stream_determinism():
    """Two runs with one master seed produce byte-identical case streams."""
    def stream_digest() -> str:
        cfg = Config(master_seed=MASTER, num_ops=12, mutations_per_case=3, max_iters=1)
        h = hashlib.sha256()
        for i in range(100):
            case, _ = build_iteration_case(cfg, i)
            assert case is not None
            h.update(case.source.encode())
            from dynofuzz.tensors import dump_archive

            h.update(dump_archive(case.inputs).encode())
        return h.hexdigest()

    a = stream_digest()
    b = stream_digest()
    ok = a == b
    _final("determinism", ok, f"stream digest {a[:16]} ({'stable' if ok else 'UNSTABLE'})")
