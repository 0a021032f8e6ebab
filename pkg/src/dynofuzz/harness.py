"""End-to-end differential testing: materialize cases, drive backends, triage.

A case runs twice in fresh processes (interpreter-executed "eager" mode, then
compiler-executed mode). Eager output is the comparison baseline for the
compiled run; the internal reference evaluator guards the runner shim itself.
Phase attribution is exact: the runner prints a sentinel line on stdout after
compilation, so a nonzero exit or timeout is classified as a compile-phase or
run-phase failure by whether the sentinel was seen.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import shutil
import signal
import subprocess
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import interp, ir, mutate
from .config import BackendConfig, Config
from .generate import (
    GenerationBudgetExhausted,
    InputSearchFailed,
    SeedSpec,
    build_seed,
)
from .tensors import TensorValue, dump_archive, load_archive, tensors_close

log = logging.getLogger("dynofuzz.harness")

SENTINEL = "__COMPILE_OK__"
_STDERR_CAP = 65536


class BackendUnavailable(RuntimeError):
    pass


class NotReproducible(RuntimeError):
    pass


class VerdictKind(enum.Enum):
    PASS = "pass"
    COMPILER_CRASH = "compiler-crash"
    COMPILER_HANG = "compiler-hang"
    RUN_CRASH = "run-crash"
    INCONSISTENT = "inconsistent"
    INVALID_SEED = "invalid-seed"


@dataclass
class Verdict:
    kind: VerdictKind
    detail: str = ""
    fingerprint: str = ""
    failing_index: int | None = None
    failing_dtype: str | None = None
    max_abs_diff: float | None = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "detail": self.detail,
            "fingerprint": self.fingerprint,
            "failing_index": self.failing_index,
            "failing_dtype": self.failing_dtype,
            "max_abs_diff": self.max_abs_diff,
        }


@dataclass
class TestCase:
    id: str
    program: ir.Program
    inputs: dict[str, TensorValue]
    seed_spec: SeedSpec
    records: list[mutate.MutationRecord]
    source: str
    reference: list[TensorValue]
    # present on reduced cases: surviving top-level statement indices of the
    # replayed (seed + records) program, so the artifact stays reconstructible
    kept_indices: tuple[int, ...] | None = None


_MUTATION_SALT = 0x6D75
_M64 = (1 << 64) - 1


def splitmix64(state: int, stream: int = 0) -> int:
    z = (state + (stream + 1) * 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def case_id_for(source: str, inputs: dict[str, TensorValue]) -> str:
    h = hashlib.sha256()
    h.update(source.encode("utf-8"))
    h.update(dump_archive(inputs).encode("utf-8"))
    return h.hexdigest()[:16]


def make_case(
    seed_spec: SeedSpec,
    k: int,
    weights: dict[str, float] | None = None,
) -> TestCase:
    """Generate a seed, compose k mutations, and package the result.

    Raises GenerationBudgetExhausted / InputSearchFailed when the seed cannot
    be built; callers resample the seed.
    """
    import random

    prog, inputs = build_seed(seed_spec)
    rng = random.Random(splitmix64(seed_spec.rng_seed, _MUTATION_SALT))
    mutated, records = mutate.compose(prog, inputs, k, rng, weights)
    reference = interp.run_program(mutated, inputs, require_valid=True)
    source = ir.emit_module(mutated)
    return TestCase(
        id=case_id_for(source, inputs),
        program=mutated,
        inputs=inputs,
        seed_spec=seed_spec,
        records=records,
        source=source,
        reference=reference,
    )


# --- case directory layout ------------------------------------------------------


def write_case(case: TestCase, case_dir: str, backend: BackendConfig) -> None:
    os.makedirs(case_dir, exist_ok=True)
    with open(os.path.join(case_dir, "program.py"), "w", encoding="utf-8") as fh:
        fh.write(case.source)
    with open(os.path.join(case_dir, "inputs.json"), "w", encoding="utf-8") as fh:
        fh.write(dump_archive(case.inputs))
    meta = {
        "case_id": case.id,
        "params": [p.name for p in case.program.params],
        "return_arity": len(case.program.returns),
        "dtypes": {p.name: p.dtype.value for p in case.program.params},
        "tolerances": {k: list(v) for k, v in backend.tolerances.items()},
    }
    with open(os.path.join(case_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(case_dir, "reference.json"), "w", encoding="utf-8") as fh:
        fh.write(dump_archive({f"out{i}": t for i, t in enumerate(case.reference)}))
    provenance = {
        "case_id": case.id,
        "seed_spec": case.seed_spec.to_json(),
        "mutations": [r.to_json() for r in case.records],
    }
    if case.kept_indices is not None:
        provenance["kept_indices"] = list(case.kept_indices)
    with open(os.path.join(case_dir, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_reference(case_dir: str) -> list[TensorValue] | None:
    path = os.path.join(case_dir, "reference.json")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        archive = load_archive(fh.read())
    return [archive[f"out{i}"] for i in range(len(archive))]


# --- subprocess driving -----------------------------------------------------------


@dataclass
class ProcOutcome:
    exit_code: int | None
    timed_out: bool
    sentinel: bool
    stderr: str


def _drain(stream, chunks: list[str], sentinel_seen: threading.Event) -> None:
    try:
        for line in stream:
            if line.strip() == SENTINEL:
                sentinel_seen.set()
            if sum(len(c) for c in chunks) < _STDERR_CAP:
                chunks.append(line)
    except ValueError:  # stream closed during kill
        pass


def _kill_tree(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def run_runner(
    backend: BackendConfig, case_dir: str, mode: str, out_name: str
) -> ProcOutcome:
    """One runner invocation with wall-clock deadlines and process-tree kill."""
    cmd = backend.resolved_command() + [
        "--case",
        case_dir,
        "--mode",
        mode,
        "--out",
        os.path.join(case_dir, out_name),
    ]
    try:
        proc = subprocess.Popen(
            cmd,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=backend.workdir or case_dir,
            env=backend.subprocess_env(),
            text=True,
            start_new_session=True,
        )
    except FileNotFoundError as e:
        raise BackendUnavailable(f"cannot spawn runner: {cmd[0]!r}") from e

    sentinel_seen = threading.Event()
    out_chunks: list[str] = []
    err_chunks: list[str] = []
    t_out = threading.Thread(target=_drain, args=(proc.stdout, out_chunks, sentinel_seen))
    t_err = threading.Thread(
        target=_drain, args=(proc.stderr, err_chunks, threading.Event())
    )
    t_out.start()
    t_err.start()

    start = time.monotonic()
    compiled = mode == "compiled"
    run_deadline: float | None = None if compiled else start + backend.run_timeout_s
    compile_deadline = start + backend.compile_timeout_s
    timed_out = False
    while proc.poll() is None:
        now = time.monotonic()
        if compiled and run_deadline is None and sentinel_seen.is_set():
            run_deadline = now + backend.run_timeout_s
        deadline = run_deadline if run_deadline is not None else compile_deadline
        if now > deadline:
            timed_out = True
            _kill_tree(proc)
            break
        time.sleep(0.005)
    proc.wait()
    t_out.join(timeout=5)
    t_err.join(timeout=5)
    return ProcOutcome(
        exit_code=None if timed_out else proc.returncode,
        timed_out=timed_out,
        sentinel=sentinel_seen.is_set(),
        stderr="".join(err_chunks),
    )


# --- verdict construction -----------------------------------------------------------


_HEX_RE = re.compile(r"0x[0-9a-fA-F]+")
_LINE_RE = re.compile(r"line \d+")
_PATH_RE = re.compile(r"(?:/[\w.\-+]+)+")
_FILE_LINE_RE = re.compile(r"\.py:\d+")


def _normalize_error_line(stderr: str) -> str:
    line = ""
    for candidate in reversed(stderr.splitlines()):
        if candidate.strip():
            line = candidate.strip()
            break
    line = _HEX_RE.sub("0xADDR", line)
    line = _LINE_RE.sub("line N", line)
    line = _FILE_LINE_RE.sub(".py:N", line)
    line = _PATH_RE.sub("PATH", line)
    return line[:160]


def fingerprint(verdict: Verdict, case: TestCase | None = None) -> str:
    """Normalized dedup key for a non-Pass verdict."""
    kind = verdict.kind
    if kind is VerdictKind.PASS:
        return ""
    if kind is VerdictKind.INCONSISTENT:
        return f"inconsistent|out{verdict.failing_index}|{verdict.failing_dtype}"
    if kind is VerdictKind.COMPILER_HANG:
        return "compiler-hang"
    return f"{kind.value}|{_normalize_error_line(verdict.detail)}"


def _load_outputs(case_dir: str, out_name: str) -> list[TensorValue] | None:
    path = os.path.join(case_dir, out_name)
    try:
        with open(path, encoding="utf-8") as fh:
            archive = load_archive(fh.read())
        return [archive[f"out{i}"] for i in range(len(archive))]
    except Exception:
        return None


def _compare_outputs(
    got: list[TensorValue],
    want: list[TensorValue],
    backend: BackendConfig,
) -> tuple[int, str, float] | None:
    """First failing output index with dtype tag and max abs diff, or None."""
    if len(got) != len(want):
        return (min(len(got), len(want)), "arity", float("nan"))
    for i, (g, w) in enumerate(zip(got, want)):
        rtol, atol = backend.tolerance_for(w.dtype.value)
        if tensors_close(g, w, rtol, atol):
            continue
        if g.dtype is w.dtype and g.shape == w.shape and w.dtype.is_float:
            with np.errstate(invalid="ignore"):
                diff = float(np.nanmax(np.abs(g.data.astype(np.float64) - w.data.astype(np.float64))))
        else:
            diff = float("nan")
        return (i, w.dtype.value, diff)
    return None


def _verdict_with_fp(verdict: Verdict, case: TestCase | None) -> Verdict:
    verdict.fingerprint = fingerprint(verdict, case)
    return verdict


def run_case_dir(
    case_dir: str,
    backend: BackendConfig,
    reference: list[TensorValue] | None = None,
    compiled_first: bool = False,
) -> Verdict:
    """Differential run of an on-disk case; see run_case for the contract.

    ``compiled_first`` is the reducer's fast path: compile-phase failures are
    classified without paying for an eager run, and the shim-drift guard is
    skipped (reduction only chases an existing fingerprint).
    """
    if reference is None:
        reference = load_reference(case_dir)

    def eager_phase() -> tuple[Verdict | None, list[TensorValue] | None]:
        outcome = run_runner(backend, case_dir, "eager", "eager_out.json")
        if outcome.timed_out or outcome.exit_code != 0:
            why = "timeout" if outcome.timed_out else f"exit {outcome.exit_code}"
            log.warning("eager run failed (%s); case is unusable as an oracle", why)
            return (
                Verdict(
                    VerdictKind.INVALID_SEED,
                    detail=f"eager failure ({why}): {outcome.stderr[-400:]}",
                ),
                None,
            )
        outputs = _load_outputs(case_dir, "eager_out.json")
        if outputs is None:
            return (
                Verdict(VerdictKind.INVALID_SEED, detail="eager output unreadable"),
                None,
            )
        if reference is not None:
            drift = _compare_outputs(outputs, reference, backend)
            if drift is not None:
                i, dtype_tag, diff = drift
                log.error(
                    "runner shim drift: eager out%d (%s) deviates from the internal "
                    "reference by %s",
                    i,
                    dtype_tag,
                    diff,
                )
                return (
                    Verdict(
                        VerdictKind.INVALID_SEED,
                        detail=f"eager deviates from reference at out{i} ({dtype_tag}, {diff})",
                        failing_index=i,
                        failing_dtype=dtype_tag,
                        max_abs_diff=diff,
                    ),
                    None,
                )
        return None, outputs

    def compiled_phase() -> tuple[Verdict | None, list[TensorValue] | None]:
        outcome = run_runner(backend, case_dir, "compiled", "compiled_out.json")
        if outcome.timed_out and not outcome.sentinel:
            return Verdict(VerdictKind.COMPILER_HANG, detail="compile deadline exceeded"), None
        if outcome.timed_out:
            return (
                Verdict(VerdictKind.RUN_CRASH, detail="run deadline exceeded after compile"),
                None,
            )
        if outcome.exit_code != 0 and not outcome.sentinel:
            return (
                Verdict(
                    VerdictKind.COMPILER_CRASH,
                    detail=outcome.stderr[-2000:] or f"exit {outcome.exit_code}",
                ),
                None,
            )
        if outcome.exit_code != 0:
            return (
                Verdict(
                    VerdictKind.RUN_CRASH,
                    detail=outcome.stderr[-2000:] or f"exit {outcome.exit_code}",
                ),
                None,
            )
        outputs = _load_outputs(case_dir, "compiled_out.json")
        if outputs is None:
            return (
                Verdict(VerdictKind.RUN_CRASH, detail="compiled output unreadable"),
                None,
            )
        return None, outputs

    if compiled_first:
        verdict, compiled_out = compiled_phase()
        if verdict is not None:
            return _verdict_with_fp(verdict, None)
        verdict, eager_out = eager_phase()
        if verdict is not None:
            return _verdict_with_fp(verdict, None)
    else:
        verdict, eager_out = eager_phase()
        if verdict is not None:
            return _verdict_with_fp(verdict, None)
        verdict, compiled_out = compiled_phase()
        if verdict is not None:
            return _verdict_with_fp(verdict, None)

    mismatch = _compare_outputs(compiled_out, eager_out, backend)
    if mismatch is not None:
        i, dtype_tag, diff = mismatch
        v = Verdict(
            VerdictKind.INCONSISTENT,
            detail=f"out{i} ({dtype_tag}) differs; max abs diff {diff}",
            failing_index=i,
            failing_dtype=dtype_tag,
            max_abs_diff=diff,
        )
        return _verdict_with_fp(v, None)
    return Verdict(VerdictKind.PASS)


def run_case(
    case: TestCase,
    backend: BackendConfig,
    case_dir: str,
    compiled_first: bool = False,
) -> Verdict:
    """Write the case to disk and run eager then compiled, mapping the outcome.

    Nonzero exit before the sentinel is a compiler crash, a missed deadline
    before it a compiler hang, failures after it run crashes, and a tolerated
    output comparison failure an inconsistency. Eager-vs-reference mismatch
    flags the case invalid (shim drift guard) and never blames the compiler.
    """
    write_case(case, case_dir, backend)
    return run_case_dir(case_dir, backend, reference=case.reference, compiled_first=compiled_first)


# --- campaign loop ----------------------------------------------------------------


@dataclass
class CaseResult:
    iteration: int
    case_id: str
    kind: str
    fingerprint: str
    duration_s: float
    artifact: str | None

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "case_id": self.case_id,
            "kind": self.kind,
            "fingerprint": self.fingerprint,
            "duration_s": round(self.duration_s, 4),
            "artifact": self.artifact,
        }


@dataclass
class CampaignReport:
    master_seed: int
    iterations: int
    gen_attempts: int = 0
    gen_failures: int = 0
    counts: dict[str, int] = field(default_factory=dict)
    unique_fingerprints: list[str] = field(default_factory=list)
    results: list[CaseResult] = field(default_factory=list)
    wall_s: float = 0.0

    @property
    def throughput(self) -> float:
        return len(self.results) / self.wall_s if self.wall_s > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "iterations": self.iterations,
            "gen_attempts": self.gen_attempts,
            "gen_failures": self.gen_failures,
            "counts": dict(sorted(self.counts.items())),
            "unique_fingerprints": sorted(self.unique_fingerprints),
            "cases_per_second": round(self.throughput, 3),
            "wall_s": round(self.wall_s, 3),
            "results": [r.to_json() for r in self.results],
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


_GEN_RETRIES = 6


def build_iteration_case(config: Config, iteration: int) -> tuple[TestCase | None, int]:
    """Build the case for one iteration; returns (case, attempts_used)."""
    for attempt in range(_GEN_RETRIES):
        seed = splitmix64(config.master_seed, iteration * _GEN_RETRIES + attempt)
        spec = SeedSpec(
            rng_seed=seed,
            num_ops=config.num_ops,
            max_rank=config.max_rank,
            max_extent=config.max_extent,
            input_value_range=config.input_value_range,
        )
        try:
            return make_case(spec, config.mutations_per_case, config.mutation_weights), attempt + 1
        except (GenerationBudgetExhausted, InputSearchFailed):
            continue
    return None, _GEN_RETRIES


def fuzz_loop(config: Config) -> CampaignReport:
    """Generate -> mutate -> differentially run -> triage, until the budget ends."""
    os.makedirs(config.corpus_dir, exist_ok=True)
    started = time.monotonic()
    deadline = started + config.wall_budget_s if config.wall_budget_s else None

    def one_iteration(i: int) -> tuple[CaseResult | None, int]:
        if deadline is not None and time.monotonic() > deadline:
            return None, 0
        t0 = time.monotonic()
        case, attempts = build_iteration_case(config, i)
        if case is None:
            return (
                CaseResult(i, "", "generation-failed", "", time.monotonic() - t0, None),
                attempts,
            )
        with tempfile.TemporaryDirectory(prefix="dynofuzz-case-") as scratch:
            case_dir = os.path.join(scratch, f"case_{case.id}")
            verdict = run_case(case, config.backend, case_dir)
            artifact = None
            if verdict.kind is not VerdictKind.PASS:
                artifact = os.path.join(config.corpus_dir, f"case_{case.id}")
                if not os.path.exists(artifact):
                    shutil.copytree(case_dir, artifact)
                with open(os.path.join(artifact, "verdict.json"), "w", encoding="utf-8") as fh:
                    json.dump(verdict.to_json() | {"iteration": i}, fh, indent=2)
                    fh.write("\n")
        return (
            CaseResult(
                i, case.id, verdict.kind.value, verdict.fingerprint,
                time.monotonic() - t0, artifact,
            ),
            attempts,
        )

    results: list[CaseResult] = []
    attempts_total = 0
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for result, attempts in pool.map(one_iteration, range(config.max_iters)):
                attempts_total += attempts
                if result is not None:
                    results.append(result)
    else:
        for i in range(config.max_iters):
            result, attempts = one_iteration(i)
            attempts_total += attempts
            if result is not None:
                results.append(result)

    results.sort(key=lambda r: r.iteration)
    report = CampaignReport(master_seed=config.master_seed, iterations=len(results))
    report.gen_attempts = attempts_total
    report.gen_failures = attempts_total - sum(1 for r in results if r.case_id)
    for r in results:
        report.counts[r.kind] = report.counts.get(r.kind, 0) + 1
    report.unique_fingerprints = sorted({r.fingerprint for r in results if r.fingerprint})
    report.results = results
    report.wall_s = time.monotonic() - started
    report.save(os.path.join(config.corpus_dir, "campaign.json"))
    return report
