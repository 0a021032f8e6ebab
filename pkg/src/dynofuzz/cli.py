"""Command-line surface: gen / fuzz / replay / reduce / report.

Configuration is a single JSON document; every field has a mirroring flag and
flags override file values. The TORCHPROBE_RUNNER environment variable
overrides the runner command last.

Exit codes: 0 success, 1 usage/config errors, 2 fuzz campaign found non-pass
verdicts, 3 reduction target not reproducible.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys

from . import generate, harness, ir, mutate, reducer, report
from .config import Config
from .tensors import load_archive


def _load_config(args: argparse.Namespace) -> Config:
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            cfg = Config.from_json(json.load(fh))
    else:
        cfg = Config()
    overrides = {
        "master_seed": getattr(args, "master_seed", None),
        "num_ops": getattr(args, "num_ops", None),
        "mutations_per_case": getattr(args, "k", None),
        "corpus_dir": getattr(args, "corpus_dir", None),
        "workers": getattr(args, "workers", None),
        "max_iters": getattr(args, "max_iters", None),
        "wall_budget_s": getattr(args, "wall_budget", None),
    }
    cfg = cfg.with_overrides(**overrides)
    backend = cfg.backend
    if getattr(args, "runner", None):
        backend.command = shlex.split(args.runner)
    if getattr(args, "compile_timeout", None) is not None:
        backend.compile_timeout_s = args.compile_timeout
    if getattr(args, "run_timeout", None) is not None:
        backend.run_timeout_s = args.run_timeout
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--num-ops", type=int, dest="num_ops")
    p.add_argument("--k", type=int, dest="k", help="mutations per case")
    p.add_argument("--corpus-dir", dest="corpus_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--wall-budget", type=float, dest="wall_budget")
    p.add_argument("--runner", help="runner command (overridden by TORCHPROBE_RUNNER)")
    p.add_argument("--compile-timeout", type=float, dest="compile_timeout")
    p.add_argument("--run-timeout", type=float, dest="run_timeout")


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    case, _ = harness.build_iteration_case(cfg, args.iteration)
    if case is None:
        print("generation failed: budget exhausted", file=sys.stderr)
        return 1
    case_dir = os.path.join(args.out_dir, f"case_{case.id}")
    harness.write_case(case, case_dir, cfg.backend)
    print(case.id)
    return 0


def cmd_fuzz(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    rep = harness.fuzz_loop(cfg)
    print(
        f"iterations={rep.iterations} attempts={rep.gen_attempts} "
        f"gen_failures={rep.gen_failures} wall={rep.wall_s:.1f}s "
        f"({rep.throughput:.2f} cases/s)"
    )
    for kind, count in sorted(rep.counts.items()):
        print(f"  {kind}: {count}")
    print(f"  unique fingerprints: {len(rep.unique_fingerprints)}")
    non_pass = sum(c for k, c in rep.counts.items() if k != harness.VerdictKind.PASS.value)
    return 2 if non_pass else 0


def _case_from_dir(case_dir: str) -> harness.TestCase:
    from dynofuzz import interp

    with open(os.path.join(case_dir, "provenance.json"), encoding="utf-8") as fh:
        prov = json.load(fh)
    spec = generate.SeedSpec.from_json(prov["seed_spec"])
    records = [mutate.MutationRecord.from_json(r) for r in prov["mutations"]]
    seed_prog, seed_inputs = generate.build_seed(spec)
    program = mutate.replay(seed_prog, records)
    source = ir.emit_module(program)
    case = harness.TestCase(
        id=prov["case_id"],
        program=program,
        inputs=seed_inputs,
        seed_spec=spec,
        records=records,
        source=source,
        reference=interp.run_program(program, seed_inputs),
    )
    if "kept_indices" in prov:
        snapshots = interp.trace_top_env(program, seed_inputs)
        case = reducer.build_candidate(case, set(prov["kept_indices"]), snapshots)
        if case is None:
            raise RuntimeError("persisted kept_indices no longer build a valid case")
    with open(os.path.join(case_dir, "program.py"), encoding="utf-8") as fh:
        on_disk = fh.read()
    if case.source != on_disk:
        raise RuntimeError("replayed program does not match program.py on disk")
    with open(os.path.join(case_dir, "inputs.json"), encoding="utf-8") as fh:
        inputs = load_archive(fh.read())
    if inputs != case.inputs:
        raise RuntimeError("replayed inputs do not match inputs.json on disk")
    return case


def cmd_replay(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    verdict = harness.run_case_dir(args.case_dir, cfg.backend)
    print(f"{verdict.kind.value}" + (f"  [{verdict.fingerprint}]" if verdict.fingerprint else ""))
    persisted = os.path.join(args.case_dir, "verdict.json")
    if os.path.exists(persisted):
        with open(persisted, encoding="utf-8") as fh:
            old = json.load(fh)
        match = "matches" if old["kind"] == verdict.kind.value else "DIFFERS FROM"
        print(f"persisted verdict {match} replay: {old['kind']}")
    return 0


def cmd_reduce(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    case = _case_from_dir(args.case_dir)
    target_fp = args.fingerprint
    if not target_fp:
        with open(os.path.join(args.case_dir, "verdict.json"), encoding="utf-8") as fh:
            target_fp = json.load(fh)["fingerprint"]
    try:
        reduced, stats = reducer.reduce_case(case, cfg.backend, target_fp)
    except harness.NotReproducible as e:
        print(f"not reproducible: {e}", file=sys.stderr)
        return 3
    out_dir = os.path.join(args.out_dir, f"case_{reduced.id}")
    harness.write_case(reduced, out_dir, cfg.backend)
    with open(os.path.join(out_dir, "verdict.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"kind": target_fp.split("|", 1)[0], "fingerprint": target_fp,
             "detail": "reduced artifact", "reduced_from": case.id},
            fh, indent=2,
        )
        fh.write("\n")
    print(
        f"{stats.original_statements} -> {stats.reduced_statements} statements "
        f"({stats.candidates_tried} candidates, {stats.runs} runs)"
    )
    print(out_dir)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    written = report.render_report(args.campaign, args.out_dir)
    for path in written:
        print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("DYNOFUZZ_LOGLEVEL", "WARNING"))
    parser = argparse.ArgumentParser(
        prog="dynofuzz",
        description="differential fuzzer for dynamic tensor-program compilers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate one mutated case to disk")
    _add_config_flags(p_gen)
    p_gen.add_argument("--out-dir", required=True)
    p_gen.add_argument("--iteration", type=int, default=0)
    p_gen.set_defaults(fn=cmd_gen)

    p_fuzz = sub.add_parser("fuzz", help="run a fuzzing campaign")
    _add_config_flags(p_fuzz)
    p_fuzz.set_defaults(fn=cmd_fuzz)

    p_replay = sub.add_parser("replay", help="re-run a persisted case")
    _add_config_flags(p_replay)
    p_replay.add_argument("--case-dir", required=True)
    p_replay.set_defaults(fn=cmd_replay)

    p_reduce = sub.add_parser("reduce", help="minimize a persisted failing case")
    _add_config_flags(p_reduce)
    p_reduce.add_argument("--case-dir", required=True)
    p_reduce.add_argument("--out-dir", required=True)
    p_reduce.add_argument("--fingerprint", help="target fingerprint (default: persisted)")
    p_reduce.set_defaults(fn=cmd_reduce)

    p_report = sub.add_parser("report", help="render campaign tables and figures")
    p_report.add_argument("--campaign", required=True, help="campaign.json or corpus dir")
    p_report.add_argument("--out-dir", required=True)
    p_report.set_defaults(fn=cmd_report)

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except harness.BackendUnavailable as e:
        print(f"backend unavailable: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
