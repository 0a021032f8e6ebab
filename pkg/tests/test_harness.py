import json
import os

import pytest

from dynofuzz import harness
from dynofuzz.config import BackendConfig, Config
from dynofuzz.harness import (
    Verdict,
    VerdictKind,
    build_iteration_case,
    fingerprint,
    fuzz_loop,
    make_case,
    run_case,
    run_case_dir,
    splitmix64,
    write_case,
)
from dynofuzz.generate import SeedSpec
from conftest import stub_backend


@pytest.fixture(scope="module")
def small_case():
    return make_case(SeedSpec(rng_seed=101, num_ops=8), k=3)


class TestVerdictMapping:
    def test_identity_backend_passes(self, small_case, tmp_path):
        v = run_case(small_case, stub_backend(), str(tmp_path / "c"))
        assert v.kind is VerdictKind.PASS
        assert v.fingerprint == ""

    def test_perturbed_output_is_inconsistent(self, small_case, tmp_path):
        v = run_case(small_case, stub_backend("perturb-output"), str(tmp_path / "c"))
        assert v.kind is VerdictKind.INCONSISTENT
        assert v.failing_index == 0
        if small_case.reference[0].dtype.is_float:
            assert v.max_abs_diff == pytest.approx(1.0, rel=0.01)

    def test_compile_crash(self, small_case, tmp_path):
        v = run_case(small_case, stub_backend("crash-at-compile"), str(tmp_path / "c"))
        assert v.kind is VerdictKind.COMPILER_CRASH

    def test_run_crash(self, small_case, tmp_path):
        v = run_case(small_case, stub_backend("crash-at-run"), str(tmp_path / "c"))
        assert v.kind is VerdictKind.RUN_CRASH

    def test_hang_honors_compile_timeout(self, small_case, tmp_path):
        backend = stub_backend(
            "sleep-past-timeout", compile_timeout_s=0.8, run_timeout_s=0.8
        )
        v = run_case(small_case, backend, str(tmp_path / "c"))
        assert v.kind is VerdictKind.COMPILER_HANG

    def test_unavailable_backend(self, small_case, tmp_path):
        backend = BackendConfig(command=["/nonexistent/runner-binary"])
        with pytest.raises(harness.BackendUnavailable):
            run_case(small_case, backend, str(tmp_path / "c"))


class TestFingerprint:
    def test_normalization_strips_noise(self):
        a = Verdict(
            VerdictKind.COMPILER_CRASH,
            detail="SomeError: failed at /tmp/tmpabc123/case_9/program.py:33 addr 0xdeadbeef",
        )
        b = Verdict(
            VerdictKind.COMPILER_CRASH,
            detail="SomeError: failed at /tmp/tmpzz9/other/program.py:91 addr 0x1234",
        )
        assert fingerprint(a) == fingerprint(b)

    def test_line_numbers_stripped(self):
        a = Verdict(VerdictKind.RUN_CRASH, detail='File "x.py", line 10, boom')
        b = Verdict(VerdictKind.RUN_CRASH, detail='File "x.py", line 99, boom')
        assert fingerprint(a) == fingerprint(b)

    def test_kinds_distinguish(self):
        hang = Verdict(VerdictKind.COMPILER_HANG, detail="x")
        crash = Verdict(VerdictKind.RUN_CRASH, detail="x")
        assert fingerprint(hang) != fingerprint(crash)

    def test_inconsistent_keys_on_index_and_dtype(self):
        v = Verdict(VerdictKind.INCONSISTENT, failing_index=2, failing_dtype="f32")
        assert fingerprint(v) == "inconsistent|out2|f32"

    def test_pass_has_empty_fingerprint(self):
        assert fingerprint(Verdict(VerdictKind.PASS)) == ""


class TestCaseDirectory:
    def test_layout_contract(self, small_case, tmp_path):
        d = str(tmp_path / "case")
        write_case(small_case, d, BackendConfig())
        assert os.path.exists(os.path.join(d, "program.py"))
        assert os.path.exists(os.path.join(d, "inputs.json"))
        meta = json.load(open(os.path.join(d, "meta.json")))
        assert meta["params"] == [p.name for p in small_case.program.params]
        assert meta["return_arity"] == len(small_case.program.returns)
        assert set(meta["dtypes"]) == set(meta["params"])
        assert "tolerances" in meta

    def test_persisted_case_replays_same_kind(self, small_case, tmp_path):
        d = str(tmp_path / "case")
        backend = stub_backend("perturb-output")
        v1 = run_case(small_case, backend, d)
        v2 = run_case_dir(d, backend)
        assert v1.kind is v2.kind is VerdictKind.INCONSISTENT
        assert v1.fingerprint == v2.fingerprint

    def test_program_is_importable_python(self, small_case, tmp_path):
        d = str(tmp_path / "case")
        write_case(small_case, d, BackendConfig())
        src = open(os.path.join(d, "program.py")).read()
        compile(src, "program.py", "exec")


class TestSplitmix:
    def test_deterministic_and_spread(self):
        a = [splitmix64(1, i) for i in range(100)]
        assert a == [splitmix64(1, i) for i in range(100)]
        assert len(set(a)) == 100


class TestFuzzLoop:
    def test_identity_campaign_all_pass_no_artifacts(self, tmp_path):
        cfg = Config(
            master_seed=5,
            num_ops=6,
            mutations_per_case=2,
            max_iters=5,
            corpus_dir=str(tmp_path / "corpus"),
            backend=stub_backend(),
        )
        report = fuzz_loop(cfg)
        assert report.counts == {"pass": 5}
        assert report.unique_fingerprints == []
        entries = [p for p in os.listdir(cfg.corpus_dir) if p.startswith("case_")]
        assert entries == []
        assert os.path.exists(os.path.join(cfg.corpus_dir, "campaign.json"))

    def test_injector_campaign_recorded(self, tmp_path):
        cfg = Config(
            master_seed=5,
            num_ops=6,
            mutations_per_case=2,
            max_iters=4,
            corpus_dir=str(tmp_path / "corpus"),
            backend=stub_backend("crash-at-compile"),
        )
        report = fuzz_loop(cfg)
        assert report.counts.get("compiler-crash") == 4
        assert len(report.unique_fingerprints) == 1
        artifacts = [p for p in os.listdir(cfg.corpus_dir) if p.startswith("case_")]
        assert len(artifacts) == 4
        verdict = json.load(
            open(os.path.join(cfg.corpus_dir, artifacts[0], "verdict.json"))
        )
        assert verdict["kind"] == "compiler-crash"

    def test_case_stream_deterministic(self, tmp_path):
        ids = []
        for run in range(2):
            cfg = Config(
                master_seed=77,
                num_ops=6,
                mutations_per_case=2,
                max_iters=4,
                corpus_dir=str(tmp_path / f"corpus{run}"),
                backend=stub_backend(),
            )
            report = fuzz_loop(cfg)
            ids.append([r.case_id for r in report.results])
        assert ids[0] == ids[1]

    def test_workers_match_sequential_stream(self, tmp_path):
        base = dict(master_seed=9, num_ops=6, mutations_per_case=2, max_iters=4)
        seq = fuzz_loop(
            Config(**base, corpus_dir=str(tmp_path / "s"), backend=stub_backend())
        )
        par = fuzz_loop(
            Config(**base, corpus_dir=str(tmp_path / "p"), backend=stub_backend(), workers=3)
        )
        assert [r.case_id for r in seq.results] == [r.case_id for r in par.results]
