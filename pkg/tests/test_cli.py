import json
import os
import sys

import pytest

from dynofuzz import cli
from dynofuzz.config import BackendConfig, Config, DEFAULT_TOLERANCES


def stub_cmd(*fault) -> str:
    parts = [sys.executable, "-m", "dynofuzz.stubrunner"]
    if fault:
        parts += ["--fault", *fault]
    return " ".join(parts)


class TestConfig:
    def test_roundtrip_lossless(self):
        cfg = Config(
            master_seed=9,
            num_ops=11,
            mutations_per_case=4,
            mutation_weights={"tcb": 2.0, "functionalize": 1.0},
            backend=BackendConfig(command=["x", "y"], compile_timeout_s=5.0),
            corpus_dir="zzz",
            workers=2,
            max_iters=7,
            wall_budget_s=1.5,
        )
        again = Config.from_json(json.loads(json.dumps(cfg.to_json())))
        assert again.to_json() == cfg.to_json()

    def test_validation(self):
        with pytest.raises(ValueError):
            Config(num_ops=0)
        with pytest.raises(ValueError):
            Config(mutation_weights={"tcb": 0.0})
        with pytest.raises(ValueError):
            BackendConfig(compile_timeout_s=0)

    def test_runner_env_override(self, monkeypatch):
        backend = BackendConfig(command=["original"])
        monkeypatch.setenv("TORCHPROBE_RUNNER", "python -m other.runner --flag")
        assert backend.resolved_command() == ["python", "-m", "other.runner", "--flag"]
        monkeypatch.delenv("TORCHPROBE_RUNNER")
        assert backend.resolved_command() == ["original"]

    def test_default_tolerances(self):
        assert DEFAULT_TOLERANCES["f32"] == (1e-3, 1e-3)
        assert DEFAULT_TOLERANCES["f64"] == (1e-6, 1e-6)


class TestCli:
    def test_gen_stable_case_id(self, tmp_path, capsys):
        args = ["gen", "--out-dir", str(tmp_path / "a"), "--master-seed", "4",
                "--num-ops", "6", "--k", "2"]
        assert cli.main(args) == 0
        id1 = capsys.readouterr().out.strip()
        assert cli.main(["gen", "--out-dir", str(tmp_path / "b"),
                         "--master-seed", "4", "--num-ops", "6", "--k", "2"]) == 0
        id2 = capsys.readouterr().out.strip()
        assert id1 == id2
        assert os.path.exists(tmp_path / "a" / f"case_{id1}" / "program.py")

    def test_gen_k_zero_is_pure_ssa(self, tmp_path, capsys):
        assert cli.main(["gen", "--out-dir", str(tmp_path), "--master-seed", "4",
                         "--num-ops", "6", "--k", "0"]) == 0
        cid = capsys.readouterr().out.strip()
        src = open(tmp_path / f"case_{cid}" / "program.py").read()
        for construct in ("for ", "if ", "def subfunc", "range("):
            assert construct not in src
        prov = json.load(open(tmp_path / f"case_{cid}" / "provenance.json"))
        assert prov["mutations"] == []

    def test_gen_emitter_roundtrip(self, tmp_path, capsys):
        # provenance replay must regenerate program.py byte-for-byte
        assert cli.main(["gen", "--out-dir", str(tmp_path), "--master-seed", "11",
                         "--num-ops", "8", "--k", "3"]) == 0
        cid = capsys.readouterr().out.strip()
        case_dir = str(tmp_path / f"case_{cid}")
        rebuilt = cli._case_from_dir(case_dir)  # raises on mismatch
        assert rebuilt.id == cid

    def test_fuzz_exit_codes(self, tmp_path, capsys, monkeypatch):
        base = ["fuzz", "--master-seed", "2", "--num-ops", "6", "--k", "2",
                "--max-iters", "3"]
        code = cli.main(base + ["--corpus-dir", str(tmp_path / "c1"),
                                "--runner", stub_cmd()])
        assert code == 0
        code = cli.main(base + ["--corpus-dir", str(tmp_path / "c2"),
                                "--runner", stub_cmd("perturb-output")])
        assert code == 2
        capsys.readouterr()

    def test_fuzz_max_iters_exact(self, tmp_path, capsys):
        assert cli.main(["fuzz", "--master-seed", "2", "--num-ops", "6", "--k", "1",
                         "--max-iters", "4", "--corpus-dir", str(tmp_path / "c"),
                         "--runner", stub_cmd()]) == 0
        campaign = json.load(open(tmp_path / "c" / "campaign.json"))
        assert campaign["iterations"] == 4
        capsys.readouterr()

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg = Config(master_seed=1, num_ops=6, mutations_per_case=1, max_iters=9,
                     backend=BackendConfig(command=stub_cmd().split()))
        cfg_path.write_text(json.dumps(cfg.to_json()))
        assert cli.main(["fuzz", "--config", str(cfg_path), "--max-iters", "2",
                         "--corpus-dir", str(tmp_path / "c")]) == 0
        campaign = json.load(open(tmp_path / "c" / "campaign.json"))
        assert campaign["iterations"] == 2  # flag beat the file
        capsys.readouterr()

    def test_replay_prints_kind(self, tmp_path, capsys):
        assert cli.main(["gen", "--out-dir", str(tmp_path), "--master-seed", "4",
                         "--num-ops", "6", "--k", "1"]) == 0
        cid = capsys.readouterr().out.strip()
        assert cli.main(["replay", "--case-dir", str(tmp_path / f"case_{cid}"),
                         "--runner", stub_cmd()]) == 0
        out = capsys.readouterr().out
        assert "pass" in out

    def test_reduce_cli_and_exit3(self, tmp_path, capsys):
        # make a failing corpus with one crash case
        assert cli.main(["fuzz", "--master-seed", "6", "--num-ops", "8", "--k", "2",
                         "--max-iters", "1", "--corpus-dir", str(tmp_path / "c"),
                         "--runner", stub_cmd("crash-at-compile")]) == 2
        capsys.readouterr()
        case_dir = next(
            str(tmp_path / "c" / p)
            for p in os.listdir(tmp_path / "c")
            if p.startswith("case_")
        )
        assert cli.main(["reduce", "--case-dir", case_dir,
                         "--out-dir", str(tmp_path / "out"),
                         "--runner", stub_cmd("crash-at-compile")]) == 0
        capsys.readouterr()
        # against the identity runner the fingerprint is not reproducible
        assert cli.main(["reduce", "--case-dir", case_dir,
                         "--out-dir", str(tmp_path / "out2"),
                         "--runner", stub_cmd()]) == 3
        capsys.readouterr()

    def test_report_renders_files(self, tmp_path, capsys):
        assert cli.main(["fuzz", "--master-seed", "2", "--num-ops", "6", "--k", "1",
                         "--max-iters", "2", "--corpus-dir", str(tmp_path / "c"),
                         "--runner", stub_cmd("perturb-output")]) == 2
        capsys.readouterr()
        assert cli.main(["report", "--campaign", str(tmp_path / "c"),
                         "--out-dir", str(tmp_path / "rep")]) == 0
        capsys.readouterr()
        for name in ("cases.csv", "summary.csv", "verdicts.png", "discovery.png"):
            assert os.path.exists(tmp_path / "rep" / name), name
        header = open(tmp_path / "rep" / "cases.csv").readline().strip()
        assert header == "iteration,case_id,kind,fingerprint,duration_s,artifact"

    def test_reduced_artifact_is_reconstructible_and_rereducible(self, tmp_path, capsys):
        # reduce a crash case, then reduce the reduced artifact again: the
        # second pass must reconstruct it from provenance and reach a fixpoint
        assert cli.main(["fuzz", "--master-seed", "8", "--num-ops", "8", "--k", "2",
                         "--max-iters", "1", "--corpus-dir", str(tmp_path / "c"),
                         "--runner", stub_cmd("crash-at-compile")]) == 2
        capsys.readouterr()
        case_dir = next(
            str(tmp_path / "c" / p)
            for p in os.listdir(tmp_path / "c")
            if p.startswith("case_")
        )
        assert cli.main(["reduce", "--case-dir", case_dir,
                         "--out-dir", str(tmp_path / "r1"),
                         "--runner", stub_cmd("crash-at-compile")]) == 0
        out1 = capsys.readouterr().out.strip().splitlines()[-1]
        assert cli.main(["reduce", "--case-dir", out1,
                         "--out-dir", str(tmp_path / "r2"),
                         "--runner", stub_cmd("crash-at-compile")]) == 0
        out2 = capsys.readouterr().out.strip().splitlines()[-1]
        assert os.path.basename(out1) == os.path.basename(out2)  # fixpoint id
        assert (open(os.path.join(out1, "program.py")).read()
                == open(os.path.join(out2, "program.py")).read())
