import json
import os
import subprocess
import sys

import numpy as np
import pytest

import torchrunner
from torchrunner import SENTINEL, CaseManifest, dump_archive, load_archive, run

from conftest import gen_case


def invoke(case_dir: str, mode: str, out: str, env: dict | None = None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "torchrunner", "--case", case_dir, "--mode", mode, "--out", out],
        capture_output=True,
        text=True,
        timeout=300,
        env=full_env,
    )


class TestArchive:
    def test_roundtrip(self):
        tensors = {
            "a": np.asarray([[0.1, -3.5e8]], dtype=np.float32),
            "b": np.asarray([1.0, -0.0], dtype=np.float64),
            "c": np.asarray([2**40, -7], dtype=np.int64),
            "d": np.asarray([True, False]),
        }
        again = load_archive(dump_archive(tensors))
        for k, arr in tensors.items():
            assert again[k].dtype == arr.dtype
            assert again[k].tobytes() == arr.tobytes()

    def test_wire_schema(self):
        doc = json.loads(dump_archive({"x": np.asarray([1.5], dtype=np.float32)}))
        entry = doc["tensors"]["x"]
        assert entry["dtype"] == "f32"
        assert entry["shape"] == [1]
        assert entry["data"] == ["1.5"]

    def test_reads_fuzzer_written_inputs(self, case_dir):
        archive = load_archive(open(os.path.join(case_dir, "inputs.json")).read())
        manifest = CaseManifest.load(case_dir)
        assert set(manifest.params) <= set(archive)
        for name in manifest.params:
            assert archive[name].dtype == {"f32": np.float32, "f64": np.float64,
                                           "i64": np.int64, "bool": np.bool_}[manifest.dtypes[name]]


class TestEagerMode:
    def test_matches_reference_within_tolerance(self, case_dir, tmp_path):
        out = str(tmp_path / "eager.json")
        proc = invoke(case_dir, "eager", out)
        assert proc.returncode == 0, proc.stderr
        assert SENTINEL not in proc.stdout
        got = load_archive(open(out).read())
        ref = load_archive(open(os.path.join(case_dir, "reference.json")).read())
        assert set(got) == set(ref)
        for k in ref:
            g, r = got[k], ref[k]
            assert g.shape == r.shape and g.dtype == r.dtype
            if r.dtype.kind == "f":
                assert np.allclose(g, r, rtol=1e-5, atol=1e-6), k
            else:
                assert (g == r).all(), k


class TestCompiledMode:
    def test_sentinel_then_outputs(self, case_dir, tmp_path):
        out = str(tmp_path / "compiled.json")
        proc = invoke(case_dir, "compiled", out, env={"TORCHRUNNER_BACKEND": "eager"})
        assert proc.returncode == 0, proc.stderr
        lines = [l for l in proc.stdout.splitlines() if l.strip()]
        assert lines and lines[0].strip() == SENTINEL
        assert os.path.exists(out)

    def test_identity_compile_is_bit_identical_to_eager(self, case_dir, tmp_path, monkeypatch):
        # monkey-patch the compile entry point to identity: same code path
        import torch

        monkeypatch.setattr(torch, "compile", lambda f, backend=None: f)
        eager_out = str(tmp_path / "eager.json")
        compiled_out = str(tmp_path / "compiled.json")
        run(case_dir, "eager", eager_out)
        run(case_dir, "compiled", compiled_out)
        a = load_archive(open(eager_out).read())
        b = load_archive(open(compiled_out).read())
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()

    def test_bad_backend_fails_before_sentinel(self, case_dir, tmp_path):
        proc = invoke(
            case_dir, "compiled", str(tmp_path / "o.json"),
            env={"TORCHRUNNER_BACKEND": "definitely-not-a-backend"},
        )
        assert proc.returncode != 0
        assert SENTINEL not in proc.stdout


class TestErrorPaths:
    def test_malformed_inputs_exit_nonzero_before_sentinel(self, case_dir, tmp_path):
        broken = tmp_path / "broken"
        broken.mkdir()
        for name in ("program.py", "meta.json"):
            (broken / name).write_text(open(os.path.join(case_dir, name)).read())
        (broken / "inputs.json").write_text("{not json")
        proc = invoke(str(broken), "compiled", str(tmp_path / "o.json"))
        assert proc.returncode != 0
        assert SENTINEL not in proc.stdout
        assert proc.stderr  # traceback present

    def test_unknown_mode_rejected(self, case_dir, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "torchrunner", "--case", case_dir,
             "--mode", "turbo", "--out", str(tmp_path / "o.json")],
            capture_output=True, text=True,
        )
        assert proc.returncode != 0

    def test_input_mutation_does_not_leak_across_calls(self, tmp_path):
        # programs mutate input tensors in place but restore them; running
        # twice in one process from fresh arrays must agree
        case = gen_case(str(tmp_path), master_seed=33, num_ops=8, k=4)
        out1, out2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        run(case, "eager", out1)
        run(case, "eager", out2)
        a = load_archive(open(out1).read())
        b = load_archive(open(out2).read())
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()
