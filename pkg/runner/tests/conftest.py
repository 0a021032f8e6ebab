import subprocess
import sys

import pytest

GEN_CMD = [sys.executable, "-m", "dynofuzz.cli", "gen"]


def gen_case(out_dir: str, master_seed: int, num_ops: int = 10, k: int = 3) -> str:
    """Generate one case directory through the fuzzer's CLI (external surface)."""
    proc = subprocess.run(
        GEN_CMD
        + [
            "--out-dir", out_dir,
            "--master-seed", str(master_seed),
            "--num-ops", str(num_ops),
            "--k", str(k),
        ],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    case_id = proc.stdout.strip()
    return f"{out_dir}/case_{case_id}"


@pytest.fixture(scope="session")
def case_dir(tmp_path_factory) -> str:
    return gen_case(str(tmp_path_factory.mktemp("cases")), master_seed=5)
