import sys

import pytest

from dynofuzz.config import BackendConfig
from dynofuzz.generate import SeedSpec, build_seed
from dynofuzz.tensors import DType, TensorValue


def stub_backend(*fault_args: str, **kwargs) -> BackendConfig:
    cmd = [sys.executable, "-m", "dynofuzz.stubrunner"]
    if fault_args:
        cmd += ["--fault", fault_args[0], *fault_args[1:]]
    return BackendConfig(command=cmd, **kwargs)


@pytest.fixture
def seed_case():
    """Deterministic (program, inputs) seed pairs by seed number."""

    def make(seed: int = 0, num_ops: int = 12, **kwargs):
        return build_seed(SeedSpec(rng_seed=seed, num_ops=num_ops, **kwargs))

    return make


def f32(values) -> TensorValue:
    return TensorValue.of(DType.F32, values)


def f64(values) -> TensorValue:
    return TensorValue.of(DType.F64, values)


def i64(values) -> TensorValue:
    return TensorValue.of(DType.I64, values)
