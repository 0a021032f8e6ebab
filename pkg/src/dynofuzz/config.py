"""Campaign and backend configuration with lossless JSON round-tripping."""

from __future__ import annotations

import os
import shlex
import sys
from dataclasses import dataclass, field, replace


DEFAULT_TOLERANCES: dict[str, tuple[float, float]] = {
    "f32": (1e-3, 1e-3),
    "f64": (1e-6, 1e-6),
    "i64": (0.0, 0.0),
    "bool": (0.0, 0.0),
}

DEFAULT_ENV_ALLOWLIST: tuple[str, ...] = (
    "PATH",
    "HOME",
    "PYTHONPATH",
    "PYTHONHOME",
    "VIRTUAL_ENV",
    "LD_LIBRARY_PATH",
    "TMPDIR",
    "TEMP",
    "TMP",
    "LANG",
    "LC_ALL",
    "DYNOFUZZ_FAULT",
    "DYNOFUZZ_FAULT_TOKEN",
    "TORCHRUNNER_BACKEND",
    "TORCH_*",
)

RUNNER_ENV_VAR = "TORCHPROBE_RUNNER"


def default_runner_command() -> list[str]:
    return [sys.executable, "-m", "dynofuzz.stubrunner"]


@dataclass
class BackendConfig:
    command: list[str] = field(default_factory=default_runner_command)
    compile_timeout_s: float = 120.0
    run_timeout_s: float = 60.0
    tolerances: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_TOLERANCES)
    )
    workdir: str | None = None
    env_allowlist: tuple[str, ...] = DEFAULT_ENV_ALLOWLIST

    def __post_init__(self) -> None:
        if self.compile_timeout_s <= 0 or self.run_timeout_s <= 0:
            raise ValueError("timeouts must be positive")

    def resolved_command(self) -> list[str]:
        override = os.environ.get(RUNNER_ENV_VAR)
        if override:
            return shlex.split(override)
        return list(self.command)

    def subprocess_env(self) -> dict[str, str]:
        env: dict[str, str] = {}
        prefixes = tuple(p[:-1] for p in self.env_allowlist if p.endswith("*"))
        names = {p for p in self.env_allowlist if not p.endswith("*")}
        for key, value in os.environ.items():
            if key in names or (prefixes and key.startswith(prefixes)):
                env[key] = value
        return env

    def tolerance_for(self, dtype_tag: str) -> tuple[float, float]:
        rtol, atol = self.tolerances.get(dtype_tag, (0.0, 0.0))
        return float(rtol), float(atol)

    def to_json(self) -> dict:
        return {
            "command": list(self.command),
            "compile_timeout_s": self.compile_timeout_s,
            "run_timeout_s": self.run_timeout_s,
            "tolerances": {k: list(v) for k, v in self.tolerances.items()},
            "workdir": self.workdir,
            "env_allowlist": list(self.env_allowlist),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BackendConfig":
        return cls(
            command=list(doc.get("command") or default_runner_command()),
            compile_timeout_s=float(doc.get("compile_timeout_s", 120.0)),
            run_timeout_s=float(doc.get("run_timeout_s", 60.0)),
            tolerances={
                k: (float(v[0]), float(v[1]))
                for k, v in (doc.get("tolerances") or DEFAULT_TOLERANCES).items()
            },
            workdir=doc.get("workdir"),
            env_allowlist=tuple(doc.get("env_allowlist") or DEFAULT_ENV_ALLOWLIST),
        )


DEFAULT_MUTATION_WEIGHTS: dict[str, float] = {
    "op_resolution": 1.0,
    "mutate_then_recover": 1.0,
    "functionalize": 1.0,
    "tcb": 1.0,
}


@dataclass
class Config:
    master_seed: int = 0
    num_ops: int = 20
    mutations_per_case: int = 3
    mutation_weights: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_MUTATION_WEIGHTS)
    )
    max_rank: int = 4
    max_extent: int = 8
    input_value_range: tuple[float, float] = (-4.0, 4.0)
    backend: BackendConfig = field(default_factory=BackendConfig)
    corpus_dir: str = "corpus"
    workers: int = 1
    max_iters: int = 100
    wall_budget_s: float | None = None

    def __post_init__(self) -> None:
        if self.num_ops < 1 or self.workers < 1 or self.max_iters < 1:
            raise ValueError("num_ops, workers, and max_iters must be positive")
        if self.mutations_per_case < 0:
            raise ValueError("mutations_per_case must be non-negative")
        if sum(self.mutation_weights.values()) <= 0:
            raise ValueError("mutation weights must sum to a positive value")

    def with_overrides(self, **kwargs) -> "Config":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_json(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "num_ops": self.num_ops,
            "mutations_per_case": self.mutations_per_case,
            "mutation_weights": dict(self.mutation_weights),
            "max_rank": self.max_rank,
            "max_extent": self.max_extent,
            "input_value_range": list(self.input_value_range),
            "backend": self.backend.to_json(),
            "corpus_dir": self.corpus_dir,
            "workers": self.workers,
            "max_iters": self.max_iters,
            "wall_budget_s": self.wall_budget_s,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Config":
        return cls(
            master_seed=int(doc.get("master_seed", 0)),
            num_ops=int(doc.get("num_ops", 20)),
            mutations_per_case=int(doc.get("mutations_per_case", 3)),
            mutation_weights=dict(doc.get("mutation_weights") or DEFAULT_MUTATION_WEIGHTS),
            max_rank=int(doc.get("max_rank", 4)),
            max_extent=int(doc.get("max_extent", 8)),
            input_value_range=tuple(doc.get("input_value_range") or (-4.0, 4.0)),
            backend=BackendConfig.from_json(doc.get("backend") or {}),
            corpus_dir=str(doc.get("corpus_dir", "corpus")),
            workers=int(doc.get("workers", 1)),
            max_iters=int(doc.get("max_iters", 100)),
            wall_budget_s=(
                None if doc.get("wall_budget_s") is None else float(doc["wall_budget_s"])
            ),
        )
