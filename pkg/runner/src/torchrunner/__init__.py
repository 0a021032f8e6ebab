"""Execution endpoint for fuzzer case directories.

Loads ``program.py``/``inputs.json``/``meta.json`` from a case directory, runs
the program eagerly or under the framework compiler, and writes the returned
tensors in the shared archive format. The shim performs no numerical work of
its own beyond (de)serialization; all semantics come from the loaded program.

Wire format (bit-exact contract with the fuzzer):
  {"tensors": {"<name>": {"dtype": "f32|f64|i64|bool", "shape": [..],
               "data": [..]}}}
with float elements as shortest round-trip decimal strings, row-major.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

SENTINEL = "__COMPILE_OK__"

_NP_DTYPES = {
    "f32": np.dtype(np.float32),
    "f64": np.dtype(np.float64),
    "i64": np.dtype(np.int64),
    "bool": np.dtype(np.bool_),
}
_TAGS = {v: k for k, v in _NP_DTYPES.items()}


def _format_float(v) -> str:
    return np.format_float_positional(v, unique=True, trim="0")


def load_archive(text: str) -> dict[str, np.ndarray]:
    doc = json.loads(text)
    out: dict[str, np.ndarray] = {}
    for name, entry in doc["tensors"].items():
        dtype = _NP_DTYPES[entry["dtype"]]
        shape = tuple(int(d) for d in entry["shape"])
        data = entry["data"]
        if dtype.kind == "f":
            arr = np.asarray([float(s) for s in data], dtype=np.float64).astype(dtype)
        else:
            arr = np.asarray(data, dtype=dtype)
        out[name] = arr.reshape(shape)
    return out


def dump_archive(tensors: dict[str, np.ndarray]) -> str:
    entries = {}
    for name, arr in sorted(tensors.items()):
        tag = _TAGS[arr.dtype]
        flat = arr.reshape(-1)
        if arr.dtype.kind == "f":
            data = [_format_float(v) for v in flat]
        else:
            data = flat.tolist()
        entries[name] = {"dtype": tag, "shape": list(arr.shape), "data": data}
    return json.dumps({"tensors": entries}, indent=2, sort_keys=True) + "\n"


@dataclass
class CaseManifest:
    params: list[str]
    return_arity: int
    dtypes: dict[str, str]
    tolerances: dict[str, list[float]]

    @classmethod
    def load(cls, case_dir: str) -> "CaseManifest":
        with open(os.path.join(case_dir, "meta.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        return cls(
            params=list(meta["params"]),
            return_arity=int(meta["return_arity"]),
            dtypes=dict(meta["dtypes"]),
            tolerances=dict(meta.get("tolerances", {})),
        )


def load_case(case_dir: str):
    """Program callable plus ordered input arrays for one case directory."""
    manifest = CaseManifest.load(case_dir)
    src_path = os.path.join(case_dir, "program.py")
    with open(src_path, encoding="utf-8") as fh:
        source = fh.read()
    with open(os.path.join(case_dir, "inputs.json"), encoding="utf-8") as fh:
        archive = load_archive(fh.read())
    namespace: dict = {}
    exec(compile(source, src_path, "exec"), namespace)
    arrays = [archive[name] for name in manifest.params]
    return manifest, namespace["f"], arrays


def run(case_dir: str, mode: str, out_path: str) -> None:
    """Execute one case; in compiled mode print the sentinel after the first
    successful compiled invocation (on cloned inputs), then run for real."""
    import torch

    manifest, f, arrays = load_case(case_dir)
    args = [torch.from_numpy(arr.copy()) for arr in arrays]

    if mode == "compiled":
        backend = os.environ.get("TORCHRUNNER_BACKEND", "inductor")
        compiled = torch.compile(f, backend=backend)
        warm_args = [t.clone() for t in args]
        compiled(*warm_args)
        print(SENTINEL, flush=True)
        outputs = compiled(*args)
    elif mode == "eager":
        outputs = f(*args)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if not isinstance(outputs, tuple):
        outputs = (outputs,)
    if len(outputs) != manifest.return_arity:
        raise RuntimeError(
            f"program returned {len(outputs)} values, manifest says {manifest.return_arity}"
        )
    named = {
        f"out{i}": out.detach().cpu().numpy() for i, out in enumerate(outputs)
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(dump_archive(named))
