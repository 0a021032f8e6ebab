"""Self-contained execution endpoint backed by the reference kernels.

Loads a case directory, executes the emitted program under a numpy-backed
stand-in for the target framework (so the real Python scoping, closure,
hoisting, and in-place semantics of the emitted text are exercised), and
writes the returned tensors as a tensor archive. The compile phase is a
no-op; in compiled mode the sentinel is printed before execution.

Fault injection (for harness self-tests) is selected with ``--fault`` or the
DYNOFUZZ_FAULT environment variable:

  perturb-output      compiled run disturbs output 0
  crash-at-compile    nonzero exit before the sentinel
  crash-at-run        nonzero exit after the sentinel
  sleep-past-timeout  blocks before the sentinel
  token-crash         compile crash iff --fault-token occurs in the source
  flaky-crash         compile crash on every other run of the same case id
                      (state under DYNOFUZZ_FLAKY_STATE)

Heavy imports happen only when a program actually executes, keeping
compile-phase faults cheap for the reducer.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

SENTINEL = "__COMPILE_OK__"


def _fail(msg: str, code: int):
    print(msg, file=sys.stderr)
    raise SystemExit(code)


def _build_torch_stub():
    import numpy as np

    from . import tensors as T

    def _carr(x) -> np.ndarray:
        arr = x.arr if isinstance(x, Tensor) else np.asarray(x)
        return np.asarray(arr, order="C")

    class Tensor:
        """Mutable ndarray wrapper with the slice of torch surface we emit."""

        __slots__ = ("arr",)

        def __init__(self, arr):
            self.arr = np.asarray(arr)

        @property
        def shape(self):
            return self.arr.shape

        def clone(self):
            return Tensor(self.arr.copy(order="C"))

        def to(self, dtype):
            return Tensor(_carr(self).astype(dtype))

        def max(self):
            return Tensor(np.max(self.arr))

        def min(self):
            return Tensor(np.min(self.arr))

        def item(self):
            return self.arr[()].item()

        def numpy(self):
            return self.arr

        def __getitem__(self, idx):
            return Tensor(self.arr[idx])

        def __setitem__(self, idx, value):
            self.arr[idx] = value.arr if isinstance(value, Tensor) else value

        def __bool__(self):
            return bool(self.arr)

        def _cmp(self, other, fn):
            rhs = other.arr if isinstance(other, Tensor) else other
            return Tensor(fn(self.arr, rhs))

        def __gt__(self, other):
            return self._cmp(other, np.greater)

        def __lt__(self, other):
            return self._cmp(other, np.less)

        def __ge__(self, other):
            return self._cmp(other, np.greater_equal)

        def __le__(self, other):
            return self._cmp(other, np.less_equal)

        def __repr__(self):
            return f"StubTensor({self.arr!r})"

    def unary(kernel):
        return lambda x: Tensor(kernel(_carr(x)))

    def binary(kernel):
        return lambda a, b: Tensor(kernel(_carr(a), _carr(b)))

    import types

    m = types.ModuleType("torch")
    m.Tensor = Tensor
    m.float32 = np.dtype(np.float32)
    m.float64 = np.dtype(np.float64)
    m.int64 = np.dtype(np.int64)
    m.bool = np.dtype(np.bool_)

    m.add = binary(T.k_add)
    m.sub = binary(T.k_sub)
    m.mul = binary(T.k_mul)
    m.div = binary(T.k_safe_div)
    m.neg = unary(T.k_neg)
    m.relu = unary(T.k_relu)
    m.abs = unary(T.k_abs)
    m.maximum = binary(T.k_maximum)
    m.minimum = binary(T.k_minimum)
    m.matmul = binary(T.k_matmul)
    # emitted text pre-clamps the saturating ops, and the kernels' own clamp
    # is idempotent, so reusing them is bit-identical
    m.sigmoid = unary(T.k_sigmoid)
    m.tanh = unary(T.k_tanh)
    m.exp = unary(T.k_exp_clamped)

    def clamp(x, lo, hi):
        arr = _carr(x)
        return Tensor(np.clip(arr, arr.dtype.type(lo), arr.dtype.type(hi)))

    def amax(x, dim):
        return Tensor(T.k_max_reduce(_carr(x), dim))

    def amin(x, dim):
        return Tensor(T.k_min_reduce(_carr(x), dim))

    def _sum(x, dim):
        return Tensor(T.k_sum_reduce(_carr(x), dim))

    def reshape(x, shape):
        return Tensor(_carr(x).reshape(shape))

    def transpose(x, dim0, dim1):
        return Tensor(np.swapaxes(_carr(x), dim0, dim1))

    def cat(parts, dim):
        return Tensor(np.concatenate([_carr(p) for p in parts], axis=dim))

    def full(shape, value, dtype):
        return Tensor(np.full(shape, value, dtype=dtype))

    def where(cond, a, b):
        return Tensor(T.k_where(_carr(cond), _carr(a), _carr(b)))

    def stack(parts, dim):
        return Tensor(np.stack([_carr(p) for p in parts], axis=dim))

    m.clamp = clamp
    m.amax = amax
    m.amin = amin
    m.sum = _sum
    m.reshape = reshape
    m.transpose = transpose
    m.cat = cat
    m.full = full
    m.where = where
    m.stack = stack
    return m, Tensor


def _execute(case_dir: str, out_path: str, fault: str) -> None:
    import json

    from . import tensors as T

    stub, Tensor = _build_torch_stub()
    sys.modules["torch"] = stub

    src_path = os.path.join(case_dir, "program.py")
    with open(src_path, "r", encoding="utf-8") as fh:
        source = fh.read()
    with open(os.path.join(case_dir, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(os.path.join(case_dir, "inputs.json"), "r", encoding="utf-8") as fh:
        archive = T.load_archive(fh.read())

    namespace: dict = {}
    exec(compile(source, src_path, "exec"), namespace)
    f = namespace["f"]

    args = [Tensor(archive[name].data.copy(order="C")) for name in meta["params"]]
    outputs = f(*args)
    if not isinstance(outputs, tuple):
        outputs = (outputs,)

    if fault == "perturb-output":
        first = outputs[0].arr
        if first.dtype == bool:
            outputs[0].arr = ~first
        else:
            outputs[0].arr = first + first.dtype.type(1)

    import numpy as np

    named = {}
    for i, out in enumerate(outputs):
        arr = np.asarray(out.arr, order="C")
        dtype = next(d for d in T.DType if d.np_dtype == arr.dtype)
        named[f"out{i}"] = T.TensorValue(dtype, arr)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(T.dump_archive(named))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dynofuzz-stubrunner")
    parser.add_argument("--case", required=True)
    parser.add_argument("--mode", required=True, choices=("eager", "compiled"))
    parser.add_argument("--out", required=True)
    parser.add_argument("--fault", default=os.environ.get("DYNOFUZZ_FAULT", ""))
    parser.add_argument(
        "--fault-token", default=os.environ.get("DYNOFUZZ_FAULT_TOKEN", "")
    )
    parser.add_argument("--sleep-s", type=float, default=3600.0)
    args = parser.parse_args(argv)

    compiled = args.mode == "compiled"
    if compiled:
        # compile-phase faults fire before any heavy import
        if args.fault == "crash-at-compile":
            _fail("InjectedCompileError: synthetic compiler crash", 3)
        if args.fault == "sleep-past-timeout":
            time.sleep(args.sleep_s)
            _fail("InjectedHangError: woke up past the deadline", 3)
        if args.fault == "token-crash":
            with open(os.path.join(args.case, "program.py"), encoding="utf-8") as fh:
                source = fh.read()
            if args.fault_token and args.fault_token in source:
                _fail(f"InjectedTokenError: refused to compile {args.fault_token!r}", 3)
        if args.fault == "flaky-crash":
            import json

            with open(os.path.join(args.case, "meta.json"), encoding="utf-8") as fh:
                case_id = json.load(fh)["case_id"]
            state_dir = os.environ.get("DYNOFUZZ_FLAKY_STATE", "/tmp")
            path = os.path.join(state_dir, f"flaky_{case_id}")
            count = 0
            if os.path.exists(path):
                with open(path) as fh:
                    count = int(fh.read() or 0)
            count += 1
            with open(path, "w") as fh:
                fh.write(str(count))
            if count % 2 == 1:
                _fail("InjectedFlakyError: synthetic intermittent crash", 3)
        print(SENTINEL, flush=True)

    fault = args.fault if compiled else ""
    _execute(args.case, args.out, fault)

    if compiled and args.fault == "crash-at-run":
        _fail("InjectedRunError: synthetic runtime crash", 4)
    return 0


if __name__ == "__main__":
    sys.exit(main())
