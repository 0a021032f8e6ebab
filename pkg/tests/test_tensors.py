import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynofuzz.tensors import (
    DType,
    IndexOutOfBounds,
    DTypeMismatch,
    ShapeMismatch,
    TensorValue,
    check_shape,
    check_valid,
    dump_archive,
    format_float,
    index_get,
    index_set,
    load_archive,
    take_slice,
    tensors_close,
)
from conftest import f32, f64, i64


class TestShapes:
    def test_rank_cap(self):
        assert check_shape((2, 3, 4, 5)) == (2, 3, 4, 5)
        with pytest.raises(ShapeMismatch):
            check_shape((2, 3, 4, 5, 6))

    def test_positive_extents(self):
        with pytest.raises(ShapeMismatch):
            check_shape((2, 0))

    def test_rank_zero_allowed(self):
        assert check_shape(()) == ()
        t = f32(1.5)
        assert t.shape == () and t.rank == 0


class TestIndexing:
    def test_row_major_get(self):
        t = i64([[1, 2], [3, 4]])
        assert index_get(t, (0, 1)) == 2
        assert index_get(i64([7]), (0,)) == 7

    def test_flat_layout(self):
        # element at (1, 2, 3) of a k-at-flat-index-k tensor: 1*12 + 2*4 + 3
        t = i64(np.arange(24).reshape(2, 3, 4))
        assert index_get(t, (1, 2, 3)) == 23

    def test_set_and_restore_roundtrip(self):
        t = i64([1, 2, 3])
        assert index_set(t, (1,), 9) == i64([1, 9, 3])
        orig = index_get(t, (1,))
        assert index_set(index_set(t, (1,), 9), (1,), orig) == t

    def test_float_restore_is_bit_exact(self):
        t = f32([0.1, 0.2, 0.3])
        v = index_get(t, (2,))
        assert isinstance(v, float)
        again = index_set(index_set(t, (2,), -123.456), (2,), v)
        assert again.data.tobytes() == t.data.tobytes()

    def test_rank0_rejected(self):
        with pytest.raises(IndexOutOfBounds):
            index_set(f32(1.0), (0,), 2.0)

    def test_bounds_and_dtype_class(self):
        t = f32([[1.0, 2.0]])
        with pytest.raises(IndexOutOfBounds):
            index_get(t, (0, 2))
        with pytest.raises(IndexOutOfBounds):
            index_get(t, (0,))
        with pytest.raises(DTypeMismatch):
            index_set(t, (0, 0), 7)  # int scalar into float tensor
        with pytest.raises(DTypeMismatch):
            index_set(i64([1]), (0,), True)


class TestValidity:
    def test_finite_ok(self):
        assert check_valid(f32([1.0, 2.0]))

    def test_nan_rejected(self):
        assert not check_valid(f64([1.0, math.nan]))

    def test_inf_rejected(self):
        assert not check_valid(f64([1e308 * 10]))

    def test_int_bool_always_valid(self):
        assert check_valid(i64([1, -5]))
        assert check_valid(TensorValue.of(DType.BOOL, [True, False]))


class TestClose:
    def test_within_bound(self):
        assert tensors_close(f32([1.0000]), f32([1.0005]), rtol=1e-3, atol=1e-3)

    def test_int_exact(self):
        assert not tensors_close(i64([1, 2]), i64([1, 3]), rtol=1.0, atol=1.0)

    def test_shape_gate(self):
        a = f32(np.zeros((2, 3)))
        b = f32(np.zeros((3, 2)))
        assert not tensors_close(a, b, rtol=1.0, atol=1.0)

    def test_dtype_gate(self):
        assert not tensors_close(f32([1.0]), f64([1.0]), rtol=1.0, atol=1.0)

    def test_reflexive_with_zero_tolerance(self):
        t = f32([[0.5, -0.5], [3.25, 0.0]])
        assert tensors_close(t, t, rtol=0.0, atol=0.0)

    def test_nan_positional(self):
        a = f64([math.nan, 1.0])
        assert tensors_close(a, f64([math.nan, 1.0]), 0, 0)
        assert not tensors_close(a, f64([1.0, math.nan]), 10, 10)

    def test_inf_equal(self):
        a = f64([math.inf])
        assert tensors_close(a, f64([math.inf]), 0, 0)
        assert not tensors_close(a, f64([-math.inf]), 10, 10)


class TestImmutability:
    def test_data_locked(self):
        t = f32([1.0])
        with pytest.raises(ValueError):
            t.data[0] = 2.0

    def test_scalar_input_normalized(self):
        t = TensorValue(DType.F32, np.float32(2.5))
        assert isinstance(t.data, np.ndarray) and t.shape == ()


class TestSliceStability:
    """Slice-wise evaluation must reassemble bit-exactly (unrolling foundation)."""

    @pytest.mark.parametrize("dtype", [DType.F32, DType.F64])
    @pytest.mark.parametrize(
        "fn",
        [np.exp, np.tanh, lambda x: 1.0 / (1.0 + np.exp(-x)), lambda x: np.maximum(x, 0)],
    )
    def test_elementwise_slicewise_bitexact(self, dtype, fn):
        rng = np.random.default_rng(7)
        for _ in range(40):
            shape = tuple(rng.integers(1, 7, size=rng.integers(1, 5)))
            a = rng.uniform(-30, 30, size=shape).astype(dtype.np_dtype)
            whole = fn(a)
            for axis in range(len(shape)):
                parts = [fn(take_slice(a, axis, i)) for i in range(shape[axis])]
                re = np.stack(parts, axis=axis)
                assert re.tobytes() == whole.tobytes()


class TestArchive:
    def test_roundtrip_all_dtypes(self):
        tensors = {
            "a": f32([[0.1, -2.5e-8], [3.4e8, 1.0]]),
            "b": f64([math.pi, -0.0]),
            "c": i64([[-(2**40), 3]]),
            "d": TensorValue.of(DType.BOOL, [True, False]),
        }
        again = load_archive(dump_archive(tensors))
        assert set(again) == set(tensors)
        for k in tensors:
            assert again[k] == tensors[k]
            assert again[k].data.tobytes() == tensors[k].data.tobytes()

    def test_floats_serialized_as_strings(self):
        text = dump_archive({"a": f32([1.5])})
        assert '"1.5"' in text

    def test_deterministic_bytes(self):
        tensors = {"x": f64([1.0, 2.0]), "a": i64([3])}
        assert dump_archive(tensors) == dump_archive(tensors)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_f32_shortest_decimal_roundtrips_bitexact(self, bits):
        v = np.uint32(bits).view(np.float32)
        if not np.isfinite(v):
            return
        s = format_float(v)
        back = np.float32(float(s))
        assert back.tobytes() == v.tobytes()

    @settings(max_examples=200, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_f64_decimal_roundtrips_bitexact(self, x):
        arr = np.float64(x)
        assert np.float64(float(format_float(arr))).tobytes() == arr.tobytes()

    def test_element_count_checked(self):
        text = dump_archive({"a": f32([1.0, 2.0])}).replace('"shape": [\n        2\n      ]', '"shape": [\n        3\n      ]')
        with pytest.raises(ShapeMismatch):
            load_archive(text)
