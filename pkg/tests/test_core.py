# -*- coding: utf-8 -*-
"""
单元测试 for fedsim_utils.core
"""
import math

import numpy as np
import pytest

from fedsim_utils.core import (CSV_COLUMNS, DimensionMismatchError, NumericalBlowUpError, RngStream, RoundRecord,
                               as_vector, axpy, ensure_finite, gaussian, support, support_prefix)


def test_as_vector_scalar_and_dim_check():
    """标量视为 1 维；维度不符时报错。"""
    assert as_vector(3.0).tolist() == [3.0]
    with pytest.raises(DimensionMismatchError):
        as_vector([1.0, 2.0], dim=3)
    with pytest.raises(DimensionMismatchError):
        as_vector([[1.0], [2.0]])


def test_as_vector_returns_copy():
    x = np.array([1.0, 2.0])
    y = as_vector(x)
    y[0] = 5.0
    assert x[0] == 1.0


def test_axpy_and_blow_up():
    """a·x + y 的正常结果、维度不符与溢出。"""
    assert axpy(2.0, [1.0, 1.0], [0.5, -1.0]).tolist() == [2.5, 1.0]
    with pytest.raises(DimensionMismatchError):
        axpy(1.0, [1.0], [1.0, 2.0])
    with pytest.raises(NumericalBlowUpError):
        axpy(1e308, [10.0], [0.0])


def test_axpy_is_linear_in_the_coefficient():
    """axpy(a, x, axpy(b, x, y)) 与 axpy(a + b, x, y) 在 1e-12 相对误差内一致。"""
    rng = RngStream(4, tag="axpy-test").generator()
    for _ in range(20):
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        a, b = rng.uniform(-3.0, 3.0, size=2)
        np.testing.assert_allclose(axpy(a, x, axpy(b, x, y)), axpy(a + b, x, y), rtol=1e-12, atol=1e-12)


def test_ensure_finite_carries_round_index():
    with pytest.raises(NumericalBlowUpError) as excinfo:
        ensure_finite(np.array([1.0, math.nan]), round_index=17)
    assert excinfo.value.round_index == 17


def test_support_and_prefix():
    x = np.array([0.0, 1e-13, 2.0, 0.0, -3.0, 0.0])
    assert support(x) == {2, 4}
    assert support_prefix(x) == 5
    assert support_prefix(np.zeros(4)) == 0


def test_rng_stream_reproducible_and_separated():
    """同一流标识产生相同序列，不同客户端 / 轮次 / 标签互相独立。"""
    base = RngStream(42, client=1, round=3, step=0, tag="grad")
    a = gaussian(base, 5)
    b = gaussian(RngStream(42, client=1, round=3, step=0, tag="grad"), 5)
    assert np.array_equal(a, b)
    for other in (base.child(client=2), base.child(round=4), base.child(tag="value"), base.child(step=1),
                  RngStream(43, client=1, round=3, step=0, tag="grad")):
        assert not np.array_equal(a, gaussian(other, 5))


def test_rng_stream_prefix_consistency():
    """取前 n 个数与取前 m > n 个数的前 n 个一致。"""
    stream = RngStream(7, tag="sample")
    assert np.array_equal(gaussian(stream, 3), gaussian(stream, 10)[:3])


def test_gaussian_rejects_empty_request():
    with pytest.raises(ValueError):
        gaussian(RngStream(0), 0)


def test_gaussian_first_two_moments():
    """10⁶ 个样本的均值在 0.01 以内，方差在 [0.99, 1.01] 内。"""
    draws = gaussian(RngStream(11, client=2, round=5, tag="grad"), 10 ** 6)
    assert abs(draws.mean()) < 0.01
    assert 0.99 <= draws.var() <= 1.01


def test_round_record_to_row_matches_columns():
    rec = RoundRecord(3, 0.5, 1.25, None, 40, 8, "local")
    row = rec.to_row()
    assert list(row) == CSV_COLUMNS
    assert row["grad_calls"] == 40 and row["value_calls"] == 8 and row["dist_sq"] is None
