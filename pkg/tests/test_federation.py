# -*- coding: utf-8 -*-
"""
单元测试 for fedsim_utils.federation
"""
import numpy as np
import pytest

from fedsim_utils.core import ConfigurationError, RngStream
from fedsim_utils.federation import (Oracle, OracleConfig, estimate_noise_variance, grad_query, sample_clients,
                                     value_query)
from fedsim_utils.objectives import make_shuffle_federation, make_synthetic_federation, make_two_client_toy


def test_oracle_config_validation():
    with pytest.raises(ConfigurationError):
        OracleConfig(sigma=-1.0)
    with pytest.raises(ConfigurationError):
        OracleConfig(noise_model="laplace")
    with pytest.raises(ConfigurationError):
        OracleConfig(batch_fraction=0.0)
    assert OracleConfig().exact
    assert not OracleConfig(sigma=0.1).exact


def test_sample_clients_sorted_without_replacement():
    stream = RngStream(5, round=1, tag="sample")
    subset = sample_clients(10, 4, stream)
    assert len(set(subset)) == 4
    assert list(subset) == sorted(subset)
    assert subset == sample_clients(10, 4, stream)
    assert sample_clients(3, 3, stream) == (0, 1, 2)
    with pytest.raises(ConfigurationError):
        sample_clients(3, 4, stream)
    with pytest.raises(ConfigurationError):
        sample_clients(3, 0, stream)


def test_sample_clients_uniform_inclusion():
    """每个客户端被选中的频率接近 S/N。"""
    counts = np.zeros(5)
    trials = 4000
    for r in range(trials):
        for i in sample_clients(5, 2, RngStream(0, round=r, tag="sample")):
            counts[i] += 1
    assert np.allclose(counts / trials, 0.4, atol=0.03)


def test_exact_queries_return_true_values():
    problem = make_two_client_toy()
    config = OracleConfig()
    stream = RngStream(0)
    assert grad_query(problem, 0, [0.0], 3, config, stream).tolist() == [-1.0]
    assert value_query(problem, (0, 1), [0.0], 2, config, stream) == pytest.approx(problem.value([0.0]))


def test_gradient_noise_variance_scales_with_k():
    """E‖g̃ − ∇F_i‖² = σ²/K (10⁴ 次重复，误差 10% 以内)。"""
    problem = make_synthetic_federation(2, 2, 2.0, 0.1, seed=0)
    config = OracleConfig(sigma=1.0)
    x = np.array([0.3, -0.2])
    exact = problem.clients[0].grad(x)
    for K in (1, 4):
        errs = [float(np.sum((grad_query(problem, 0, x, K, config, RngStream(1, round=r, tag="grad")) - exact) ** 2))
                for r in range(10_000)]
        assert np.mean(errs) == pytest.approx(1.0 / K, rel=0.1)


def test_value_noise_variance_scales_with_subset_and_k():
    """函数值估计的方差为 σ_F²/(S·K̂)。"""
    problem = make_synthetic_federation(4, 2, 2.0, 0.1, seed=0)
    config = OracleConfig(sigma_f=2.0)
    x = np.array([0.1, 0.1])
    subset = (0, 2)
    exact = np.mean([problem.clients[i].value(x) for i in subset])
    values = np.array([value_query(problem, subset, x, 4, config, RngStream(2, round=r, tag="value"))
                       for r in range(10_000)])
    assert np.mean(values) == pytest.approx(exact, abs=0.03)
    assert np.var(values) == pytest.approx(4.0 / 8.0, rel=0.1)


def test_value_query_shares_draws_within_stream():
    """同一流下，两个点的估计差等于真实差 (加性噪声被抵消)。"""
    problem = make_synthetic_federation(3, 2, 2.0, 0.1, seed=0)
    config = OracleConfig(sigma_f=5.0)
    stream = RngStream(3, round=9, tag="select-value")
    a, b = np.array([0.0, 1.0]), np.array([1.0, 0.0])
    diff = value_query(problem, (0, 1), a, 3, config, stream) - value_query(problem, (0, 1), b, 3, config, stream)
    true_diff = np.mean([problem.clients[i].value(a) - problem.clients[i].value(b) for i in (0, 1)])
    assert diff == pytest.approx(true_diff, abs=1e-9)


def test_minibatch_noise_requires_finite_sum_clients():
    with pytest.raises(ConfigurationError):
        grad_query(make_two_client_toy(), 0, [0.0], 1, OracleConfig(noise_model="minibatch"), RngStream(0))


def test_minibatch_gradient_and_variance_estimate():
    """有限和客户端的小批量梯度无偏 (平均后接近精确梯度)，估计的噪声方差为正。"""
    problem = make_shuffle_federation(2, 50, 20, seed=0)
    config = OracleConfig(noise_model="minibatch", batch_fraction=0.1)
    x = np.zeros(problem.dim)
    exact = problem.clients[0].grad(x)
    mean = np.mean([grad_query(problem, 0, x, 1, config, RngStream(4, round=r)) for r in range(4000)], axis=0)
    assert np.linalg.norm(mean - exact) < 0.05 * max(1.0, np.linalg.norm(exact))
    assert estimate_noise_variance(problem, x, config, RngStream(0)) > 0
    assert estimate_noise_variance(problem, x, OracleConfig(), RngStream(0)) == 0.0


def test_oracle_counts_and_records_queries():
    problem = make_two_client_toy()
    oracle = Oracle(OracleConfig(), record_queries=True)
    oracle.grad(problem, 1, [0.5], 4, RngStream(0, client=1, round=2, step=0, tag="grad"))
    oracle.value(problem, (0, 1), [0.5], 3, RngStream(0, round=2))
    assert oracle.grad_calls == 4
    assert oracle.value_calls == 6
    assert len(oracle.queries) == 1
    assert oracle.queries[0].round == 2 and oracle.queries[0].client == 1
