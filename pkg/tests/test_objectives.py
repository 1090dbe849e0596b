# -*- coding: utf-8 -*-
"""
单元测试 for fedsim_utils.objectives
"""
import math

import numpy as np
import pytest

from fedsim_utils.core import ConfigurationError, NumericalBlowUpError, RngStream
from fedsim_utils.objectives import (PL_MU, HardInstance, QuadraticClient, certify_pl_constant, gradient_check,
                                     hard_instance_dimension, hard_instance_lower_bound, make_diagonal_quadratic,
                                     make_drift_federation, make_hard_instance, make_pl_objective, make_pl_problem,
                                     make_shuffle_federation, make_synthetic_federation, make_two_client_toy,
                                     proof_mu, smooth, solve_optimum)


def _random_points(dim, n=5, seed=0, scale=2.0):
    rng = RngStream(seed, tag="test-points").generator()
    return [scale * rng.standard_normal(dim) for _ in range(n)]


def test_two_client_toy_optimum():
    """F = (F₁ + F₂)/2 的最优点为 −1/3，初始点为 0。"""
    problem = make_two_client_toy()
    assert problem.optimum[0] == pytest.approx(-1.0 / 3.0)
    assert np.linalg.norm(problem.grad(problem.optimum)) < 1e-12
    assert problem.initial_point.tolist() == [0.0]
    assert problem.suboptimality([0.0]) == pytest.approx(problem.value([0.0]) - problem.value([-1.0 / 3.0]))


def test_quadratic_client_rejects_asymmetric_and_indefinite():
    with pytest.raises(ConfigurationError):
        QuadraticClient([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        QuadraticClient([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])


def test_synthetic_federation_zeta_is_exact():
    """共享 Hessian 族的 ζ 在任意点都精确等于目标值。"""
    problem = make_synthetic_federation(4, 10, 10.0, 0.5, seed=3)
    assert problem.metadata["zeta_exact"] == pytest.approx(0.5)
    for x in _random_points(10):
        g = problem.grad(x)
        gap = max(np.linalg.norm(c.grad(x) - g) for c in problem.clients)
        assert gap == pytest.approx(0.5, rel=1e-10)
    assert problem.smoothness == pytest.approx(10.0)
    assert problem.strong_convexity == pytest.approx(1.0)
    assert problem.initial_gap() == pytest.approx(1.0, rel=1e-10)


def test_synthetic_federation_seed_determinism():
    a = make_synthetic_federation(4, 5, 10.0, 0.5, seed=1)
    b = make_synthetic_federation(4, 5, 10.0, 0.5, seed=1)
    assert np.array_equal(a.optimum, b.optimum)
    assert np.array_equal(a.initial_point, b.initial_point)


def test_diagonal_quadratic_gap_on_weak_coordinate():
    problem = make_diagonal_quadratic(4, 400.0, delta=1.0)
    assert problem.initial_gap() == pytest.approx(1.0)
    assert problem.initial_point[1:].tolist() == [0.0, 0.0, 0.0]
    assert problem.smoothness == pytest.approx(400.0)


def test_drift_federation_global_optimum():
    """漂移族的全局最优点是随机中心，客户端最优点彼此不同。"""
    problem = make_drift_federation(4, 2, 10.0, 0.5, 0.1, seed=0)
    assert np.linalg.norm(problem.grad(problem.optimum)) < 1e-12
    optima = problem.client_optima()
    assert not np.allclose(optima[0], optima[-1])
    assert problem.initial_gap() == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        make_drift_federation(3, 2, 10.0, 0.5, 0.1, seed=0)


def test_shuffle_federation_homogeneity_levels():
    """X = 100 时各客户端数据同分布，异质性明显小于 X = 0。"""
    het = make_shuffle_federation(5, 0, 40, seed=0)
    hom = make_shuffle_federation(5, 100, 40, seed=0)
    assert np.linalg.norm(het.grad(het.optimum)) < 1e-8

    def gap(problem):
        x = problem.optimum
        return max(np.linalg.norm(c.grad(x)) for c in problem.clients)

    assert gap(hom) < gap(het)
    with pytest.raises(ConfigurationError):
        make_shuffle_federation(5, 120, 40, seed=0)


def test_gradient_check_all_families():
    """有限差分梯度与解析梯度一致 (相对误差 <= 1e-5)。"""
    objectives = list(make_synthetic_federation(3, 4, 5.0, 1.0, seed=0).clients)
    objectives += list(make_drift_federation(2, 3, 5.0, 0.3, 0.2, seed=0).clients)
    objectives += list(make_shuffle_federation(2, 50, 20, seed=0).clients)
    objectives.append(make_pl_objective())
    objectives += make_hard_instance(1.0, 1.0, 0.01, 6).clients
    for objective in objectives:
        points = _random_points(objective.dim, n=3, seed=objective.dim)
        assert gradient_check(objective, points) <= 1e-5, objective


def test_pl_constant_certified_on_grid():
    """x² + 3sin²x 在 [-10, 10] 网格上满足 1/32-PL。"""
    objective = make_pl_objective()
    grid = np.linspace(-10.0, 10.0, 4001)
    assert certify_pl_constant(objective, grid) >= PL_MU
    problem = make_pl_problem()
    assert problem.initial_point.tolist() == [3.0]
    assert problem.suboptimality([0.0]) == 0.0


def test_smooth_adds_strong_convexity():
    """平滑后的问题 μ 增加 μ_reg，最优点满足一阶条件。"""
    base = make_two_client_toy()
    smoothed = smooth(base, 0.5, [1.0])
    assert smoothed.strong_convexity == pytest.approx(base.strong_convexity + 0.5)
    assert np.linalg.norm(smoothed.grad(smoothed.optimum)) < 1e-12
    with pytest.raises(ConfigurationError):
        smooth(base.clients[0], 0.0, [0.0])


def test_smooth_optimum_stays_closer_to_anchor():
    """‖anchor − x*_μ‖ <= ‖anchor − x*‖：二次族走闭式解，逻辑回归族走数值解。"""
    for base in (make_synthetic_federation(3, 4, 5.0, 1.0, seed=1), make_shuffle_federation(2, 50, 20, seed=0)):
        anchor = base.optimum + _random_points(base.dim, n=1, seed=3)[0]
        for mu_reg in (0.01, 0.5, 10.0):
            smoothed = smooth(base, mu_reg, anchor)
            assert np.linalg.norm(anchor - smoothed.optimum) <= np.linalg.norm(anchor - base.optimum) + 1e-8
            assert np.linalg.norm(smoothed.grad(smoothed.optimum)) <= 1e-7


def test_solve_optimum_matches_closed_form_and_reports_failure():
    """数值最优点与二次族闭式解一致；迭代预算不足时报 NumericalBlowUpError。"""
    problem = make_synthetic_federation(3, 5, 20.0, 1.0, seed=2)
    np.testing.assert_allclose(solve_optimum(problem), problem.optimum, atol=1e-6)
    shuffled = make_shuffle_federation(3, 0, 30, seed=1)
    assert np.linalg.norm(shuffled.grad(solve_optimum(shuffled))) <= 1e-7
    with pytest.raises(NumericalBlowUpError):
        solve_optimum(shuffled, tol=1e-12, max_iter=1)


def test_hard_instance_closed_form_optimum():
    """C = 1 − q 时数值最优点与闭式 ζ̂q^j/(1−q) 一致。"""
    instance = make_hard_instance(1.0, 1.0, 0.01, 20)
    problem = instance.problem()
    assert np.allclose(problem.optimum, instance.closed_form_optimum(), atol=1e-10)
    x1, x2 = instance.client_optima_closed_form()
    assert np.linalg.norm(instance.grad1(x1)) < 1e-10
    assert np.linalg.norm(instance.grad2(x2)) < 1e-12


def test_hard_instance_initial_gap_bound():
    """F(0) − F* <= qℓ₂ζ̂²/(4(1−q))。"""
    instance = make_hard_instance(1.0, 1.0, 0.05, 12)
    problem = instance.problem()
    assert problem.suboptimality(np.zeros(12)) <= instance.initial_gap_bound() + 1e-9


def test_hard_instance_zero_chain_structure():
    """在 E_p 内的点上，梯度至多把支撑扩展一个坐标。"""
    instance = make_hard_instance(1.0, 1.0, 0.01, 10)
    x = np.zeros(10)
    x[:3] = [0.3, -0.2, 0.1]
    g1 = instance.grad1(x)
    g2 = instance.grad2(x)
    assert np.all(g1[4:] == 0.0)
    assert np.all(g2[4:] == 0.0)


def test_hard_instance_dimension_and_bound():
    mu = proof_mu(1.0, 20)
    assert mu == pytest.approx(1.0 / (64 * 400))
    d = hard_instance_dimension(1.0, mu, 20)
    assert d % 2 == 0 and d >= 20
    instance = make_hard_instance(1.0, 1.0, mu, d)
    assert hard_instance_lower_bound(instance, 20) > 0
    assert hard_instance_lower_bound(instance, 20) < hard_instance_lower_bound(instance, 10)
    with pytest.raises(ConfigurationError):
        hard_instance_lower_bound(make_hard_instance(1.0, 1.0, mu, 4), 20)


def test_hard_instance_rejects_odd_dimension():
    with pytest.raises(ConfigurationError):
        HardInstance(1.0, 1.0, 0.1, 7)


def test_proof_mu_needs_rounds():
    with pytest.raises(ConfigurationError):
        proof_mu(1.0, 0)
    assert math.isclose(proof_mu(2.0, 5), 2.0 / 1600)
