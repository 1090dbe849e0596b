# -*- coding: utf-8 -*-
"""
诊断量：异质性测量、线性收敛速率斜率拟合、零响应 (zero-respecting) 与距离守恒审计。
只读分析，不修改轨迹。
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError, DimensionMismatchError, RngStream, TraceDataError, as_vector, support_prefix
from .federation import FederatedProblem

PROBE_KINDS = ("closed_form", "random_points", "points", "trajectory")


@dataclass(frozen=True)
class Probe:
    """异质性测量的探测点集合。"""
    kind: str = "random_points"
    n: int = 32
    radius: float = 1.0
    points: tuple = ()
    seed: int = 0
    c: float = 2.0  # closed_form 在困难实例上使用的距离守恒常数

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ConfigurationError(f"未知的探测类型 '{self.kind}'，有效值为: {', '.join(PROBE_KINDS)}", field="probe")
        if self.kind == "random_points" and (self.n < 1 or self.radius < 0):
            raise ConfigurationError(f"random_points 需要 n >= 1 且 radius >= 0 (n={self.n}, radius={self.radius})",
                                     field="probe")
        if self.kind in ("points", "trajectory") and len(self.points) == 0:
            raise ConfigurationError(f"{self.kind} 探测需要至少一个点", field="probe")

    @classmethod
    def trajectory(cls, run) -> "Probe":
        return cls(kind="trajectory", points=tuple(run.iterates))


@dataclass(frozen=True)
class HeterogeneityReport:
    zeta_exact: float | None
    zeta_hat: float
    zeta_f_hat: float
    zeta_star: float | None
    probe: str
    zeta_bound: float | None = None  # 受限球上 ζ 的闭式上界 (困难实例)

    def to_row(self) -> dict:
        return {"zeta_exact": self.zeta_exact, "zeta_bound": self.zeta_bound, "zeta_hat": self.zeta_hat,
                "zeta_f_hat": self.zeta_f_hat, "zeta_star": self.zeta_star, "probe": self.probe}


def _pointwise_gaps(problem: FederatedProblem, x) -> tuple[float, float]:
    """x 处 max_i ‖∇F_i − ∇F‖ 与 max_i |F_i − F|。"""
    grads = np.stack([c.grad(x) for c in problem.clients])
    values = np.array([c.value(x) for c in problem.clients])
    g_gap = float(np.linalg.norm(grads - grads.mean(axis=0), axis=1).max())
    f_gap = float(np.abs(values - values.mean()).max())
    return g_gap, f_gap


def _ball_points(center: np.ndarray, radius: float, n: int, seed: int) -> list:
    rng = RngStream(seed, tag="heterogeneity-probe").generator()
    d = center.shape[0]
    directions = rng.standard_normal((n, d))
    directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-300)
    radii = radius * rng.random(n) ** (1.0 / d)
    return [center + r * u for r, u in zip(radii, directions)]


def mod_het_radius(problem: FederatedProblem, x_init, c: float) -> float:
    """
    受限异质性球 A = {x : ‖x − x*‖² <= (c/2)(‖x_init − x*‖² + Σ‖x_init − x_i*‖²)} 的半径。
    """
    if problem.optimum is None or any(o is None for o in problem.client_optima()):
        msg = "计算受限异质性半径需要已知全局最优点与全部客户端最优点"
        logging.error(msg)
        raise TraceDataError(msg)
    x_init = as_vector(x_init, problem.dim)
    total = float(np.sum((x_init - problem.optimum) ** 2))
    total += sum(float(np.sum((x_init - o) ** 2)) for o in problem.client_optima())
    return math.sqrt(0.5 * c * total)


def _closed_form_zeta(problem: FederatedProblem, probe: Probe) -> tuple[float | None, float | None]:
    """返回 (精确 ζ, ζ 上界)，二者至多一个已知。"""
    family = problem.metadata.get("family")
    if family == "shared_hessian" and "zeta_exact" in problem.metadata:
        return float(problem.metadata["zeta_exact"]), None
    if family == "hard_instance":
        # 两客户端：∇F₁ − ∇F = Mx + v，M = (A₁ − A₂)/2，v = −(b₁ − b₂)/2
        f1, f2 = problem.clients
        M = 0.5 * (f1.A - f2.A)
        v = -0.5 * (f1.b - f2.b)
        rho = mod_het_radius(problem, problem.initial_point, probe.c)
        # 三角不等式上界 ‖Mx* + v‖ + ρ‖M‖₂
        return None, float(np.linalg.norm(M @ problem.optimum + v)) + rho * float(np.linalg.norm(M, 2))
    msg = f"问题族 '{family}' 没有闭式异质性，请改用 random_points / points / trajectory 探测"
    logging.error(msg)
    raise ConfigurationError(msg, field="probe")


def measure_heterogeneity(problem: FederatedProblem, probe: Probe | None = None) -> HeterogeneityReport:
    """
    测量梯度异质性 ζ、函数值异质性 ζ_F 与最优点处的 ζ*。

    Args:
        problem (FederatedProblem): 被测问题。
        probe (Probe): 探测方式；closed_form 仅支持共享 Hessian 族与困难实例。

    Returns:
        HeterogeneityReport: zeta_exact 在闭式可得时给出；困难实例只给出受限球上的上界 zeta_bound；
        其余为探测点上的经验最大值。

    Raises:
        ConfigurationError: 对不支持的问题族请求 closed_form。
    """
    probe = probe or Probe()
    center = problem.optimum if problem.optimum is not None else problem.initial_point
    zeta_exact = problem.metadata.get("zeta_exact")
    zeta_bound = None
    if probe.kind == "closed_form":
        zeta_exact, zeta_bound = _closed_form_zeta(problem, probe)
        points = [center, problem.initial_point]
    elif probe.kind == "random_points":
        points = _ball_points(center, probe.radius, probe.n, probe.seed)
    else:
        points = [as_vector(p, problem.dim) for p in probe.points]
    zeta_hat = 0.0
    zeta_f_hat = 0.0
    for x in points:
        g_gap, f_gap = _pointwise_gaps(problem, x)
        zeta_hat = max(zeta_hat, g_gap)
        zeta_f_hat = max(zeta_f_hat, f_gap)
    zeta_star = None
    if problem.optimum is not None:
        zeta_star = math.sqrt(float(np.mean([np.sum(c.grad(problem.optimum) ** 2) for c in problem.clients])))
    logging.debug(f"异质性 ({probe.kind}): ζ_exact={zeta_exact}, ζ̂={zeta_hat:.6g}, ζ_F={zeta_f_hat:.6g}")
    return HeterogeneityReport(None if zeta_exact is None else float(zeta_exact), zeta_hat, zeta_f_hat,
                               zeta_star, probe.kind, zeta_bound)


def fit_rate_slope(trace, window: tuple[int, int] | None = None) -> float:
    """
    ln(次优性) 对轮次的最小二乘斜率，越负收敛越快。

    Args:
        trace: RoundRecord 列表，或逐轮的次优性数值序列 (下标即轮次)。
        window (tuple[int, int] | None): 闭区间 [起始轮, 结束轮]，默认全部。

    Raises:
        TraceDataError: 窗口内点数少于 2，或存在缺失/非正次优性。
    """
    if len(trace) and hasattr(trace[0], "suboptimality"):
        pairs = [(rec.round, rec.suboptimality) for rec in trace if rec.phase != "select"]
    else:
        pairs = list(enumerate(trace))
    if window is not None:
        lo, hi = window
        pairs = [(r, v) for r, v in pairs if lo <= r <= hi]
    if len(pairs) < 2:
        msg = f"斜率拟合至少需要 2 个点，窗口 {window} 内只有 {len(pairs)} 个"
        logging.error(msg)
        raise TraceDataError(msg)
    bad = [r for r, v in pairs if v is None or not v > 0]
    if bad:
        msg = f"窗口内第 {bad[0]} 轮的次优性缺失或非正，窗口必须位于噪声底之前"
        logging.error(msg)
        raise TraceDataError(msg)
    rounds = np.array([r for r, _ in pairs], dtype=np.float64)
    logs = np.log(np.array([v for _, v in pairs], dtype=np.float64))
    return float(np.polyfit(rounds, logs, 1)[0])


# --- 审计 ---
@dataclass
class SupportAudit:
    """supports[r] 为第 r 轮服务器点的支撑集前缀长度，envelopes[r] 为允许的前缀 p₀ + r。"""
    supports: list = field(default_factory=list)
    envelopes: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations


def audit_zero_respecting(run, instance=None) -> SupportAudit:
    """
    按“每轮至多解锁一个新坐标”重放支撑增长：第 r 轮后的服务器点与第 r 轮的每个查询点
    都必须落在 E_{p₀+r} (前 p₀ + r 个坐标) 内，p₀ 为起点的支撑前缀。

    Raises:
        TraceDataError: 运行超过 0 轮却没有记录查询点 (需以 record_queries=True 运行)。
        DimensionMismatchError: 迭代点维度与实例不符。
    """
    iterates = run.iterates
    if not iterates:
        raise TraceDataError("轨迹没有任何迭代点")
    if len(iterates) > 1 and not run.query_log:
        msg = "零响应审计需要逐步查询记录，请以 record_queries=True 运行"
        logging.error(msg)
        raise TraceDataError(msg)
    if instance is not None and iterates[0].shape[0] != instance.dim:
        msg = f"轨迹维度 {iterates[0].shape[0]} 与困难实例维度 {instance.dim} 不符"
        logging.error(msg)
        raise DimensionMismatchError(msg)
    p0 = support_prefix(iterates[0])
    audit = SupportAudit()
    for r, x in enumerate(iterates):
        prefix = support_prefix(x)
        audit.supports.append(prefix)
        audit.envelopes.append(p0 + r)
        if prefix > p0 + r:
            audit.violations.append({"round": r, "kind": "iterate", "prefix": prefix, "allowed": p0 + r})
    for q in run.query_log:
        prefix = support_prefix(q.point)
        if prefix > p0 + q.round:
            audit.violations.append({"round": q.round, "kind": "query", "client": q.client, "step": q.step,
                                     "prefix": prefix, "allowed": p0 + q.round})
    if audit.violations:
        logging.warning(f"零响应审计发现 {len(audit.violations)} 处越界，首个位于第 {audit.violations[0]['round']} 轮")
    return audit


def audit_distance_conserving(run, problem: FederatedProblem) -> float:
    """
    使 ‖x − x*‖² <= (c/2)(‖x_init − x*‖² + Σ‖x_init − x_i*‖²) 对全部服务器点与查询点成立的最小 c。

    Raises:
        TraceDataError: 最优点未知、右侧括号为 0，或运行超过 0 轮却没有查询记录。
    """
    if problem.optimum is None or any(o is None for o in problem.client_optima()):
        msg = "距离守恒审计需要已知全局最优点与全部客户端最优点"
        logging.error(msg)
        raise TraceDataError(msg)
    if len(run.iterates) > 1 and not run.query_log:
        msg = "距离守恒审计需要本地迭代点的查询记录，请以 record_queries=True 运行"
        logging.error(msg)
        raise TraceDataError(msg)
    x_init = run.iterates[0]
    scale = float(np.sum((x_init - problem.optimum) ** 2))
    scale += sum(float(np.sum((x_init - o) ** 2)) for o in problem.client_optima())
    if scale <= 0:
        raise TraceDataError("起点同时是全局与全部客户端最优点，距离守恒常数无定义")
    points = list(run.iterates) + [q.point for q in run.query_log]
    worst = max(float(np.sum((p - problem.optimum) ** 2)) for p in points)
    return 2.0 * worst / scale
