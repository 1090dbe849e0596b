# -*- coding: utf-8 -*-
"""
预言机层：联邦问题容器、带噪声的梯度/函数值查询、无放回客户端采样，以及 Grad 子程序。

优化器只通过 Oracle 访问目标函数，Oracle 负责调用计数和 (可选的) 查询点日志，
零响应审计与距离守恒审计都依赖这份日志。
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError, RngStream, as_vector

NOISE_MODELS = ("gaussian", "minibatch")


@dataclass(frozen=True)
class OracleConfig:
    """
    预言机噪声设置。

    sigma:   梯度噪声标准差，E‖g̃ − ∇F_i‖² = σ² (单样本)。
    sigma_f: 函数值噪声标准差。
    noise_model: gaussian (各向同性高斯) 或 minibatch (有限和客户端按数据点抽样)。
    batch_fraction: minibatch 模型下每个样本包含的数据比例。
    """
    sigma: float = 0.0
    sigma_f: float = 0.0
    noise_model: str = "gaussian"
    batch_fraction: float = 0.01

    def __post_init__(self):
        if self.sigma < 0 or self.sigma_f < 0:
            raise ConfigurationError(f"噪声标准差必须非负: sigma={self.sigma}, sigma_f={self.sigma_f}", field="oracle")
        if self.noise_model not in NOISE_MODELS:
            raise ConfigurationError(
                f"无效的噪声模型 '{self.noise_model}'，有效值为: {', '.join(NOISE_MODELS)}", field="oracle.noise_model")
        if not 0 < self.batch_fraction <= 1:
            raise ConfigurationError(f"batch_fraction 必须在 (0, 1] 内，实际为 {self.batch_fraction}",
                                     field="oracle.batch_fraction")

    @property
    def exact(self) -> bool:
        return self.noise_model == "gaussian" and self.sigma == 0.0


class FederatedProblem:
    """
    N 个客户端目标的均匀平均 F(x) = (1/N) Σ F_i(x)。

    全局光滑常数 / 强凸常数默认取客户端的最大 β / 最小 μ，
    构造器可以显式覆盖 (例如漂移族、下界实例的全局常数更紧)。
    """

    def __init__(self, clients, optimum=None, initial_point=None, smoothness=None,
                 strong_convexity=None, name="", metadata=None):
        if not clients:
            raise ConfigurationError("联邦问题至少需要一个客户端")
        dims = {c.dim for c in clients}
        if len(dims) != 1:
            raise ConfigurationError(f"客户端维度不一致: {sorted(dims)}")
        self.clients = list(clients)
        self.dim = dims.pop()
        self.name = name
        self.metadata = dict(metadata or {})
        self.smoothness = float(smoothness) if smoothness is not None else max(c.smoothness for c in clients)
        self.strong_convexity = (float(strong_convexity) if strong_convexity is not None
                                 else min(c.strong_convexity for c in clients))
        self.initial_point = as_vector(initial_point, self.dim) if initial_point is not None else np.zeros(self.dim)
        self.optimum = as_vector(optimum, self.dim) if optimum is not None else None
        self.optimum_value = self.value(self.optimum) if self.optimum is not None else None
        if self.optimum is not None:
            residual = float(np.linalg.norm(self.grad(self.optimum)))
            if residual > 1e-8:
                logging.warning(f"问题 '{name}' 提供的最优点梯度范数为 {residual:.3e}，超过 1e-8")

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def condition_number(self) -> float:
        return self.smoothness / self.strong_convexity if self.strong_convexity > 0 else math.inf

    def value(self, x) -> float:
        return float(np.mean([c.value(x) for c in self.clients]))

    def grad(self, x) -> np.ndarray:
        return np.mean(np.stack([c.grad(x) for c in self.clients]), axis=0)

    def client_optima(self) -> list:
        return [c.optimum for c in self.clients]

    def suboptimality(self, x) -> float | None:
        if self.optimum_value is None:
            return None
        return self.value(x) - self.optimum_value

    def dist_sq(self, x) -> float | None:
        if self.optimum is None:
            return None
        return float(np.sum((as_vector(x) - self.optimum) ** 2))

    def initial_gap(self, x0=None) -> float | None:
        """Δ = F(x⁰) − F(x*)，未知最优点时取 metadata 中的估计。"""
        x0 = self.initial_point if x0 is None else x0
        gap = self.suboptimality(x0)
        return gap if gap is not None else self.metadata.get("delta")

    def initial_distance_sq(self, x0=None) -> float | None:
        x0 = self.initial_point if x0 is None else x0
        dist = self.dist_sq(x0)
        return dist if dist is not None else self.metadata.get("distance_sq")

    def heterogeneity_hint(self, x=None) -> float:
        """预设步长使用的 ζ：构造时已知则直接返回，否则取 x 处的逐点梯度差。"""
        if "zeta" in self.metadata:
            return float(self.metadata["zeta"])
        x = self.initial_point if x is None else x
        g = self.grad(x)
        return float(max(np.linalg.norm(c.grad(x) - g) for c in self.clients))

    def with_optimum(self, optimum) -> "FederatedProblem":
        return FederatedProblem(self.clients, optimum=optimum, initial_point=self.initial_point,
                                smoothness=self.smoothness, strong_convexity=self.strong_convexity,
                                name=self.name, metadata=self.metadata)

    def __repr__(self):
        return (f"FederatedProblem(name={self.name!r}, N={self.n_clients}, d={self.dim}, "
                f"beta={self.smoothness:.4g}, mu={self.strong_convexity:.4g})")


# --- 采样与查询 ---
def sample_clients(n_clients: int, count: int, stream: RngStream) -> tuple[int, ...]:
    """
    无放回均匀抽取 count 个客户端 (由流键控的部分 Fisher–Yates)。

    Returns:
        tuple[int, ...]: 升序的客户端下标，保证后续按下标顺序归约。

    Raises:
        ConfigurationError: count 不在 [1, n_clients] 内。
    """
    if not 1 <= count <= n_clients:
        msg = f"每轮客户端数 S={count} 必须满足 1 <= S <= N={n_clients}"
        logging.error(msg)
        raise ConfigurationError(msg, field="clients_per_round")
    if count == n_clients:
        return tuple(range(n_clients))
    rng = stream.generator()
    pool = list(range(n_clients))
    for j in range(count):
        k = int(rng.integers(j, n_clients))
        pool[j], pool[k] = pool[k], pool[j]
    return tuple(sorted(pool[:count]))


def _minibatch_size(client, config: OracleConfig) -> int:
    if not hasattr(client, "sample_grad"):
        raise ConfigurationError(f"minibatch 噪声模型需要有限和客户端，{type(client).__name__} 不支持",
                                 field="oracle.noise_model")
    return max(1, math.ceil(config.batch_fraction * client.n_samples))


def grad_query(problem: FederatedProblem, i: int, x, K: int, config: OracleConfig, stream: RngStream) -> np.ndarray:
    """
    Grad 子程序：客户端 i 在 x 处 K 个样本梯度的平均，方差 σ²/K，无偏。
    """
    if K < 1:
        raise ConfigurationError(f"样本数 K 必须 >= 1，实际为 {K}", field="local_steps")
    client = problem.clients[i]
    if config.noise_model == "minibatch":
        size = _minibatch_size(client, config)
        idx = stream.generator().integers(0, client.n_samples, size=K * size)
        return client.sample_grad(x, idx)
    exact = client.grad(x)
    if config.sigma == 0.0:
        return exact
    draws = stream.generator().standard_normal((K, problem.dim))
    return exact + draws.mean(axis=0) * (config.sigma / math.sqrt(problem.dim))


def value_query(problem: FederatedProblem, subset, x, K: int, config: OracleConfig, stream: RngStream) -> float:
    """
    子集平均函数值的无偏估计，噪声方差 σ_F²/(|subset|·K)。
    同一 stream 下对不同 x 的调用共享样本 (z 抽样只由流决定)。
    """
    if K < 1 or not subset:
        raise ConfigurationError(f"函数值查询需要 K >= 1 且子集非空 (K={K}, subset={subset})")
    total = 0.0
    for i in sorted(subset):
        client = problem.clients[i]
        client_stream = stream.child(client=i)
        if config.noise_model == "minibatch":
            size = _minibatch_size(client, config)
            idx = client_stream.generator().integers(0, client.n_samples, size=K * size)
            total += client.sample_value(x, idx)
        elif config.sigma_f == 0.0:
            total += client.value(x)
        else:
            total += client.value(x) + config.sigma_f * float(client_stream.generator().standard_normal(K).mean())
    return total / len(subset)


def estimate_noise_variance(problem: FederatedProblem, x, config: OracleConfig, stream: RngStream,
                            draws: int = 16) -> float:
    """单样本梯度噪声方差的经验估计 (用于无解析 σ 的预设)。"""
    if config.exact:
        return 0.0
    total = 0.0
    for i, client in enumerate(problem.clients):
        exact = client.grad(x)
        for j in range(draws):
            g = grad_query(problem, i, x, 1, config, stream.child(client=i, step=j, tag="variance"))
            total += float(np.sum((g - exact) ** 2))
    return total / (problem.n_clients * draws)


# --- 计数预言机 ---
@dataclass(frozen=True)
class QueryRecord:
    round: int
    client: int
    step: int
    point: np.ndarray
    purpose: str


@dataclass
class Oracle:
    """
    单次运行持有的预言机：累计梯度/函数值调用次数，可选记录每个查询点。
    不在线程间共享。
    """
    config: OracleConfig
    record_queries: bool = False
    grad_calls: int = 0
    value_calls: int = 0
    queries: list = field(default_factory=list)

    def grad(self, problem: FederatedProblem, i: int, x, K: int, stream: RngStream, purpose: str = "grad") -> np.ndarray:
        self.grad_calls += K
        if self.record_queries:
            self.queries.append(QueryRecord(stream.round, i, stream.step, np.array(x, dtype=np.float64), purpose))
        return grad_query(problem, i, x, K, self.config, stream)

    def log_point(self, stream: RngStream, i: int, x, purpose: str) -> None:
        """只记录不计费的点 (本地更新的末端迭代点)。"""
        if self.record_queries:
            self.queries.append(QueryRecord(stream.round, i, stream.step, np.array(x, dtype=np.float64), purpose))

    def value(self, problem: FederatedProblem, subset, x, K: int, stream: RngStream) -> float:
        self.value_calls += len(subset) * K
        return value_query(problem, subset, x, K, self.config, stream)
