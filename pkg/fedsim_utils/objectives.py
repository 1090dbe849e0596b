# -*- coding: utf-8 -*-
"""
客户端目标函数族：异质性可控的二次函数、两客户端玩具问题、客户端漂移族、
正则化逻辑回归 (数据洗牌异质性模型)、PL 非凸标量函数、Nesterov 平滑包装，
以及下界困难实例 F₁/F₂。
"""
import abc
import logging
import math

import numpy as np
from scipy import optimize

from .core import ConfigurationError, NumericalBlowUpError, RngStream, as_vector
from .federation import FederatedProblem

CONVEXITY_CLASSES = ("strongly_convex", "convex", "pl", "nonconvex")
PL_MU = 1.0 / 32.0  # x² + 3sin²x 在 [-10, 10] 网格上验证过的 PL 常数
LOGISTIC_REG = 0.1


# --- 抽象基类 ---
class ClientObjective(abc.ABC):
    """单个客户端的损失 F_i：精确函数值/梯度，以及光滑性与凸性元数据。"""

    def __init__(self, dim: int, smoothness: float, strong_convexity: float = 0.0,
                 convexity_class: str | None = None, optimum=None, label: str = ""):
        if dim < 1:
            raise ConfigurationError(f"维度必须为正整数，实际为 {dim}")
        if smoothness <= 0:
            raise ConfigurationError(f"光滑常数 β 必须 > 0，实际为 {smoothness}")
        if strong_convexity < 0 or strong_convexity > smoothness * (1 + 1e-12):
            raise ConfigurationError(f"需要 0 <= μ <= β，实际 μ={strong_convexity}, β={smoothness}")
        if convexity_class is None:
            convexity_class = "strongly_convex" if strong_convexity > 0 else "convex"
        if convexity_class not in CONVEXITY_CLASSES:
            raise ConfigurationError(f"无效的凸性类别 '{convexity_class}'")
        self.dim = dim
        self.smoothness = float(smoothness)
        self.strong_convexity = float(strong_convexity)
        self.convexity_class = convexity_class
        self.optimum = as_vector(optimum, dim) if optimum is not None else None
        self.label = label

    @abc.abstractmethod
    def value(self, x) -> float:
        """F_i(x)"""

    @abc.abstractmethod
    def grad(self, x) -> np.ndarray:
        """∇F_i(x)"""

    def __repr__(self):
        return f"{type(self).__name__}(label={self.label!r}, d={self.dim}, beta={self.smoothness:.4g}, mu={self.strong_convexity:.4g})"


class QuadraticClient(ClientObjective):
    """F_i(x) = ½xᵀAx − bᵀx + c，A 对称半正定。"""

    def __init__(self, A, b, c: float = 0.0, label: str = ""):
        A = np.atleast_2d(np.array(A, dtype=np.float64))
        b = as_vector(b)
        if A.shape != (b.shape[0], b.shape[0]):
            raise ConfigurationError(f"二次型维度不一致: A {A.shape}, b {b.shape}")
        if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(A).max()))):
            raise ConfigurationError("二次型矩阵 A 必须对称")
        eigs = np.linalg.eigvalsh(A)
        scale = max(1.0, float(np.abs(eigs).max()))
        if eigs[0] < -1e-10 * scale:
            raise ConfigurationError(f"二次型矩阵 A 不是半正定的 (最小特征值 {eigs[0]:.3e})")
        mu = float(eigs[0]) if eigs[0] > 1e-12 * scale else 0.0
        optimum = np.linalg.solve(A, b) if mu > 0 else None
        super().__init__(b.shape[0], float(eigs[-1]), mu, optimum=optimum, label=label)
        self.A = A
        self.b = b
        self.c = float(c)

    def value(self, x) -> float:
        x = as_vector(x, self.dim)
        return float(0.5 * x @ self.A @ x - self.b @ x + self.c)

    def grad(self, x) -> np.ndarray:
        x = as_vector(x, self.dim)
        return self.A @ x - self.b


class LogisticClient(ClientObjective):
    """
    ℓ₂ 正则化二分类逻辑回归 (标签 {0,1})，有限和形式，支持按数据点下标求样本损失/梯度。
    β 取经验估计 0.25·λ_max(XᵀX/n) + reg。
    """

    def __init__(self, features, labels, reg: float = LOGISTIC_REG, label: str = ""):
        features = np.array(features, dtype=np.float64)
        labels = np.array(labels, dtype=np.float64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise ConfigurationError(f"逻辑回归数据形状不一致: X {features.shape}, y {labels.shape}")
        if features.shape[0] == 0:
            raise ConfigurationError("逻辑回归客户端没有数据")
        if reg <= 0:
            raise ConfigurationError(f"正则化系数必须 > 0，实际为 {reg}")
        n = features.shape[0]
        curvature = float(np.linalg.eigvalsh(features.T @ features / n)[-1])
        super().__init__(features.shape[1], 0.25 * curvature + reg, reg, label=label)
        self.features = features
        self.labels = labels
        self.reg = float(reg)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    def _loss(self, x, X, y) -> float:
        z = X @ x
        return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * self.reg * x @ x)

    def _grad(self, x, X, y) -> np.ndarray:
        z = X @ x
        residual = 0.5 * (1.0 + np.tanh(0.5 * z)) - y  # sigmoid(z) − y
        return X.T @ residual / X.shape[0] + self.reg * x

    def value(self, x) -> float:
        return self._loss(as_vector(x, self.dim), self.features, self.labels)

    def grad(self, x) -> np.ndarray:
        return self._grad(as_vector(x, self.dim), self.features, self.labels)

    def sample_value(self, x, idx) -> float:
        return self._loss(as_vector(x, self.dim), self.features[idx], self.labels[idx])

    def sample_grad(self, x, idx) -> np.ndarray:
        return self._grad(as_vector(x, self.dim), self.features[idx], self.labels[idx])


class PLScalarClient(ClientObjective):
    """f(x) = x² + 3sin²(x)：非凸，β = 8，满足 μ-PL (μ = 1/32)，全局最小点 0。"""

    def __init__(self, label: str = "pl-scalar"):
        super().__init__(1, 8.0, PL_MU, convexity_class="pl", optimum=[0.0], label=label)

    def value(self, x) -> float:
        t = float(as_vector(x, 1)[0])
        return t * t + 3.0 * math.sin(t) ** 2

    def grad(self, x) -> np.ndarray:
        t = float(as_vector(x, 1)[0])
        return np.array([2.0 * t + 3.0 * math.sin(2.0 * t)])


class SmoothedObjective(ClientObjective):
    """F_μ(x) = F(x) + (μ_reg/2)‖x − x⁰‖²。"""

    def __init__(self, base: ClientObjective, mu_reg: float, anchor):
        if mu_reg <= 0:
            raise ConfigurationError(f"平滑系数 μ_reg 必须 > 0，实际为 {mu_reg}", field="smoothing")
        anchor = as_vector(anchor, base.dim)
        optimum = None
        if isinstance(base, QuadraticClient):
            optimum = np.linalg.solve(base.A + mu_reg * np.eye(base.dim), base.b + mu_reg * anchor)
        convexity = "strongly_convex" if base.convexity_class in ("convex", "strongly_convex") else base.convexity_class
        super().__init__(base.dim, base.smoothness + mu_reg, base.strong_convexity + mu_reg,
                         convexity_class=convexity, optimum=optimum, label=f"{base.label}+smooth")
        self.base = base
        self.mu_reg = float(mu_reg)
        self.anchor = anchor

    def value(self, x) -> float:
        x = as_vector(x, self.dim)
        return self.base.value(x) + 0.5 * self.mu_reg * float(np.sum((x - self.anchor) ** 2))

    def grad(self, x) -> np.ndarray:
        x = as_vector(x, self.dim)
        return self.base.grad(x) + self.mu_reg * (x - self.anchor)


def smooth(base, mu_reg: float, anchor):
    """
    Nesterov 平滑包装。

    Args:
        base (ClientObjective | FederatedProblem): 被包装的目标。
        mu_reg (float): 正则强度 (> 0)。
        anchor: 锚点 x⁰。

    Returns:
        SmoothedObjective | FederatedProblem: 对联邦问题逐客户端包装，初始点设为锚点。
    """
    if not isinstance(base, FederatedProblem):
        return SmoothedObjective(base, mu_reg, anchor)
    clients = [SmoothedObjective(c, mu_reg, anchor) for c in base.clients]
    metadata = dict(base.metadata, smoothing=float(mu_reg))
    metadata.pop("zeta_exact", None)
    problem = FederatedProblem(clients, initial_point=anchor, smoothness=base.smoothness + mu_reg,
                               strong_convexity=base.strong_convexity + mu_reg,
                               name=f"{base.name}+smooth", metadata=metadata)
    if all(isinstance(c.base, QuadraticClient) for c in clients):
        A = np.mean([c.base.A for c in clients], axis=0) + mu_reg * np.eye(base.dim)
        b = np.mean([c.base.b for c in clients], axis=0) + mu_reg * as_vector(anchor)
        return problem.with_optimum(np.linalg.solve(A, b))
    if all(c.convexity_class == "strongly_convex" for c in clients):
        return problem.with_optimum(solve_optimum(problem))
    return problem


# --- 数值工具 ---
def solve_optimum(problem: FederatedProblem, tol: float = 1e-7, max_iter: int = 10_000) -> np.ndarray:
    """
    用 L-BFGS-B 数值求强凸问题的最优点。

    Raises:
        NumericalBlowUpError: 求解结束时 ‖∇F‖ 仍大于 tol。
    """
    res = optimize.minimize(problem.value, problem.initial_point.copy(), jac=problem.grad, method="L-BFGS-B",
                            options={"gtol": 1e-3 * tol, "ftol": 0.0, "maxiter": max_iter})
    x = np.asarray(res.x, dtype=np.float64)
    grad_norm = float(np.linalg.norm(problem.grad(x)))
    if not grad_norm <= tol:
        msg = (f"{problem.name} 的最优点求解未收敛: ‖∇F‖={grad_norm:.3g} > {tol:g} "
               f"(迭代 {res.nit} 次, {res.message})")
        logging.error(msg)
        raise NumericalBlowUpError(msg)
    logging.debug(f"solve_optimum: {res.nit} 次迭代, ‖∇F‖={grad_norm:.3g}")
    return x


def finite_difference_gradient(objective, x) -> np.ndarray:
    """中心差分梯度，步长 h = 1e-6·(1 + ‖x‖)。"""
    x = as_vector(x)
    h = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    out = np.empty_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        out[j] = (objective.value(x + e) - objective.value(x - e)) / (2.0 * h)
    return out


def gradient_check(objective, points) -> float:
    """各点上 ‖∇_fd − ∇‖ / max(1, ‖∇‖) 的最大值。"""
    worst = 0.0
    for x in points:
        g = objective.grad(x)
        err = float(np.linalg.norm(finite_difference_gradient(objective, x) - g)) / max(1.0, float(np.linalg.norm(g)))
        worst = max(worst, err)
    return worst


def certify_pl_constant(objective, grid) -> float:
    """网格上 f'(x)² / (2(f(x) − f*)) 的最小值 (f* = f(x*) 取自 objective.optimum)。"""
    f_star = objective.value(objective.optimum)
    ratios = []
    for t in grid:
        gap = objective.value([t]) - f_star
        if gap > 1e-14:
            ratios.append(float(np.sum(objective.grad([t]) ** 2)) / (2.0 * gap))
    return min(ratios)


# --- 问题族 ---
def make_two_client_toy() -> FederatedProblem:
    """F₁(x) = ½(x−1)²，F₂(x) = (x+1)²，全局最优 x* = −1/3。"""
    f1 = QuadraticClient([[1.0]], [1.0], 0.5, label="toy-1")
    f2 = QuadraticClient([[2.0]], [-2.0], 1.0, label="toy-2")
    return FederatedProblem([f1, f2], optimum=[-1.0 / 3.0], initial_point=[0.0], name="two-client-toy",
                            metadata={"family": "toy"})


def _start_with_gap(center: np.ndarray, A: np.ndarray, direction: np.ndarray, delta: float) -> np.ndarray:
    """沿给定方向取 x⁰ 使 ½(x⁰−x*)ᵀA(x⁰−x*) = Δ。"""
    if delta <= 0:
        return center.copy()
    return center + direction * math.sqrt(2.0 * delta / float(direction @ A @ direction))


def make_synthetic_federation(n_clients: int, dim: int, kappa: float, zeta_target: float, seed: int,
                              delta: float = 1.0) -> FederatedProblem:
    """
    共享 Hessian 的二次联邦：F_i(x) = ½xᵀAx − (b̄ + δ_i)ᵀx，Σδ_i = 0。

    ∇F_i − ∇F = −δ_i 与 x 无关，因此 ζ = max_i ‖δ_i‖ 精确等于 zeta_target。
    A 的特征值在 [1, κ] 上等距分布，经随机正交变换旋转。

    Args:
        n_clients (int): 客户端数 N (>= 2)。
        dim (int): 维度 d。
        kappa (float): 条件数 κ (>= 1)。
        zeta_target (float): 目标异质性 ζ (>= 0)。
        seed (int): 构造随机种子。
        delta (float): 默认初始点的初始次优性 Δ。

    Returns:
        FederatedProblem: metadata 含 family="shared_hessian"、zeta_exact、deltas。
    """
    if n_clients < 2 or dim < 1 or kappa < 1 or zeta_target < 0:
        raise ConfigurationError(
            f"共享 Hessian 族参数无效: N={n_clients}, d={dim}, κ={kappa}, ζ={zeta_target}")
    rng = RngStream(seed, tag="synthetic-federation").generator()
    eigenvalues = np.linspace(1.0, kappa, dim) if dim > 1 else np.array([1.0])
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    A = Q @ np.diag(eigenvalues) @ Q.T
    A = 0.5 * (A + A.T)
    b_bar = rng.standard_normal(dim)
    deltas = rng.standard_normal((n_clients, dim))
    deltas -= deltas.mean(axis=0)
    if zeta_target == 0:
        deltas = np.zeros_like(deltas)
    else:
        deltas *= zeta_target / float(np.linalg.norm(deltas, axis=1).max())
    clients = [QuadraticClient(A, b_bar + deltas[i], label=f"client-{i}") for i in range(n_clients)]
    optimum = np.linalg.solve(A, b_bar)
    x0 = _start_with_gap(optimum, A, rng.standard_normal(dim), delta)
    zeta_exact = float(np.linalg.norm(deltas, axis=1).max())
    return FederatedProblem(clients, optimum=optimum, initial_point=x0, smoothness=float(eigenvalues[-1]),
                            strong_convexity=float(eigenvalues[0]),
                            name=f"shared-hessian(N={n_clients},d={dim},kappa={kappa:g},zeta={zeta_target:g})",
                            metadata={"family": "shared_hessian", "zeta_exact": zeta_exact, "zeta": zeta_exact,
                                      "deltas": deltas})


def make_diagonal_quadratic(dim: int, kappa: float, delta: float = 1.0, n_clients: int = 1) -> FederatedProblem:
    """
    对角二次函数 ½xᵀdiag(linspace(1, κ, d))x，最优点 0，x* 处各客户端相同 (ζ = 0)。
    初始误差全部放在曲率最小的坐标上，使 F(x⁰) − F* = Δ。
    """
    if dim < 1 or kappa < 1 or n_clients < 1:
        raise ConfigurationError(f"对角二次族参数无效: d={dim}, κ={kappa}, N={n_clients}")
    eigenvalues = np.linspace(1.0, kappa, dim) if dim > 1 else np.array([1.0])
    A = np.diag(eigenvalues)
    clients = [QuadraticClient(A, np.zeros(dim), label=f"client-{i}") for i in range(n_clients)]
    x0 = np.zeros(dim)
    x0[0] = math.sqrt(2.0 * delta)
    return FederatedProblem(clients, optimum=np.zeros(dim), initial_point=x0, smoothness=float(eigenvalues[-1]),
                            strong_convexity=1.0, name=f"diagonal(d={dim},kappa={kappa:g})",
                            metadata={"family": "diagonal_quadratic", "zeta": 0.0, "zeta_exact": 0.0})


def make_drift_federation(n_clients: int, dim: int, kappa: float, spread: float, offset: float,
                          seed: int, delta: float = 1.0) -> FederatedProblem:
    """
    对角曲率的客户端漂移族。前一半客户端曲率 λ(1+s)、最优偏移 +ω(1−s)，
    后一半曲率 λ(1−s)、偏移 −ω(1+s)，λ = geomspace(1, κ, d)。
    Σ A_i o_i = 0，所以全局最优是随机中心 c，全局 μ = 1、β = κ；
    局部步在各客户端上走向各自最优点，平均后存在不随轮数消失的偏差。
    默认初始点把全部初始次优性放在曲率最小的坐标上。
    """
    if n_clients < 2 or n_clients % 2 or dim < 1 or kappa < 1 or not 0 <= spread < 1:
        raise ConfigurationError(
            f"漂移族参数无效: N={n_clients} (需为偶数), d={dim}, κ={kappa}, s={spread} (需在 [0,1) 内)")
    rng = RngStream(seed, tag="drift-federation").generator()
    lam = np.geomspace(1.0, kappa, dim) if dim > 1 else np.array([1.0])
    center = rng.standard_normal(dim)
    clients = []
    half = n_clients // 2
    for i in range(n_clients):
        stiff = i < half
        curvature = lam * (1.0 + spread) if stiff else lam * (1.0 - spread)
        shift = np.full(dim, offset * (1.0 - spread) if stiff else -offset * (1.0 + spread))
        target = center + shift
        A = np.diag(curvature)
        clients.append(QuadraticClient(A, curvature * target, 0.5 * float(target @ (curvature * target)),
                                       label=f"{'stiff' if stiff else 'soft'}-{i}"))
    direction = np.zeros(dim)
    direction[0] = 1.0
    x0 = _start_with_gap(center, np.diag(lam), direction, delta)
    return FederatedProblem(clients, optimum=center, initial_point=x0, smoothness=float(lam[-1]),
                            strong_convexity=float(lam[0]),
                            name=f"drift(N={n_clients},d={dim},kappa={kappa:g},s={spread:g},omega={offset:g})",
                            metadata={"family": "drift", "spread": spread, "offset": offset})


def make_shuffle_federation(n_clients: int, homogeneity_pct: float, samples_per_class: int, seed: int,
                            reg: float = LOGISTIC_REG, scale: float = 3.0) -> FederatedProblem:
    """
    X% 同质数据洗牌模型的合成版本。

    2N 个类别，每类是中心为 scale·e_c 的单位方差高斯团；每类前 X% 的样本汇入共享池，
    共享池打乱后平均分给所有客户端，其余样本归客户端 c // 2 所有。
    标签取类别奇偶 (偶数类 → 0，奇数类 → 1)，特征末尾追加常数 1 作为偏置。
    目标为 ℓ₂ 正则化逻辑回归，最优点数值求解。
    """
    if not 0 <= homogeneity_pct <= 100:
        msg = f"同质比例 X 必须在 [0, 100] 内，实际为 {homogeneity_pct}"
        logging.error(msg)
        raise ConfigurationError(msg, field="problem.params.homogeneity_pct")
    if n_clients < 1 or samples_per_class < 2:
        raise ConfigurationError(f"洗牌族参数无效: N={n_clients}, samples_per_class={samples_per_class}")
    n_classes = 2 * n_clients
    rng = RngStream(seed, tag="shuffle-federation").generator()
    owned = [[] for _ in range(n_clients)]
    pool = []
    n_shared = int(round(samples_per_class * homogeneity_pct / 100.0))
    for c in range(n_classes):
        centre = np.zeros(n_classes)
        centre[c] = scale
        X = centre + rng.standard_normal((samples_per_class, n_classes))
        rows = np.column_stack([X, np.ones(samples_per_class), np.full(samples_per_class, c % 2)])
        rows = rows[rng.permutation(samples_per_class)]
        pool.append(rows[:n_shared])
        owned[c // 2].append(rows[n_shared:])
    pool = np.concatenate(pool)
    pool = pool[rng.permutation(pool.shape[0])]
    clients = []
    for i, part in enumerate(np.array_split(pool, n_clients)):
        data = np.concatenate(owned[i] + [part])
        clients.append(LogisticClient(data[:, :-1], data[:, -1], reg=reg, label=f"client-{i}"))
    problem = FederatedProblem(clients, strong_convexity=reg,
                               name=f"shuffle(N={n_clients},X={homogeneity_pct:g}%)",
                               metadata={"family": "shuffle", "homogeneity_pct": float(homogeneity_pct)})
    logging.debug(f"洗牌族 X={homogeneity_pct}% 构造完成，估计 β={problem.smoothness:.4g}")
    return problem.with_optimum(solve_optimum(problem))


def make_pl_objective() -> PLScalarClient:
    return PLScalarClient()


def make_pl_problem(start: float = 3.0) -> FederatedProblem:
    """单客户端 PL 问题，默认初始点 x⁰ = 3。"""
    client = make_pl_objective()
    return FederatedProblem([client], optimum=[0.0], initial_point=[start], name="pl-scalar",
                            metadata={"family": "pl"})


# --- 下界困难实例 ---
def proof_mu(l2: float, rounds: int) -> float:
    """一般凸情形下界证明中的 μ = ℓ₂ / (64R²)。"""
    if rounds < 1:
        raise ConfigurationError("按轮数选取 μ 需要 R >= 1，请显式给出 μ")
    return l2 / (64.0 * rounds ** 2)


def _hard_q(l2: float, mu: float) -> tuple[float, float]:
    alpha = math.sqrt(1.0 + 2.0 * l2 / mu)
    return alpha, (alpha - 1.0) / (alpha + 1.0)


def hard_instance_dimension(l2: float, mu: float, rounds: int) -> int:
    """满足 d >= R + log2 / (2 log(1/q)) 的最小偶数维度 (至少 4)。"""
    _, q = _hard_q(l2, mu)
    need = rounds + math.log(2.0) / (2.0 * math.log(1.0 / q))
    d = max(4, math.ceil(need - 1e-12))
    return d + (d % 2)


class HardInstance:
    """
    下界困难实例：
      F₁(x) = −ℓ₂ζ̂x₁ + (Cℓ₂/2)x_d² + (ℓ₂/2)Σ_{i=1}^{d/2−1}(x_{2i+1} − x_{2i})² + (μ/2)‖x‖²
      F₂(x) = (ℓ₂/2)Σ_{i=1}^{d/2}(x_{2i} − x_{2i−1})² + (μ/2)‖x‖²
    F = (F₁ + F₂)/2。C = 1 − q 时最优点为 x*_j = ζ̂q^j/(1−q) (1 起始下标)。
    """

    def __init__(self, l2: float, zeta_hat: float, mu: float, dim: int, beta: float | None = None,
                 C: float | None = None):
        if dim % 2 or dim < 4:
            msg = f"困难实例维度 d 必须为 >= 4 的偶数，实际为 {dim}"
            logging.error(msg)
            raise ConfigurationError(msg, field="problem.params.dim")
        if l2 <= 0 or mu < 0 or zeta_hat <= 0:
            raise ConfigurationError(f"困难实例参数无效: ℓ₂={l2}, ζ̂={zeta_hat}, μ={mu}")
        self.l2 = float(l2)
        self.zeta_hat = float(zeta_hat)
        self.mu = float(mu)
        self.dim = dim
        self.beta = float(beta) if beta is not None else self.mu + 4.0 * self.l2
        if self.l2 > (self.beta - self.mu) / 4.0 * (1 + 1e-12):
            raise ConfigurationError(f"需要 ℓ₂ <= (β − μ)/4，实际 ℓ₂={l2}, β={self.beta}, μ={mu}")
        if mu > 0:
            self.alpha, self.q = _hard_q(self.l2, self.mu)
        else:
            self.alpha, self.q = math.inf, 1.0
        self.C = float(C) if C is not None else (1.0 - self.q if mu > 0 else 1.0)
        self.client_1, self.client_2 = self._build_clients()

    def _build_clients(self) -> tuple[QuadraticClient, QuadraticClient]:
        d, l2 = self.dim, self.l2
        pair = l2 * np.array([[1.0, -1.0], [-1.0, 1.0]])
        A1 = self.mu * np.eye(d)
        A2 = self.mu * np.eye(d)
        for a in range(1, d - 2, 2):  # (x_{2i}, x_{2i+1})，0 起始为 (1,2), (3,4), ...
            A1[a:a + 2, a:a + 2] += pair
        A1[d - 1, d - 1] += self.C * l2
        for a in range(0, d, 2):  # (x_{2i−1}, x_{2i})，0 起始为 (0,1), (2,3), ...
            A2[a:a + 2, a:a + 2] += pair
        b1 = np.zeros(d)
        b1[0] = l2 * self.zeta_hat
        return (QuadraticClient(A1, b1, label="hard-F1"), QuadraticClient(A2, np.zeros(d), label="hard-F2"))

    def grad1(self, x) -> np.ndarray:
        return self.client_1.grad(x)

    def grad2(self, x) -> np.ndarray:
        return self.client_2.grad(x)

    def value1(self, x) -> float:
        return self.client_1.value(x)

    def value2(self, x) -> float:
        return self.client_2.value(x)

    @property
    def clients(self) -> list:
        return [self.client_1, self.client_2]

    def closed_form_optimum(self) -> np.ndarray:
        if self.mu <= 0:
            raise ConfigurationError("μ = 0 时困难实例没有闭式最优点")
        j = np.arange(1, self.dim + 1)
        return self.zeta_hat * self.q ** j / (1.0 - self.q)

    def client_optima_closed_form(self) -> tuple[np.ndarray, np.ndarray]:
        x1 = np.zeros(self.dim)
        x1[0] = self.l2 * self.zeta_hat / self.mu
        return x1, np.zeros(self.dim)

    def initial_gap_bound(self) -> float:
        """F(0) − F(x*) <= qℓ₂ζ̂² / (4(1−q))。"""
        return self.q * self.l2 * self.zeta_hat ** 2 / (4.0 * (1.0 - self.q))

    def lower_bound(self, rounds: int) -> float:
        return hard_instance_lower_bound(self, rounds)

    def problem(self) -> FederatedProblem:
        H = 0.5 * (self.client_1.A + self.client_2.A)
        b = 0.5 * (self.client_1.b + self.client_2.b)
        return FederatedProblem(self.clients, optimum=np.linalg.solve(H, b), initial_point=np.zeros(self.dim),
                                smoothness=self.beta, strong_convexity=self.mu,
                                name=f"hard(l2={self.l2:g},zeta={self.zeta_hat:g},mu={self.mu:g},d={self.dim})",
                                metadata={"family": "hard_instance", "instance": self})


def make_hard_instance(l2: float, zeta_hat: float, mu: float, dim: int, beta: float | None = None) -> HardInstance:
    return HardInstance(l2, zeta_hat, mu, dim, beta=beta)


def hard_instance_lower_bound(instance: HardInstance, rounds: int) -> float:
    """
    R 轮后任意零响应算法的次优性下界 ζ̂²μq² / (16(1−q)²(1−q²)) · q^{2R}。

    Raises:
        ConfigurationError: μ = 0，或维度不满足 d >= R + log2 / (2 log(1/q))。
    """
    if instance.mu <= 0:
        msg = "强凸下界需要 μ > 0"
        logging.error(msg)
        raise ConfigurationError(msg, field="mu")
    q = instance.q
    need = rounds + math.log(2.0) / (2.0 * math.log(1.0 / q))
    if instance.dim < need:
        msg = f"维度 d={instance.dim} 不满足 d >= R + log2/(2log(1/q)) = {need:.3f}，请增大 d"
        logging.error(msg)
        raise ConfigurationError(msg, field="dim")
    coefficient = instance.zeta_hat ** 2 * instance.mu * q ** 2 / (16.0 * (1.0 - q) ** 2 * (1.0 - q ** 2))
    return coefficient * q ** (2 * rounds)
