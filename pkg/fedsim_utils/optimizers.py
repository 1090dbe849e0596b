# -*- coding: utf-8 -*-
"""
单一方法优化器：SGD、ASG (AC-SA)、FedAvg、SAGA、SSNM，以及阶段式步长减半的 M- 变体。

每个方法由一个显式状态 (不可变 dataclass) 和一个纯轮次函数
``xxx_round(state, problem, S, K, oracle, stream) -> state'`` 组成；
``run_optimizer`` 负责初始化、阶段调度、诊断记录与数值发散检测。
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ConfigurationError, RngStream, RoundRecord, as_vector, ensure_finite, NumericalBlowUpError
from .federation import FederatedProblem, Oracle, estimate_noise_variance, sample_clients
from .objectives import smooth

BASE_METHODS = ("sgd", "asg", "fedavg", "saga", "ssnm")
MULTISTAGE_METHODS = ("m-sgd", "m-fedavg", "m-asg")
METHODS = BASE_METHODS + MULTISTAGE_METHODS
LOCAL_METHODS = ("fedavg", "m-fedavg")
AVERAGING_MODES = ("none", "weighted")
SAGA_OPTIONS = ("I", "II")


@dataclass(frozen=True)
class OptimizerSpec:
    """
    一个优化器运行的完整参数。未给出的 eta / tau / phi 由定理预设推导。

    clients_per_round 为 None 时表示全参与 (S = N)。
    """
    method: str
    rounds: int
    eta: float | None = None
    clients_per_round: int | None = None
    local_steps: int = 1
    averaging: str = "none"
    saga_option: str = "I"
    tau: float | None = None
    phi: float | None = None
    inner_steps: int | None = None
    inner_batch: int | None = None
    restart_rounds: int | None = None
    smoothing: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"未知的优化方法 '{self.method}'，有效值为: {', '.join(METHODS)}", field="method")
        if self.rounds < 0:
            raise ConfigurationError(f"轮数不能为负: {self.rounds}", field="rounds")
        if self.eta is not None and not (self.eta > 0 and math.isfinite(self.eta)):
            raise ConfigurationError(f"步长 eta 必须为有限正数，实际为 {self.eta}", field="eta")
        if self.local_steps < 1:
            raise ConfigurationError(f"local_steps 必须 >= 1，实际为 {self.local_steps}", field="local_steps")
        if self.clients_per_round is not None and self.clients_per_round < 1:
            raise ConfigurationError(f"clients_per_round 必须 >= 1，实际为 {self.clients_per_round}",
                                     field="clients_per_round")
        if self.averaging not in AVERAGING_MODES:
            raise ConfigurationError(f"无效的平均方式 '{self.averaging}'", field="averaging")
        if self.saga_option not in SAGA_OPTIONS:
            raise ConfigurationError(f"无效的 SAGA 选项 '{self.saga_option}'，有效值为 I / II", field="saga_option")
        if self.tau is not None and not 0 < self.tau < 1:
            raise ConfigurationError(f"τ 必须在 (0, 1) 内，实际为 {self.tau}", field="tau")
        if self.phi is not None and self.phi <= 0:
            raise ConfigurationError(f"φ 必须 > 0，实际为 {self.phi}", field="phi")
        if self.restart_rounds is not None and self.restart_rounds < 1:
            raise ConfigurationError(f"restart_rounds 必须 >= 1，实际为 {self.restart_rounds}", field="restart_rounds")
        if self.smoothing is not None and self.smoothing <= 0:
            raise ConfigurationError(f"smoothing 必须 > 0，实际为 {self.smoothing}", field="smoothing")

    @property
    def label(self) -> str:
        return self.name or self.method

    @property
    def base_method(self) -> str:
        return self.method[2:] if self.method.startswith("m-") else self.method

    @property
    def is_local(self) -> bool:
        return self.method in LOCAL_METHODS

    @property
    def is_multistage(self) -> bool:
        return self.method in MULTISTAGE_METHODS


# --- 状态 ---
@dataclass(frozen=True)
class SgdState:
    x: np.ndarray
    eta: float
    mu: float = 0.0
    averaging: str = "none"
    x_avg: np.ndarray | None = None
    weight_ratio: float = 1.0  # W_r / w_r

    @property
    def output(self) -> np.ndarray:
        return self.x_avg if self.averaging == "weighted" else self.x


@dataclass(frozen=True)
class AsgState:
    x: np.ndarray
    x_ag: np.ndarray
    mu: float
    phi: float
    r: int = 1  # 阶段内的轮次计数 (从 1 开始)
    stage: int = 1

    @property
    def output(self) -> np.ndarray:
        return self.x_ag


@dataclass(frozen=True)
class FedAvgState:
    x: np.ndarray
    eta: float
    steps: int
    batch: int

    @property
    def output(self) -> np.ndarray:
        return self.x


@dataclass(frozen=True)
class SagaState:
    x: np.ndarray
    eta: float
    controls: np.ndarray  # N×d
    control_mean: np.ndarray
    option: str = "I"

    @property
    def output(self) -> np.ndarray:
        return self.x


@dataclass(frozen=True)
class SsnmState:
    x: np.ndarray
    eta: float
    tau: float
    mu: float
    anchors: np.ndarray  # φ_i，N×d
    controls: np.ndarray  # ∇f̃_i(φ_i)，N×d
    control_mean: np.ndarray

    @property
    def output(self) -> np.ndarray:
        return self.x


# --- 共用小工具 ---
def _subset_gradients(problem, subset, x, K, oracle: Oracle, stream: RngStream, tag="grad") -> np.ndarray:
    return np.stack([oracle.grad(problem, i, x, K, stream.child(client=i, step=0, tag=tag), purpose=tag)
                     for i in subset])


def _fedavg_schedule(K: int, inner_steps: int | None, inner_batch: int | None) -> tuple[int, int]:
    """(本地步数, 每步样本数)。默认 √K × √K，K 必须是完全平方数。"""
    if inner_steps is None and inner_batch is None:
        root = math.isqrt(K)
        if root * root != K:
            msg = f"FedAvg 的 K={K} 不是完全平方数，请改用平方数或显式设置 inner_steps / inner_batch"
            logging.error(msg)
            raise ConfigurationError(msg, field="local_steps")
        return root, root
    steps, batch = inner_steps, inner_batch
    if steps is None:
        steps = K // batch if K % batch == 0 else 0
    if batch is None:
        batch = K // steps if K % steps == 0 else 0
    if steps < 1 or batch < 1 or steps * batch != K:
        msg = f"inner_steps × inner_batch 必须等于 K={K} (实际 {inner_steps} × {inner_batch})"
        logging.error(msg)
        raise ConfigurationError(msg, field="inner_steps")
    return steps, batch


def saga_direction(sampled_grads, sampled_controls, control_mean) -> np.ndarray:
    """方差缩减方向 (1/S)Σ(g_i − c_i) + c̄。"""
    return np.mean(np.asarray(sampled_grads) - np.asarray(sampled_controls), axis=0) + control_mean


def ssnm_prox(x_prev, g, eta: float, mu: float) -> np.ndarray:
    """argmin_x (μ/2)‖x‖² + ⟨g, x⟩ + ‖x_prev − x‖²/(2η) 的闭式解。"""
    return (x_prev - eta * g) / (1.0 + eta * mu)


# --- 轮次函数 ---
def sgd_round(state: SgdState, problem: FederatedProblem, S: int, K: int, oracle: Oracle,
              stream: RngStream) -> SgdState:
    subset = sample_clients(problem.n_clients, S, stream.child(tag="sample"))
    g = np.mean(_subset_gradients(problem, subset, state.x, K, oracle, stream), axis=0)
    x = state.x - state.eta * g
    if state.averaging != "weighted":
        return replace(state, x=x)
    ratio = 1.0 + (1.0 - state.eta * state.mu) * state.weight_ratio
    x_avg = state.x_avg + (x - state.x_avg) / ratio
    return replace(state, x=x, x_avg=x_avg, weight_ratio=ratio)


def asg_round(state: AsgState, problem: FederatedProblem, S: int, K: int, oracle: Oracle,
              stream: RngStream) -> AsgState:
    r, mu = state.r, state.mu
    alpha = 2.0 / (r + 1)
    gamma = 4.0 * state.phi / (r * (r + 1))
    denom = gamma + (1.0 - alpha ** 2) * mu
    if denom <= 0:
        msg = f"ASG 分母 γ_r + (1−α_r²)μ = {denom} 非正 (r={r})"
        logging.error(msg)
        raise ConfigurationError(msg, field="phi")
    x_md = ((1 - alpha) * (mu + gamma) * state.x_ag + alpha * ((1 - alpha) * mu + gamma) * state.x) / denom
    subset = sample_clients(problem.n_clients, S, stream.child(tag="sample"))
    g = np.mean(_subset_gradients(problem, subset, x_md, K, oracle, stream), axis=0)
    x = (alpha * mu * x_md + ((1 - alpha) * mu + gamma) * state.x - alpha * g) / (mu + gamma)
    x_ag = alpha * x + (1 - alpha) * state.x_ag
    return replace(state, x=x, x_ag=x_ag, r=r + 1)


def fedavg_round(state: FedAvgState, problem: FederatedProblem, S: int, K: int, oracle: Oracle,
                 stream: RngStream) -> FedAvgState:
    subset = sample_clients(problem.n_clients, S, stream.child(tag="sample"))
    displacements = []
    for i in subset:
        y = state.x.copy()
        acc = np.zeros_like(y)
        for k in range(state.steps):
            g = oracle.grad(problem, i, y, state.batch, stream.child(client=i, step=k, tag="grad"))
            acc += g
            y = y - state.eta * g
        oracle.log_point(stream.child(client=i, step=state.steps), i, y, "local-end")
        displacements.append(acc)
    return replace(state, x=state.x - state.eta * np.mean(displacements, axis=0))


def saga_warm_start(problem: FederatedProblem, x, K: int, oracle: Oracle, stream: RngStream) -> np.ndarray:
    """在 x 处为全部客户端查询控制变量 c_i (花费 N·K 次梯度调用)。"""
    return _subset_gradients(problem, range(problem.n_clients), x, K, oracle, stream, tag="warm")


def saga_round(state: SagaState, problem: FederatedProblem, S: int, K: int, oracle: Oracle,
               stream: RngStream) -> SagaState:
    subset = sample_clients(problem.n_clients, S, stream.child(tag="sample"))
    grads = _subset_gradients(problem, subset, state.x, K, oracle, stream)
    g = saga_direction(grads, state.controls[list(subset)], state.control_mean)
    controls = state.controls.copy()
    if state.option == "I":
        controls[list(subset)] = grads
    else:
        # Option II：另抽一组独立客户端，在本轮起点刷新控制变量
        refresh = sample_clients(problem.n_clients, S, stream.child(tag="refresh-sample"))
        controls[list(refresh)] = _subset_gradients(problem, refresh, state.x, K, oracle, stream, tag="refresh")
    return replace(state, x=state.x - state.eta * g, controls=controls, control_mean=controls.mean(axis=0))


def ssnm_tilde_grads(problem, subset, points, mu: float, K: int, oracle: Oracle, stream: RngStream,
                     tag: str) -> np.ndarray:
    """∇f̃_i(p_i) = ∇F_i(p_i) − μ·p_i，points 与 subset 一一对应。"""
    return np.stack([oracle.grad(problem, i, p, K, stream.child(client=i, step=0, tag=tag), purpose=tag) - mu * p
                     for i, p in zip(subset, points)])


def ssnm_round(state: SsnmState, problem: FederatedProblem, S: int, K: int, oracle: Oracle,
               stream: RngStream) -> SsnmState:
    subset = list(sample_clients(problem.n_clients, S, stream.child(tag="sample")))
    y = state.tau * state.x + (1.0 - state.tau) * state.anchors[subset]
    grads = ssnm_tilde_grads(problem, subset, y, state.mu, K, oracle, stream, tag="grad")
    g = saga_direction(grads, state.controls[subset], state.control_mean)
    x = ssnm_prox(state.x, g, state.eta, state.mu)
    # 独立的第二组客户端刷新锚点与控制变量
    refresh = list(sample_clients(problem.n_clients, S, stream.child(tag="refresh-sample")))
    anchors = state.anchors.copy()
    controls = state.controls.copy()
    anchors[refresh] = state.tau * x + (1.0 - state.tau) * anchors[refresh]
    controls[refresh] = ssnm_tilde_grads(problem, refresh, anchors[refresh], state.mu, K, oracle, stream,
                                         tag="refresh")
    return replace(state, x=x, anchors=anchors, controls=controls, control_mean=controls.mean(axis=0))


ROUND_FUNCTIONS = {
    "sgd": sgd_round,
    "asg": asg_round,
    "fedavg": fedavg_round,
    "saga": saga_round,
    "ssnm": ssnm_round,
}


# --- 参数预设 ---
def problem_convexity(problem: FederatedProblem) -> str:
    classes = {c.convexity_class for c in problem.clients}
    for name in ("nonconvex", "pl", "convex"):
        if name in classes:
            return name
    return "strongly_convex"


def variance_term(problem: FederatedProblem, sigma_sq: float, S: int, K: int, x=None) -> float:
    """c = σ²/(SK) + (1 − (S−1)/(N−1))·ζ²/S，全参与时采样项为 0。"""
    N = problem.n_clients
    sampling = 0.0
    if S < N:
        zeta = problem.heterogeneity_hint(x)
        sampling = (1.0 - (S - 1) / (N - 1)) * zeta ** 2 / S
    return sigma_sq / (S * K) + sampling


def sgd_stepsize_preset(beta: float, mu: float, delta: float, rounds: int, c: float) -> float:
    """
    SGD 定理步长。

    强凸 / PL: η = min{1/β, log(max{e, μ²ΔR/(βc)}) / (μR)}；
    一般凸: η = min{1/β, √(Δ/(βcR))}；c = 0 时退化为 1/β。
    """
    if c <= 0 or rounds < 1:
        return 1.0 / beta
    if mu > 0:
        return min(1.0 / beta, math.log(max(math.e, mu ** 2 * delta * rounds / (beta * c))) / (mu * rounds))
    return min(1.0 / beta, math.sqrt(delta / (beta * c * rounds)))


def fedavg_stepsize_preset(beta: float) -> float:
    return 1.0 / beta


def asg_stage_schedule(beta: float, mu: float, c: float, delta: float, stage: int) -> tuple[int, float]:
    """
    第 s 阶段的 (R_s, φ_s)：
      R_s = ⌈max{4√(4β/μ), 128c / (3μΔ2^{−(s+1)})}⌉
      φ_s = max{2β, [μc / (3Δ2^{−(s−1)}R_s(R_s+1)(R_s+2))]^{1/2}}
    """
    if mu <= 0:
        msg = "ASG 阶段调度需要 μ > 0；一般凸问题请先设置 smoothing"
        logging.error(msg)
        raise ConfigurationError(msg, field="smoothing")
    delta = delta if delta and delta > 0 else 1.0
    R_s = math.ceil(max(4.0 * math.sqrt(4.0 * beta / mu), 128.0 * c / (3.0 * mu * delta * 2.0 ** -(stage + 1))))
    phi_s = max(2.0 * beta, math.sqrt(mu * c / (3.0 * delta * 2.0 ** -(stage - 1) * R_s * (R_s + 1) * (R_s + 2))))
    return R_s, phi_s


def saga_stepsize_preset(beta: float, mu: float, n_clients: int, S: int, convexity: str = "strongly_convex") -> float:
    """强凸: min{1/(26β), S/(9μN)}；PL: 1/(3β(N/S)^{2/3})。"""
    if convexity == "pl":
        return 1.0 / (3.0 * beta * (n_clients / S) ** (2.0 / 3.0))
    if mu <= 0:
        return 1.0 / (26.0 * beta)
    return min(1.0 / (26.0 * beta), S / (9.0 * mu * n_clients))


def ssnm_presets(beta: float, mu: float, n_clients: int, S: int) -> tuple[float, float]:
    """
    SSNM 的 (η, τ)。

    (N/S)/κ > 3/4 时 η = 1/(2μ(N/S))，否则 η = √(1/(3μ(N/S)β))；两种情况 τ = (N/S)ημ/(1+ημ)。
    """
    if mu <= 0:
        msg = "SSNM 预设需要 μ > 0"
        logging.error(msg)
        raise ConfigurationError(msg, field="eta")
    ratio = n_clients / S
    kappa = beta / mu
    if ratio / kappa > 0.75:
        eta = 1.0 / (2.0 * mu * ratio)
    else:
        eta = math.sqrt(1.0 / (3.0 * mu * ratio * beta))
    tau = ratio * eta * mu / (1.0 + eta * mu)
    return eta, tau


def _checked(value: float, name: str) -> float:
    if not (math.isfinite(value) and value > 0):
        msg = f"预设参数 {name} 计算结果无效 ({value})，请显式配置"
        logging.error(msg)
        raise ConfigurationError(msg, field=name)
    return value


# --- 阶段式步长 ---
def multistage_schedule(base_eta: float, mu: float, k_eff: int, total_rounds: int) -> tuple[list, bool]:
    """
    阶段列表 [(s, η_s, R_s)]：η_s = η/2^{s−1}，R_s = ⌈2^s·log4 / (μηK_eff)⌉，
    最后一个阶段截断到剩余轮数。

    Returns:
        tuple[list, bool]: 阶段列表，以及总轮数是否小于 R₁ (单个截断阶段)。
    """
    if mu <= 0:
        msg = "阶段式步长需要 μ > 0"
        logging.error(msg)
        raise ConfigurationError(msg, field="method")
    stages = []
    used = 0
    s = 1
    truncated = False
    while used < total_rounds:
        length = max(1, math.ceil(2.0 ** s * math.log(4.0) / (mu * base_eta * k_eff) - 1e-9))
        if s == 1 and length > total_rounds:
            truncated = True
            logging.warning(f"总轮数 R={total_rounds} 小于第一阶段长度 R₁={length}，只运行一个截断阶段")
        length = min(length, total_rounds - used)
        stages.append((s, base_eta / 2.0 ** (s - 1), length))
        used += length
        s += 1
    return stages, truncated


# --- 运行 ---
@dataclass
class OptimizerRun:
    """一次优化器运行的结果。iterates[0] 为起点，iterates[r] 为第 r 轮后的输出点。"""
    x_hat: np.ndarray
    records: list
    iterates: list
    events: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    query_log: list = field(default_factory=list)


def make_record(problem: FederatedProblem, x, round_index: int, oracle: Oracle, phase: str = "") -> RoundRecord:
    g = problem.grad(x)
    sub = problem.suboptimality(x)
    if sub is not None and not math.isfinite(sub):
        msg = f"数值发散: 第 {round_index} 轮次优性为 {sub}"
        logging.error(msg)
        raise NumericalBlowUpError(msg, round_index=round_index)
    return RoundRecord(round_index, sub, float(g @ g), problem.dist_sq(x), oracle.grad_calls, oracle.value_calls,
                       phase)


class _MethodSetup:
    """把 OptimizerSpec 解析成初始状态与逐阶段参数。"""

    def __init__(self, spec: OptimizerSpec, problem: FederatedProblem, oracle: Oracle, x0: np.ndarray,
                 stream: RngStream):
        self.spec = spec
        self.problem = problem
        self.oracle = oracle
        self.x0 = x0
        self.stream = stream
        self._sigma_sq = None
        self.S = spec.clients_per_round or problem.n_clients
        if self.S > problem.n_clients:
            msg = f"每轮客户端数 S={self.S} 超过客户端总数 N={problem.n_clients}"
            logging.error(msg)
            raise ConfigurationError(msg, field="clients_per_round")
        self.K = spec.local_steps
        self.beta = problem.smoothness
        self.mu = problem.strong_convexity
        self.metadata = {"method": spec.method, "S": self.S, "K": self.K}

    def sigma_sq(self) -> float:
        if self._sigma_sq is None:
            config = self.oracle.config
            if config.noise_model == "gaussian":
                self._sigma_sq = config.sigma ** 2
            else:
                self._sigma_sq = estimate_noise_variance(self.problem, self.x0, config, self.stream.child(tag="variance"))
        return self._sigma_sq

    def delta(self) -> float:
        gap = self.problem.initial_gap(self.x0)
        return gap if gap is not None and gap > 0 else 1.0

    def base_eta(self) -> float:
        spec, base = self.spec, self.spec.base_method
        if spec.eta is not None:
            return spec.eta
        if base == "sgd":
            c = variance_term(self.problem, self.sigma_sq(), self.S, self.K, self.x0)
            eta = sgd_stepsize_preset(self.beta, self.mu, self.delta(), spec.rounds, c)
        elif base == "saga":
            eta = saga_stepsize_preset(self.beta, self.mu, self.problem.n_clients, self.S,
                                       problem_convexity(self.problem))
        elif base == "ssnm":
            eta, _ = ssnm_presets(self.beta, self.mu, self.problem.n_clients, self.S)
        else:
            eta = fedavg_stepsize_preset(self.beta)
        return _checked(eta, "eta")

    def initial_state(self, eta: float, stream: RngStream):
        spec, base, x0 = self.spec, self.spec.base_method, self.x0
        if base == "sgd":
            return SgdState(x0.copy(), eta, self.mu, spec.averaging, x0.copy(), 1.0)
        if base == "fedavg":
            steps, batch = _fedavg_schedule(self.K, spec.inner_steps, spec.inner_batch)
            self.metadata.update(inner_steps=steps, inner_batch=batch)
            return FedAvgState(x0.copy(), eta, steps, batch)
        if base == "asg":
            return AsgState(x0.copy(), x0.copy(), self.mu, self.asg_phi(1, eta))
        if base == "saga":
            controls = saga_warm_start(self.problem, x0, self.K, self.oracle, stream)
            return SagaState(x0.copy(), eta, controls, controls.mean(axis=0), spec.saga_option)
        # ssnm
        tau = spec.tau
        if tau is None:
            _, tau = ssnm_presets(self.beta, self.mu, self.problem.n_clients, self.S)
        if not 0 < tau < 1:
            msg = f"SSNM 的 τ={tau} 不在 (0, 1) 内"
            logging.error(msg)
            raise ConfigurationError(msg, field="tau")
        self.metadata["tau"] = tau
        anchors = np.tile(x0, (self.problem.n_clients, 1))
        controls = ssnm_tilde_grads(self.problem, range(self.problem.n_clients), anchors, self.mu, self.K,
                                    self.oracle, stream, tag="warm")
        return SsnmState(x0.copy(), eta, tau, self.mu, anchors, controls, controls.mean(axis=0))

    def asg_phi(self, stage: int, eta: float | None = None) -> float:
        if self.spec.phi is not None:
            return self.spec.phi
        if self.spec.is_multistage:
            return 2.0 / eta
        return self.asg_stage(stage)[1]

    def asg_stage(self, stage: int) -> tuple[int, float]:
        c = variance_term(self.problem, self.sigma_sq(), self.S, self.K, self.x0)
        R_s, phi_s = asg_stage_schedule(self.beta, self.mu, c, self.delta(), stage)
        if self.spec.restart_rounds is not None:
            R_s = self.spec.restart_rounds
        return R_s, (self.spec.phi if self.spec.phi is not None else phi_s)


def run_optimizer(spec: OptimizerSpec, problem: FederatedProblem, oracle: Oracle, seed: int, x0=None,
                  round_offset: int = 0, phase: str = "", record_initial: bool = True) -> OptimizerRun:
    """
    运行一个优化器 spec.rounds 轮。

    Args:
        spec (OptimizerSpec): 方法与参数。
        problem (FederatedProblem): 目标问题；设置 smoothing 时在平滑问题上优化，记录仍按原问题计算。
        oracle (Oracle): 计数预言机 (链式运行中跨阶段共享)。
        seed (int): 随机流种子。
        x0: 起点，默认 problem.initial_point。
        round_offset (int): 轮次编号偏移 (链式运行的第二阶段)。
        phase (str): 写入记录的阶段标签。
        record_initial (bool): 是否记录起点行。

    Returns:
        OptimizerRun: 输出点、逐轮记录、迭代点、阶段事件与元数据。

    Raises:
        ConfigurationError: 参数无效或预设计算失败。
        NumericalBlowUpError: 迭代点出现非有限值。
    """
    x0 = problem.initial_point.copy() if x0 is None else as_vector(x0, problem.dim)
    work = smooth(problem, spec.smoothing, x0) if spec.smoothing else problem
    base_stream = RngStream(seed)
    start_stream = base_stream.child(round=round_offset)
    setup = _MethodSetup(spec, work, oracle, x0, start_stream)
    eta = setup.base_eta()
    round_fn = ROUND_FUNCTIONS[spec.base_method]
    events = []
    metadata = dict(setup.metadata, eta=eta, name=spec.label)

    stage_starts = {}
    if spec.is_multistage:
        k_eff = setup.K if spec.is_local else 1
        stages, truncated = multistage_schedule(eta, setup.mu, k_eff, spec.rounds)
        start = 1
        for s, eta_s, length in stages:
            stage_starts[start] = (s, eta_s)
            start += length
        metadata.update(stages=[(s, e, n) for s, e, n in stages], truncated=truncated)

    state = setup.initial_state(eta, start_stream)
    asg_stage_end = None
    if spec.base_method == "asg" and not spec.is_multistage:
        R_1, phi_1 = setup.asg_stage(1)
        asg_stage_end = R_1
        metadata.update(phi=phi_1, stage_rounds=[R_1])
    if spec.base_method == "saga":
        metadata["option"] = spec.saga_option
        if spec.restart_rounds:
            metadata["variate_restart"] = "re-warm-start"

    out = state.output
    records = [make_record(problem, out, round_offset, oracle, phase)] if record_initial else []
    iterates = [out.copy()]
    logging.debug(f"[{spec.label}] 开始运行: R={spec.rounds}, S={setup.S}, K={setup.K}, η={eta:.6g}")

    for r in range(1, spec.rounds + 1):
        global_r = round_offset + r
        stream = base_stream.child(round=global_r)
        if r in stage_starts:
            s, eta_s = stage_starts[r]
            if spec.base_method == "asg":
                state = replace(state, x=state.x_ag.copy(), r=1, stage=s, phi=setup.asg_phi(s, eta_s))
            else:
                state = replace(state, eta=eta_s)
            events.append({"round": global_r, "event": "stage", "stage": s, "eta": eta_s})
        state = round_fn(state, work, setup.S, setup.K, oracle, stream)
        out = ensure_finite(state.output, round_index=global_r)
        records.append(make_record(problem, out, global_r, oracle, phase))
        iterates.append(out.copy())

        if asg_stage_end is not None and r == asg_stage_end and r < spec.rounds:
            next_stage = state.stage + 1
            R_s, phi_s = setup.asg_stage(next_stage)
            state = replace(state, x=state.x_ag.copy(), r=1, stage=next_stage, phi=phi_s)
            asg_stage_end = r + R_s
            metadata["stage_rounds"].append(R_s)
            events.append({"round": global_r, "event": "restart", "stage": next_stage, "phi": phi_s})
        if spec.base_method == "saga" and spec.restart_rounds and r % spec.restart_rounds == 0 and r < spec.rounds:
            controls = saga_warm_start(work, state.x, setup.K, oracle, stream)
            state = replace(state, controls=controls, control_mean=controls.mean(axis=0))
            events.append({"round": global_r, "event": "restart"})

    final = records[-1] if records else None
    if final is not None and final.suboptimality is not None:
        logging.debug(f"[{spec.label}] 完成: 最终次优性 {final.suboptimality:.6e}")
    return OptimizerRun(state.output.copy(), records, iterates, events, metadata, oracle.queries)
