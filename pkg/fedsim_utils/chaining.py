# -*- coding: utf-8 -*-
"""
FedChain 编排：先运行本地更新方法，再用带噪声的函数值比较在起点与本地阶段输出之间择优，
最后以全局更新方法收尾。另含部分参与的 FedAvg→SGD 两阶段流程。
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import ConfigurationError, RngStream, as_vector, ensure_finite
from .federation import FederatedProblem, Oracle, OracleConfig, sample_clients
from .optimizers import (OptimizerRun, OptimizerSpec, SgdState, make_record, multistage_schedule, run_optimizer,
                         sgd_round)

SPLIT_RULES = ("half", "stepsize")


@dataclass(frozen=True)
class ChainConfig:
    """
    两阶段链。local 可以是另一个 ChainConfig (三阶段变体)。
    各阶段的 rounds 即该阶段实际运行的轮数。
    """
    local: "OptimizerSpec | ChainConfig"
    global_spec: OptimizerSpec
    selection_clients: int | None = None  # S，None 表示全部客户端
    selection_samples: int | None = None  # K̂，None 表示取本地方法的 K
    share_draws: bool = True
    name: str = ""

    @property
    def local_rounds(self) -> int:
        return self.local.rounds

    @property
    def rounds(self) -> int:
        return self.local.rounds + self.global_spec.rounds

    @property
    def local_steps(self) -> int:
        return self.local.local_steps

    @property
    def label(self) -> str:
        return self.name or f"{self.local.label}->{self.global_spec.label}"


def split_rounds(total: int, split, local_spec: OptimizerSpec, problem: FederatedProblem) -> int:
    """
    按切分规则计算本地阶段轮数 R_local。

    split: "half" (默认，R/2)、(0, 1) 内的小数比例，或 "stepsize"
    (阶段式本地方法的步长衰减到 η/K 时切换)。
    """
    if split is None or split == "half":
        return total // 2
    if split == "stepsize":
        if not isinstance(local_spec, OptimizerSpec) or not local_spec.is_multistage:
            msg = "split=stepsize 需要阶段式本地方法 (m-fedavg / m-sgd / m-asg)"
            logging.error(msg)
            raise ConfigurationError(msg, field="split")
        eta = local_spec.eta if local_spec.eta is not None else 1.0 / problem.smoothness
        k_eff = local_spec.local_steps if local_spec.is_local else 1
        stages, _ = multistage_schedule(eta, problem.strong_convexity, k_eff, total)
        threshold = eta / local_spec.local_steps
        r_local = 0
        for _, eta_s, length in stages:
            if eta_s <= threshold * (1 + 1e-12):
                break
            r_local += length
        return min(r_local, total)
    if isinstance(split, (int, float)) and not isinstance(split, bool) and 0 <= split <= 1:
        return int(round(split * total))
    msg = f"无效的切分规则 '{split}'，有效值为 half / stepsize / [0, 1] 内的比例"
    logging.error(msg)
    raise ConfigurationError(msg, field="split")


def make_chain(local, global_spec: OptimizerSpec, total_rounds: int, problem: FederatedProblem, split="half",
               selection_clients=None, selection_samples=None, share_draws=True, name="") -> ChainConfig:
    """按总轮数与切分规则生成 ChainConfig，本地/全局阶段轮数之和等于 total_rounds。"""
    if isinstance(local, ChainConfig):
        r_local = local.rounds
    else:
        r_local = split_rounds(total_rounds, split, local, problem)
        local = replace(local, rounds=r_local)
    if r_local > total_rounds:
        msg = f"本地阶段轮数 {r_local} 超过总预算 {total_rounds}"
        logging.error(msg)
        raise ConfigurationError(msg, field="split")
    return ChainConfig(local, replace(global_spec, rounds=total_rounds - r_local), selection_clients,
                       selection_samples, share_draws, name)


def select_better(x0, x_half, problem: FederatedProblem, S: int, K_hat: int, oracle: Oracle, stream: RngStream,
                  share_draws: bool = True) -> np.ndarray:
    """
    在共享客户端子集上用函数值估计比较两个候选点，返回估计值较小者；相等时返回 x_half。
    花费 2·S·K̂ 次函数值调用。

    Args:
        share_draws (bool): True 时两次查询共用同一组样本 (加性噪声下比较是精确的)。
    """
    if S < 1 or K_hat < 1:
        msg = f"择优需要 S >= 1 且 K̂ >= 1 (S={S}, K̂={K_hat})"
        logging.error(msg)
        raise ConfigurationError(msg, field="selection")
    subset = sample_clients(problem.n_clients, S, stream.child(tag="select-sample"))
    if share_draws:
        stream_0 = stream_half = stream.child(tag="select-value")
    else:
        stream_0 = stream.child(tag="select-value-0")
        stream_half = stream.child(tag="select-value-1")
    v0 = oracle.value(problem, subset, x0, K_hat, stream_0)
    v_half = oracle.value(problem, subset, x_half, K_hat, stream_half)
    logging.debug(f"择优: F̃(x0)={v0:.6e}, F̃(x_half)={v_half:.6e}")
    return as_vector(x_half) if v_half <= v0 else as_vector(x0)


def run_fedchain(config: ChainConfig, problem: FederatedProblem, oracle: Oracle, seed: int, x0=None,
                 round_offset: int = 0, record_initial: bool = True) -> OptimizerRun:
    """
    运行 FedChain：x̂_{1/2} = A_local(x0)，x̂₁ = select_better(x0, x̂_{1/2})，x̂₂ = A_global(x̂₁)。

    记录按轮次连续编号，本地阶段结束的轮次额外有一行 phase="select"，携带择优的函数值调用开销。
    """
    x0 = problem.initial_point.copy() if x0 is None else as_vector(x0, problem.dim)
    if isinstance(config.local, ChainConfig):
        local_run = run_fedchain(config.local, problem, oracle, seed, x0, round_offset, record_initial)
    else:
        local_run = run_optimizer(config.local, problem, oracle, seed, x0, round_offset, "local", record_initial)
    switch_round = round_offset + config.local_rounds

    S = config.selection_clients or problem.n_clients
    K_hat = config.selection_samples or config.local_steps
    x1 = select_better(x0, local_run.x_hat, problem, S, K_hat, oracle, RngStream(seed, round=switch_round),
                       config.share_draws)
    picked = "local" if np.array_equal(x1, local_run.x_hat) else "initial"
    select_row = make_record(problem, x1, switch_round, oracle, "select")

    global_run = run_optimizer(config.global_spec, problem, oracle, seed, x1, switch_round, "global",
                               record_initial=False)
    events = local_run.events + [{"round": switch_round, "event": "select", "picked": picked}] + global_run.events
    metadata = {
        "name": config.label,
        "local": local_run.metadata,
        "global": global_run.metadata,
        "local_rounds": config.local_rounds,
        "global_rounds": config.global_spec.rounds,
        "selection": {"clients": S, "samples": K_hat, "share_draws": config.share_draws, "picked": picked},
    }
    logging.debug(f"[{config.label}] 第 {switch_round} 轮择优结果: {picked}")
    return OptimizerRun(global_run.x_hat, local_run.records + [select_row] + global_run.records,
                        local_run.iterates + global_run.iterates[1:], events, metadata, oracle.queries)


# --- 部分参与 FedAvg→SGD ---
@dataclass(frozen=True)
class PartialChainConfig:
    """
    eta1: 第一阶段本地 GD 步长 η⁽¹⁾，需满足 η⁽¹⁾ <= μ/(8β²)。
    local_steps: 第一阶段的本地步数 K。
    eta2: 第二阶段步长，常数或逐轮序列。
    rounds: 第二阶段轮数。
    """
    eta1: float
    local_steps: int
    eta2: float | tuple = 0.0
    rounds: int = 0
    clients_per_round: int | None = None
    mu: float | None = None
    name: str = "partial-fedavg-sgd"

    def eta2_at(self, r: int) -> float:
        if isinstance(self.eta2, (tuple, list)):
            return float(self.eta2[min(r, len(self.eta2)) - 1])
        return float(self.eta2)


def partial_weights(eta1: float, mu: float, K: int) -> np.ndarray:
    """归一化权重 w_k / W_K，w_k = (1 − η⁽¹⁾μ/4)^{−k}，在对数域计算。"""
    k = np.arange(1, K + 1, dtype=np.float64)
    log_w = -k * math.log1p(-eta1 * mu / 4.0)
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def run_partial_fedavg_sgd(config: PartialChainConfig, problem: FederatedProblem, seed: int,
                           oracle: Oracle | None = None, x0=None) -> OptimizerRun:
    """
    第一阶段：随机选一个客户端，从 x0 做 K 步精确本地 GD，输出加权平均 x̄ = (1/W_K)Σ w_k x_k (记为第 1 轮)；
    第二阶段：服务器 SGD，每轮 S 个客户端各 K 个样本。

    Raises:
        ConfigurationError: 预言机带噪声，或 η⁽¹⁾ > μ/(8β²)。
    """
    oracle = oracle or Oracle(OracleConfig())
    if not oracle.config.exact:
        msg = "部分参与 FedAvg→SGD 流程要求精确梯度 (sigma = 0)"
        logging.error(msg)
        raise ConfigurationError(msg, field="oracle.sigma")
    mu = config.mu if config.mu is not None else problem.strong_convexity
    beta = problem.smoothness
    limit = mu / (8.0 * beta ** 2)
    if not 0 < config.eta1 <= limit * (1 + 1e-12):
        msg = f"η⁽¹⁾={config.eta1} 不满足 0 < η⁽¹⁾ <= μ/(8β²) = {limit:.6g}"
        logging.error(msg)
        raise ConfigurationError(msg, field="eta1")
    if config.local_steps < 1:
        raise ConfigurationError(f"local_steps 必须 >= 1，实际为 {config.local_steps}", field="local_steps")
    if config.rounds > 0 and min(config.eta2_at(r) for r in range(1, config.rounds + 1)) <= 0:
        raise ConfigurationError("第二阶段步长 eta2 必须 > 0", field="eta2")

    x0 = problem.initial_point.copy() if x0 is None else as_vector(x0, problem.dim)
    base = RngStream(seed)
    records = [make_record(problem, x0, 0, oracle, "partial-local")]
    iterates = [x0.copy()]

    # 第一阶段
    stream = base.child(round=1)
    j = sample_clients(problem.n_clients, 1, stream.child(tag="sample"))[0]
    decay = 1.0 - config.eta1 * mu / 4.0
    x = x0.copy()
    x_bar = None
    ratio = 0.0
    for k in range(1, config.local_steps + 1):
        x = x - config.eta1 * oracle.grad(problem, j, x, 1, stream.child(client=j, step=k - 1, tag="grad"))
        ratio = 1.0 + decay * ratio
        x_bar = x.copy() if x_bar is None else x_bar + (x - x_bar) / ratio
    oracle.log_point(stream.child(client=j, step=config.local_steps), j, x, "local-end")
    records.append(make_record(problem, x_bar, 1, oracle, "partial-local"))
    iterates.append(x_bar.copy())
    logging.debug(f"部分参与第一阶段: 客户端 {j}, K={config.local_steps}, 次优性 {records[-1].suboptimality}")

    # 第二阶段
    S = config.clients_per_round or problem.n_clients
    state = SgdState(x_bar, config.eta2_at(1) if config.rounds else 0.0)
    for r in range(1, config.rounds + 1):
        state = replace(state, eta=config.eta2_at(r))
        state = sgd_round(state, problem, S, config.local_steps, oracle, base.child(round=r + 1))
        ensure_finite(state.x, round_index=r + 1)
        records.append(make_record(problem, state.x, r + 1, oracle, "global"))
        iterates.append(state.x.copy())
    metadata = {"name": config.name, "client": j, "eta1": config.eta1, "K": config.local_steps, "S": S}
    return OptimizerRun(state.x.copy(), records, iterates, [], metadata, oracle.queries)
