# -*- coding: utf-8 -*-
"""
内置实验预设。每个预设生成一个或多个 ExperimentConfig (与 YAML 配置走同一套校验)。
"""
import logging

from fedsim_utils.core import ConfigurationError

from .experiment_config import ExperimentConfig, parse_experiment_config

SHUFFLE_HOMOGENEITY_LEVELS = (0, 50, 100)
# K 较大时本地与全局阶段的步长尺度不同，网格向上延伸到 10^0
LARGE_K_ETA_GRID = tuple(10.0 ** (-3.0 + 0.5 * i) for i in range(7))


def _fedavg_floor() -> list:
    raw = {
        "name": "fedavg-floor",
        "problem": {"family": "shared_hessian", "params": {"n_clients": 4, "dim": 10, "kappa": 10.0, "zeta": 0.5}},
        "optimizers": [
            {"method": "fedavg", "rounds": 200, "eta": 0.05, "local_steps": 100, "clients_per_round": 2},
            {"method": "sgd", "rounds": 200, "eta": 0.05, "local_steps": 100, "clients_per_round": 2},
        ],
        "outputs": {"heterogeneity": True},
    }
    return [parse_experiment_config(raw)]


def _chain_gain() -> list:
    fedavg = {"method": "fedavg", "eta": 1.0 / 30.0, "local_steps": 100}
    sgd = {"method": "sgd", "eta": 1.0 / 15.0, "local_steps": 100}
    raw = {
        "name": "chain-gain",
        "repeat": 5,
        "problem": {"family": "drift",
                    "params": {"n_clients": 4, "dim": 2, "kappa": 10.0, "spread": 0.5, "offset": 0.1, "delta": 1.0}},
        "optimizers": [
            dict(fedavg, rounds=60),
            dict(sgd, rounds=60),
            {"method": "fedchain", "rounds": 60, "local": fedavg, "global": sgd},
        ],
    }
    return [parse_experiment_config(raw)]


def _acceleration() -> list:
    raw = {
        "name": "acceleration",
        "problem": {"family": "diagonal_quadratic", "params": {"dim": 4, "kappa": 400.0}},
        "optimizers": [{"method": "sgd", "rounds": 300}, {"method": "asg", "rounds": 300}],
        "outputs": {"slope_window": [0, 300]},
    }
    return [parse_experiment_config(raw)]


def _saga_floor() -> list:
    raw = {
        "name": "saga-floor",
        "problem": {"family": "shared_hessian", "params": {"n_clients": 4, "dim": 10, "kappa": 4.0, "zeta": 1.0}},
        "optimizers": [
            {"method": "saga", "rounds": 400, "eta": 1.0 / 12.0, "clients_per_round": 2},
            {"method": "sgd", "rounds": 400, "eta": 1.0 / 12.0, "clients_per_round": 2},
        ],
    }
    return [parse_experiment_config(raw)]


def _multistage() -> list:
    raw = {
        "name": "multistage",
        "repeat": 10,
        "problem": {"family": "diagonal_quadratic", "params": {"dim": 2, "kappa": 4.0}},
        "oracle": {"sigma": 1.0},
        "optimizers": [{"method": "sgd", "rounds": 200, "eta": 0.25},
                       {"method": "m-sgd", "rounds": 200, "eta": 0.25}],
    }
    return [parse_experiment_config(raw)]


def _stochastic_logistic() -> list:
    fedavg = {"method": "fedavg", "local_steps": 20, "inner_steps": 20, "inner_batch": 1}
    sgd = {"method": "sgd", "local_steps": 20}
    asg = {"method": "asg", "local_steps": 20}
    configs = []
    for level in SHUFFLE_HOMOGENEITY_LEVELS:
        raw = {
            "name": f"paper-stochastic-logistic-X{level}",
            "problem": {"family": "shuffle", "params": {"n_clients": 5, "homogeneity_pct": level}},
            "oracle": {"noise_model": "minibatch", "batch_fraction": 0.01},
            "optimizers": [
                dict(fedavg, rounds=100),
                dict(sgd, rounds=100),
                dict(asg, rounds=100),
                {"method": "fedchain", "rounds": 100, "local": fedavg, "global": sgd},
                {"method": "fedchain", "rounds": 100, "local": fedavg, "global": asg},
            ],
            "outputs": {"heterogeneity": True},
        }
        configs.append(parse_experiment_config(raw))
    return configs


def _shuffle_raw(name: str, level: int, optimizers: list, rounds: int = 100, tuning: dict | None = None) -> dict:
    return {
        "name": name,
        "problem": {"family": "shuffle", "params": {"n_clients": 5, "homogeneity_pct": level}},
        "oracle": {"noise_model": "minibatch", "batch_fraction": 0.01},
        "optimizers": [dict(opt, rounds=rounds) for opt in optimizers],
        "tuning": tuning if tuning is not None else {},
    }


def _multistage_chain() -> list:
    m_fedavg = {"method": "m-fedavg", "local_steps": 20, "inner_steps": 20, "inner_batch": 1}
    m_sgd = {"method": "m-sgd", "local_steps": 20}
    m_asg = {"method": "m-asg", "local_steps": 20}
    optimizers = [
        m_fedavg, m_sgd, m_asg,
        {"method": "fedchain", "switch_rule": "stepsize", "local": m_fedavg, "global": m_sgd},
        {"method": "fedchain", "switch_rule": "stepsize", "local": m_fedavg, "global": m_asg},
    ]
    return [parse_experiment_config(_shuffle_raw(f"multistage-chain-X{level}", level, optimizers))
            for level in SHUFFLE_HOMOGENEITY_LEVELS]


def _three_stage_chain() -> list:
    fedavg = {"method": "fedavg", "local_steps": 20, "inner_steps": 20, "inner_batch": 1}
    sgd = {"method": "sgd", "local_steps": 20}
    asg = {"method": "asg", "local_steps": 20}
    # FedAvg → SGD 占前 50 轮 (各半)，其余轮次交给 ASG
    head = {"method": "fedchain", "rounds": 50, "split": 0.5, "local": fedavg, "global": sgd}
    optimizers = [
        {"method": "fedchain", "local": fedavg, "global": asg},
        {"method": "fedchain", "local": head, "global": asg, "name": "fedavg->sgd->asg"},
    ]
    return [parse_experiment_config(_shuffle_raw(f"three-stage-chain-X{level}", level, optimizers))
            for level in SHUFFLE_HOMOGENEITY_LEVELS]


def _stepsize_decay() -> list:
    fedavg = {"method": "fedavg", "local_steps": 20, "inner_steps": 20, "inner_batch": 1}
    sgd = {"method": "sgd", "local_steps": 20}
    asg = {"method": "asg", "local_steps": 20}
    optimizers = [
        dict(fedavg, method="m-fedavg"), dict(sgd, method="m-sgd"), dict(asg, method="m-asg"),
        {"method": "fedchain", "local": fedavg, "global": sgd},
        {"method": "fedchain", "local": fedavg, "global": asg},
    ]
    return [parse_experiment_config(_shuffle_raw(f"stepsize-decay-X{level}", level, optimizers))
            for level in SHUFFLE_HOMOGENEITY_LEVELS]


def _large_k() -> list:
    fedavg = {"method": "fedavg", "local_steps": 100, "inner_steps": 100, "inner_batch": 1}
    sgd = {"method": "sgd", "local_steps": 100}
    asg = {"method": "asg", "local_steps": 100}
    optimizers = [
        fedavg, sgd, asg,
        {"method": "fedchain", "split": 0.01, "local": fedavg, "global": sgd, "name": "1-fedavg->sgd"},
        {"method": "fedchain", "split": 0.01, "local": fedavg, "global": asg, "name": "1-fedavg->asg"},
    ]
    tuning = {"eta": list(LARGE_K_ETA_GRID)}
    return [parse_experiment_config(_shuffle_raw(f"large-k-X{level}", level, optimizers, tuning=tuning))
            for level in SHUFFLE_HOMOGENEITY_LEVELS]


# 名称 -> (说明, 构造函数)
PRESETS = {
    "fedavg-floor": ("部分参与 FedAvg 的异质性误差底 (对照 SGD)", _fedavg_floor),
    "chain-gain": ("漂移族上 FedChain(FedAvg→SGD) 对比单独的 FedAvg 与 SGD，5 个种子", _chain_gain),
    "acceleration": ("κ=400 无噪声二次函数上 SGD 与 ASG 的收敛速率对比", _acceleration),
    "saga-floor": ("部分参与下 SAGA 消除客户端采样误差 (对照 SGD)", _saga_floor),
    "multistage": ("带噪声二次函数上阶段式步长 M-SGD 对比常数步长 SGD，10 个种子", _multistage),
    "paper-stochastic-logistic": ("洗牌逻辑回归 (5 客户端, K=20, R=100, X ∈ {0, 50, 100})，"
                                  "比较 FedAvg / SGD / ASG / FedChain", _stochastic_logistic),
    "multistage-chain": ("洗牌逻辑回归上 M-FedAvg→M-SGD / M-FedAvg→M-ASG (步长衰减到 η/K 时切换)，"
                         "对照各阶段式基线，网格调参", _multistage_chain),
    "three-stage-chain": ("洗牌逻辑回归上三阶段链 FedAvg→SGD→ASG 对照两阶段 FedAvg→ASG，网格调参", _three_stage_chain),
    "stepsize-decay": ("洗牌逻辑回归上阶段式步长基线 M-FedAvg / M-SGD / M-ASG 对照 FedChain，网格调参", _stepsize_decay),
    "large-k": ("K=100 时本地阶段只跑 1 轮的 1-FedAvg→SGD / 1-FedAvg→ASG 对照单一基线，"
                "步长网格 10^{-3} 到 10^0", _large_k),
}


def list_presets() -> list[tuple[str, str]]:
    return [(name, description) for name, (description, _) in PRESETS.items()]


def build_preset(name: str) -> list[ExperimentConfig]:
    """
    Raises:
        ConfigurationError: 预设不存在。
    """
    if name not in PRESETS:
        msg = f"未知的预设 '{name}'，可用预设: {', '.join(PRESETS)}"
        logging.error(msg)
        raise ConfigurationError(msg, field="preset")
    return PRESETS[name][1]()
