# -*- coding: utf-8 -*-
"""
实验配置：YAML 结构校验、问题构造与运行条目 (单一优化器 / FedChain 链 / 部分参与流程) 解析。

未知字段一律视为配置错误，错误信息携带点分路径 (例如 optimizers[1].stepsize)。
"""
import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from fedsim_utils.chaining import ChainConfig, PartialChainConfig, make_chain
from fedsim_utils.core import CSV_COLUMNS, ConfigurationError
from fedsim_utils.federation import NOISE_MODELS, FederatedProblem, OracleConfig
from fedsim_utils.objectives import (hard_instance_dimension, make_diagonal_quadratic, make_drift_federation,
                                     make_hard_instance, make_pl_problem, make_shuffle_federation,
                                     make_synthetic_federation, make_two_client_toy, proof_mu)
from fedsim_utils.optimizers import METHODS, OptimizerSpec

from .config_utils import config_sha256, load_yaml_config

TOP_LEVEL_KEYS = {"name", "seed", "repeat", "problem", "oracle", "optimizers", "outputs", "tuning"}
PROBLEM_KEYS = {"family", "params", "seed"}
ORACLE_KEYS = {"sigma", "sigma_f", "noise_model", "batch_fraction"}
OUTPUT_KEYS = {"dir", "metrics", "slope_window", "heterogeneity"}
SELECTION_KEYS = {"clients", "samples", "share_draws"}
TUNING_KEYS = {"eta", "split", "metric", "runs", "max_candidates"}
OPTIMIZER_KEYS = {"name", "method", "rounds", "eta", "clients_per_round", "local_steps", "averaging", "saga_option",
                  "tau", "phi", "inner_steps", "inner_batch", "restart_rounds", "smoothing", "local", "global",
                  "split", "switch_rule", "selection", "eta1", "eta2"}
CHAIN_METHOD = "fedchain"
PARTIAL_METHOD = "partial-fedavg-sgd"
SWITCH_RULES = ("fixed", "stepsize")
TUNING_METRICS = ("grad_norm_sq", "suboptimality")
# 步长网格 10^{-3}, 10^{-2.5}, ..., 10^{-1}；切换比例网格 10^{-2}, 10^{-1.625}, ..., 10^{-0.5}
DEFAULT_ETA_GRID = tuple(10.0 ** (-3.0 + 0.5 * i) for i in range(5))
DEFAULT_SPLIT_GRID = tuple(10.0 ** (-2.0 + 0.375 * i) for i in range(5))

# 问题族 -> 允许的参数及默认值
FAMILY_PARAMS = {
    "toy": {},
    "shared_hessian": {"n_clients": 4, "dim": 10, "kappa": 10.0, "zeta": 0.5, "delta": 1.0},
    "drift": {"n_clients": 4, "dim": 2, "kappa": 10.0, "spread": 0.5, "offset": 0.1, "delta": 1.0},
    "shuffle": {"n_clients": 5, "homogeneity_pct": 0.0, "samples_per_class": 100, "reg": 0.1},
    "pl": {"start": 3.0},
    "hard_instance": {"l2": 1.0, "zeta_hat": 1.0, "mu": None, "dim": None, "rounds": None, "beta": None},
    "diagonal_quadratic": {"dim": 4, "kappa": 400.0, "delta": 1.0, "n_clients": 1},
}


# --- 校验小工具 ---
def _fail(msg: str, path: str):
    logging.error(f"配置错误 [{path}]: {msg}")
    raise ConfigurationError(f"{path}: {msg}", field=path)


def _check_keys(mapping, allowed: set, path: str):
    if not isinstance(mapping, dict):
        _fail(f"期望为映射，实际为 {type(mapping).__name__}", path)
    for key in mapping:
        if key not in allowed:
            _fail(f"未知字段 '{key}'", f"{path}.{key}" if path else str(key))


def _int(mapping, key, path, default=None, minimum=None):
    value = mapping.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(f"必须是整数，实际为 {value!r}", f"{path}.{key}")
    if minimum is not None and value < minimum:
        _fail(f"必须 >= {minimum}，实际为 {value}", f"{path}.{key}")
    return value


def _float(mapping, key, path, default=None, minimum=None, positive=False):
    value = mapping.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"必须是数值，实际为 {value!r}", f"{path}.{key}")
    value = float(value)
    if positive and not value > 0:
        _fail(f"必须 > 0，实际为 {value}", f"{path}.{key}")
    if minimum is not None and value < minimum:
        _fail(f"必须 >= {minimum}，实际为 {value}", f"{path}.{key}")
    return value


def _str(mapping, key, path, default=None, choices=None):
    value = mapping.get(key, default)
    if value is None:
        return None
    if not isinstance(value, str):
        _fail(f"必须是字符串，实际为 {value!r}", f"{path}.{key}")
    if choices is not None and value not in choices:
        _fail(f"无效值 '{value}'，有效值为: {', '.join(choices)}", f"{path}.{key}")
    return value


# --- 配置结构 ---
@dataclass(frozen=True)
class ProblemSpec:
    family: str
    params: dict
    seed: int


@dataclass(frozen=True)
class OutputSpec:
    dir: str | None = None
    metrics: tuple = tuple(CSV_COLUMNS)
    slope_window: tuple | None = None
    heterogeneity: bool = False


@dataclass(frozen=True)
class TuningSpec:
    """
    网格调参设置。条目中没有显式给出的 eta 与 split 才会被展开调参。

    runs 为每个候选的运行次数 (种子 seed, seed + 1, ...)，按最终指标的均值择优。
    """
    eta: tuple = DEFAULT_ETA_GRID
    split: tuple = DEFAULT_SPLIT_GRID
    metric: str = "grad_norm_sq"
    runs: int = 1
    max_candidates: int = 500


@dataclass(frozen=True)
class ChainEntry:
    """配置中的 FedChain 条目；轮数切分依赖问题参数，因此在运行时才生成 ChainConfig。"""
    local: "OptimizerSpec | ChainEntry"
    global_spec: OptimizerSpec
    rounds: int
    split: str | float = "half"
    selection_clients: int | None = None
    selection_samples: int | None = None
    share_draws: bool = True
    name: str = ""
    split_pinned: bool = True  # 配置里显式给出了 split 或 switch_rule=stepsize

    @property
    def label(self) -> str:
        return self.name or f"{self.local.label}->{self.global_spec.label}"

    @property
    def local_steps(self) -> int:
        return self.local.local_steps

    def build(self, problem: FederatedProblem) -> ChainConfig:
        local = self.local.build(problem) if isinstance(self.local, ChainEntry) else self.local
        return make_chain(local, self.global_spec, self.rounds, problem, self.split, self.selection_clients,
                          self.selection_samples, self.share_draws, self.name)


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    repeat: int
    problem: ProblemSpec
    oracle: OracleConfig
    entries: list
    outputs: OutputSpec
    normalized: dict = field(default_factory=dict)
    tuning: TuningSpec | None = None

    @property
    def config_hash(self) -> str:
        return config_sha256(self.normalized)

    def with_overrides(self, seed: int | None = None, repeat: int | None = None) -> "ExperimentConfig":
        """返回应用命令行覆盖后的副本 (配置哈希随之更新)。"""
        normalized = copy.deepcopy(self.normalized)
        if seed is not None:
            normalized["seed"] = seed
        if repeat is not None:
            if repeat < 1:
                raise ConfigurationError(f"--repeat 必须 >= 1，实际为 {repeat}", field="repeat")
            normalized["repeat"] = repeat
        return parse_experiment_config(normalized)


# --- 解析 ---
def _parse_optimizer(raw, path: str, top_level: bool):
    _check_keys(raw, OPTIMIZER_KEYS, path)
    method = _str(raw, "method", path)
    if method is None:
        _fail("缺少必需字段 'method'", f"{path}.method")
    rounds = _int(raw, "rounds", path, minimum=1 if top_level else 0)
    if top_level and rounds is None:
        _fail("缺少必需字段 'rounds'", f"{path}.rounds")
    name = _str(raw, "name", path, default="")

    if method == CHAIN_METHOD:
        for key in ("local", "global"):
            if key not in raw:
                _fail(f"fedchain 条目缺少 '{key}'", f"{path}.{key}")
        if rounds is None:
            _fail("嵌套 fedchain 条目必须给出 rounds", f"{path}.rounds")
        local = _parse_optimizer(raw["local"], f"{path}.local", top_level=False)
        global_spec = _parse_optimizer(raw["global"], f"{path}.global", top_level=False)
        if not isinstance(global_spec, OptimizerSpec):
            _fail("global 阶段必须是单一优化器", f"{path}.global")
        switch_rule = _str(raw, "switch_rule", path, default="fixed", choices=SWITCH_RULES)
        split = raw.get("split", "half")
        if switch_rule == "stepsize":
            split = "stepsize"
        elif not (split == "half" or (isinstance(split, (int, float)) and not isinstance(split, bool)
                                      and 0 <= split <= 1)):
            _fail(f"split 必须是 'half' 或 [0, 1] 内的比例，实际为 {split!r}", f"{path}.split")
        selection = raw.get("selection", {}) or {}
        _check_keys(selection, SELECTION_KEYS, f"{path}.selection")
        share = selection.get("share_draws", True)
        if not isinstance(share, bool):
            _fail(f"必须是布尔值，实际为 {share!r}", f"{path}.selection.share_draws")
        return ChainEntry(local, global_spec, rounds,
                          split=split,
                          selection_clients=_int(selection, "clients", f"{path}.selection", minimum=1),
                          selection_samples=_int(selection, "samples", f"{path}.selection", minimum=1),
                          share_draws=share, name=name,
                          split_pinned=switch_rule == "stepsize" or "split" in raw)

    if method == PARTIAL_METHOD:
        eta2 = raw.get("eta2")
        if isinstance(eta2, list):
            if not eta2 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in eta2):
                _fail("eta2 序列必须是非空的正数列表", f"{path}.eta2")
            eta2 = tuple(float(v) for v in eta2)
        else:
            eta2 = _float(raw, "eta2", path, positive=True)
        eta1 = _float(raw, "eta1", path, positive=True)
        if eta1 is None or eta2 is None:
            _fail("partial-fedavg-sgd 需要 eta1 与 eta2", path)
        return PartialChainConfig(eta1, _int(raw, "local_steps", path, default=1, minimum=1), eta2,
                                  rounds if rounds is not None else 0,
                                  _int(raw, "clients_per_round", path, minimum=1), name=name or PARTIAL_METHOD)

    if method not in METHODS:
        _fail(f"未知的优化方法 '{method}'，有效值为: {', '.join(METHODS + (CHAIN_METHOD, PARTIAL_METHOD))}",
              f"{path}.method")
    for key in ("local", "global", "split", "switch_rule", "selection", "eta1", "eta2"):
        if key in raw:
            _fail(f"字段 '{key}' 只适用于 fedchain / partial-fedavg-sgd 条目", f"{path}.{key}")
    try:
        return OptimizerSpec(
            method=method,
            rounds=rounds if rounds is not None else 0,
            eta=_float(raw, "eta", path, positive=True),
            clients_per_round=_int(raw, "clients_per_round", path, minimum=1),
            local_steps=_int(raw, "local_steps", path, default=1, minimum=1),
            averaging=_str(raw, "averaging", path, default="none"),
            saga_option=str(raw.get("saga_option", "I")),
            tau=_float(raw, "tau", path),
            phi=_float(raw, "phi", path, positive=True),
            inner_steps=_int(raw, "inner_steps", path, minimum=1),
            inner_batch=_int(raw, "inner_batch", path, minimum=1),
            restart_rounds=_int(raw, "restart_rounds", path, minimum=1),
            smoothing=_float(raw, "smoothing", path, positive=True),
            name=name,
        )
    except ConfigurationError as e:
        # 把优化器内部的字段名补全为完整路径
        full = f"{path}.{e.field}" if e.field else path
        raise ConfigurationError(f"{full}: {e}", field=full) from e


def _grid(mapping, key, path, default, low, high):
    value = mapping.get(key)
    if value is None:
        return default
    if (not isinstance(value, list) or not value
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) or not low < v <= high for v in value)):
        _fail(f"必须是 ({low:g}, {high:g}] 内数值组成的非空列表，实际为 {value!r}", f"{path}.{key}")
    return tuple(float(v) for v in value)


def _parse_tuning(raw) -> TuningSpec:
    _check_keys(raw, TUNING_KEYS, "tuning")
    return TuningSpec(
        eta=_grid(raw, "eta", "tuning", DEFAULT_ETA_GRID, 0.0, math.inf),
        split=_grid(raw, "split", "tuning", DEFAULT_SPLIT_GRID, 0.0, 1.0),
        metric=_str(raw, "metric", "tuning", default="grad_norm_sq", choices=TUNING_METRICS),
        runs=_int(raw, "runs", "tuning", default=1, minimum=1),
        max_candidates=_int(raw, "max_candidates", "tuning", default=500, minimum=1),
    )


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    """
    校验并解析实验配置映射。

    Args:
        raw (dict): yaml.safe_load 得到的映射。

    Returns:
        ExperimentConfig: 解析后的配置 (normalized 为补全默认值后的映射，用于计算哈希)。

    Raises:
        ConfigurationError: 未知字段、缺失字段或取值无效，field 为点分路径。
    """
    if not isinstance(raw, dict):
        _fail("实验配置必须是映射", "<root>")
    _check_keys(raw, TOP_LEVEL_KEYS, "")
    normalized = copy.deepcopy(raw)
    name = _str(raw, "name", "", default="experiment")
    seed = _int(raw, "seed", "", default=0, minimum=0)
    repeat = _int(raw, "repeat", "", default=1, minimum=1)
    normalized.update(name=name, seed=seed, repeat=repeat)

    problem_raw = raw.get("problem")
    if problem_raw is None:
        _fail("缺少必需字段 'problem'", "problem")
    _check_keys(problem_raw, PROBLEM_KEYS, "problem")
    family = _str(problem_raw, "family", "problem", choices=tuple(FAMILY_PARAMS))
    if family is None:
        _fail("缺少必需字段 'family'", "problem.family")
    params_raw = problem_raw.get("params", {}) or {}
    _check_keys(params_raw, set(FAMILY_PARAMS[family]), "problem.params")
    params = dict(FAMILY_PARAMS[family], **params_raw)
    for key, value in params.items():
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            _fail(f"必须是数值，实际为 {value!r}", f"problem.params.{key}")
    problem = ProblemSpec(family, params, _int(problem_raw, "seed", "problem", default=seed, minimum=0))

    oracle_raw = raw.get("oracle", {}) or {}
    _check_keys(oracle_raw, ORACLE_KEYS, "oracle")
    try:
        oracle = OracleConfig(
            sigma=_float(oracle_raw, "sigma", "oracle", default=0.0, minimum=0.0),
            sigma_f=_float(oracle_raw, "sigma_f", "oracle", default=0.0, minimum=0.0),
            noise_model=_str(oracle_raw, "noise_model", "oracle", default="gaussian", choices=NOISE_MODELS),
            batch_fraction=_float(oracle_raw, "batch_fraction", "oracle", default=0.01, positive=True),
        )
    except ConfigurationError as e:
        raise ConfigurationError(f"{e.field or 'oracle'}: {e}", field=e.field or "oracle") from e

    optimizers_raw = raw.get("optimizers")
    if not isinstance(optimizers_raw, list) or not optimizers_raw:
        _fail("至少需要一个优化器条目 (列表)", "optimizers")
    entries = [_parse_optimizer(item, f"optimizers[{i}]", top_level=True) for i, item in enumerate(optimizers_raw)]

    outputs_raw = raw.get("outputs", {}) or {}
    _check_keys(outputs_raw, OUTPUT_KEYS, "outputs")
    metrics = outputs_raw.get("metrics", list(CSV_COLUMNS))
    if not isinstance(metrics, list) or any(m not in CSV_COLUMNS for m in metrics):
        _fail(f"metrics 必须是 {', '.join(CSV_COLUMNS)} 的子集", "outputs.metrics")
    window = outputs_raw.get("slope_window")
    if window is not None:
        if (not isinstance(window, list) or len(window) != 2
                or any(isinstance(v, bool) or not isinstance(v, int) for v in window) or window[0] > window[1]):
            _fail("slope_window 必须是 [起始轮, 结束轮] 两个整数", "outputs.slope_window")
        window = tuple(window)
    heterogeneity = outputs_raw.get("heterogeneity", False)
    if not isinstance(heterogeneity, bool):
        _fail(f"必须是布尔值，实际为 {heterogeneity!r}", "outputs.heterogeneity")
    ordered = ["round"] + [c for c in CSV_COLUMNS if c in metrics and c != "round"]
    outputs = OutputSpec(_str(outputs_raw, "dir", "outputs"), tuple(ordered), window, heterogeneity)

    tuning = None
    if raw.get("tuning") is not None:
        tuning = _parse_tuning(raw["tuning"])
        normalized["tuning"] = {"eta": list(tuning.eta), "split": list(tuning.split), "metric": tuning.metric,
                                "runs": tuning.runs, "max_candidates": tuning.max_candidates}

    logging.debug(f"实验配置 '{name}' 解析完成: {len(entries)} 个条目, repeat={repeat}")
    return ExperimentConfig(name, seed, repeat, problem, oracle, entries, outputs, normalized, tuning)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """
    从 YAML 文件加载实验配置。

    Raises:
        FileNotFoundError / yaml.YAMLError: 文件缺失或语法错误 (由 load_yaml_config 抛出)。
        ConfigurationError: 内容不是映射或校验失败。
    """
    raw = load_yaml_config(path)
    if raw is None:
        raise ConfigurationError(f"实验配置文件内容无效，期望为字典格式: {path}", field="<root>")
    logging.info(f"已加载实验配置: {path}")
    return parse_experiment_config(raw)


def max_rounds(config: ExperimentConfig) -> int:
    return max(entry.rounds for entry in config.entries)


def build_problem(spec: ProblemSpec, rounds_hint: int = 0) -> FederatedProblem:
    """
    按问题族构造 FederatedProblem。

    hard_instance 未给出 mu 时取 ℓ₂/(64R²)，未给出 dim 时取满足维度条件的最小偶数 (R 取 params.rounds 或 rounds_hint)。
    """
    p = spec.params
    family = spec.family
    if family == "toy":
        return make_two_client_toy()
    if family == "shared_hessian":
        return make_synthetic_federation(int(p["n_clients"]), int(p["dim"]), p["kappa"], p["zeta"], spec.seed,
                                         delta=p["delta"])
    if family == "drift":
        return make_drift_federation(int(p["n_clients"]), int(p["dim"]), p["kappa"], p["spread"], p["offset"],
                                     spec.seed, delta=p["delta"])
    if family == "shuffle":
        return make_shuffle_federation(int(p["n_clients"]), p["homogeneity_pct"], int(p["samples_per_class"]),
                                       spec.seed, reg=p["reg"])
    if family == "pl":
        return make_pl_problem(p["start"])
    if family == "diagonal_quadratic":
        return make_diagonal_quadratic(int(p["dim"]), p["kappa"], p["delta"], int(p["n_clients"]))
    # hard_instance
    rounds = int(p["rounds"]) if p.get("rounds") is not None else rounds_hint
    mu = p["mu"] if p.get("mu") is not None else proof_mu(p["l2"], rounds)
    dim = int(p["dim"]) if p.get("dim") is not None else hard_instance_dimension(p["l2"], mu, rounds)
    return make_hard_instance(p["l2"], p["zeta_hat"], mu, dim, beta=p.get("beta")).problem()


def dump_config(config: ExperimentConfig) -> str:
    """规范化配置的 YAML 文本 (写入输出目录便于复现)。"""
    return yaml.safe_dump(config.normalized, allow_unicode=True, sort_keys=True)
