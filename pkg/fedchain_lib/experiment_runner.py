# -*- coding: utf-8 -*-
"""
实验执行：把 (条目, 重复) 作业调度到工作线程，收集轨迹后由协调协程统一写出 CSV。

输出文件：
  - <序号>_<标签>_seed<种子>.csv  每次运行的逐轮轨迹
  - summary.csv                   每次运行的最终指标与拟合斜率
  - ranking.csv                   按重复中位数排序的方法排名
  - heterogeneity.csv             (outputs.heterogeneity 为 true 时) 异质性测量
  - tuning.csv                    (配置含 tuning 段时) 每个候选的调参分数与入选标记
"""
import asyncio
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from fedsim_utils.chaining import PartialChainConfig, run_fedchain, run_partial_fedavg_sgd
from fedsim_utils.core import ConfigurationError, NumericalBlowUpError, TraceDataError
from fedsim_utils.federation import FederatedProblem, Oracle, OracleConfig, QueryRecord
from fedsim_utils.metrics import Probe, audit_zero_respecting, fit_rate_slope, measure_heterogeneity
from fedsim_utils.objectives import hard_instance_dimension, make_hard_instance, proof_mu
from fedsim_utils.optimizers import OptimizerRun, OptimizerSpec, make_record, run_optimizer

from .experiment_config import ChainEntry, ExperimentConfig, build_problem, dump_config, max_rounds
from .trace_io import write_table_csv, write_trace_csv
from .tuning import TUNING_COLUMNS, expand_entry, mean_score, select_best

SUMMARY_COLUMNS = ["spec_index", "label", "repeat", "seed", "final_round", "suboptimality", "grad_norm_sq", "dist_sq",
                   "grad_calls", "value_calls", "slope"]
RANKING_COLUMNS = ["rank", "spec_index", "label", "median_suboptimality", "median_slope", "median_grad_calls",
                   "median_value_calls", "repeats"]
HETEROGENEITY_COLUMNS = ["source", "probe", "zeta_exact", "zeta_bound", "zeta_hat", "zeta_f_hat", "zeta_star"]
CLOSED_FORM_FAMILIES = ("shared_hessian", "hard_instance")
WILD_GUESS = "wild-guess"


@dataclass
class RunResult:
    spec_index: int
    label: str
    repeat: int
    seed: int
    run: OptimizerRun
    path: Path | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Path
    results: list = field(default_factory=list)
    summary: pd.DataFrame | None = None
    ranking: pd.DataFrame | None = None
    heterogeneity: pd.DataFrame | None = None
    tuning: pd.DataFrame | None = None


def entry_label(entry) -> str:
    if isinstance(entry, PartialChainConfig):
        return entry.name
    return entry.label


def _safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label.replace("->", "-to-")).strip("_") or "run"


def execute_entry(entry, problem: FederatedProblem, oracle_config: OracleConfig, seed: int,
                  record_queries: bool = False) -> OptimizerRun:
    """
    运行一个配置条目 (单一优化器 / FedChain / 部分参与流程)。每次运行使用独立的计数预言机。
    """
    oracle = Oracle(oracle_config, record_queries=record_queries)
    if isinstance(entry, OptimizerSpec):
        return run_optimizer(entry, problem, oracle, seed)
    if isinstance(entry, ChainEntry):
        return run_fedchain(entry.build(problem), problem, oracle, seed)
    if isinstance(entry, PartialChainConfig):
        return run_partial_fedavg_sgd(entry, problem, seed, oracle)
    raise TypeError(f"无法识别的运行条目类型: {type(entry).__name__}")


async def run_jobs(jobs: list, max_workers: int) -> list:
    """
    并发执行作业 (可调用对象)，并发数受 Semaphore 限制，结果按作业顺序返回。
    任一作业失败时，在全部作业结束后按作业顺序抛出第一个异常。
    """
    semaphore = asyncio.Semaphore(max(1, max_workers))

    async def _run(job):
        async with semaphore:
            return await asyncio.to_thread(job)

    results = await asyncio.gather(*(_run(job) for job in jobs), return_exceptions=True)
    for result in results:
        if isinstance(result, BaseException):
            raise result
    return results


def _final_record(run: OptimizerRun):
    rows = [rec for rec in run.records if rec.phase != "select"]
    return rows[-1] if rows else run.records[-1]


def _slope(run: OptimizerRun, window) -> float:
    try:
        return fit_rate_slope(run.records, window)
    except TraceDataError as e:
        logging.debug(f"斜率拟合跳过: {e}")
        return math.nan


def summarize(results: list, window=None) -> pd.DataFrame:
    rows = []
    for res in results:
        final = _final_record(res.run)
        rows.append({
            "spec_index": res.spec_index,
            "label": res.label,
            "repeat": res.repeat,
            "seed": res.seed,
            "final_round": final.round,
            "suboptimality": final.suboptimality,
            "grad_norm_sq": final.grad_norm_sq,
            "dist_sq": final.dist_sq,
            "grad_calls": res.run.records[-1].grad_oracle_calls,
            "value_calls": res.run.records[-1].value_oracle_calls,
            "slope": _slope(res.run, window),
        })
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def rank_methods(summary: pd.DataFrame) -> pd.DataFrame:
    """按最终次优性的重复中位数升序排列，中位数相同时按条目序号。"""
    frame = summary.copy()
    frame["suboptimality"] = pd.to_numeric(frame["suboptimality"], errors="coerce")
    grouped = frame.groupby("spec_index", sort=True).agg(
        label=("label", "first"),
        median_suboptimality=("suboptimality", "median"),
        median_slope=("slope", "median"),
        median_grad_calls=("grad_calls", "median"),
        median_value_calls=("value_calls", "median"),
        repeats=("repeat", "count"),
    ).reset_index()
    key = grouped["median_suboptimality"].fillna(np.inf)
    grouped = grouped.assign(_key=key).sort_values(["_key", "spec_index"], kind="mergesort").drop(columns="_key")
    grouped.insert(0, "rank", range(1, len(grouped) + 1))
    return grouped[RANKING_COLUMNS].reset_index(drop=True)


def _problem_probe(problem: FederatedProblem, seed: int) -> Probe:
    if problem.metadata.get("family") in CLOSED_FORM_FAMILIES:
        return Probe(kind="closed_form")
    dist_sq = problem.dist_sq(problem.initial_point)
    radius = math.sqrt(dist_sq) if dist_sq else 1.0
    return Probe(kind="random_points", radius=radius, seed=seed)


def heterogeneity_rows(problem: FederatedProblem, results: list, seed: int) -> list:
    """问题本身一行，外加每个条目首个重复的轨迹探测一行。"""
    report = measure_heterogeneity(problem, _problem_probe(problem, seed))
    rows = [dict(report.to_row(), source=problem.name)]
    seen = set()
    for res in results:
        if res.spec_index in seen:
            continue
        seen.add(res.spec_index)
        traj = measure_heterogeneity(problem, Probe.trajectory(res.run))
        rows.append(dict(traj.to_row(), source=res.label))
    return rows


def _tuning_score(entry, problem: FederatedProblem, oracle_config: OracleConfig, seed: int, metric: str) -> float:
    try:
        run = execute_entry(entry, problem, oracle_config, seed)
    except NumericalBlowUpError as e:
        logging.warning(f"调参候选 [{entry_label(entry)}] 种子 {seed} 发散: {e}")
        return math.inf
    value = getattr(_final_record(run), metric)
    return math.inf if value is None else float(value)


async def tune_entries(config: ExperimentConfig, problem: FederatedProblem, max_workers: int = 1) -> tuple[list, list]:
    """
    对每个条目的候选网格各运行 tuning.runs 次，取最终指标均值最小的候选。

    Returns:
        tuple[list, list]: (替换为入选候选后的条目列表, tuning.csv 的行)。没有可调参数的条目原样保留且不出行。

    Raises:
        ConfigurationError: 某条目的候选数超过 tuning.max_candidates。
        NumericalBlowUpError: 某条目的候选全部发散。
    """
    tuning = config.tuning
    expanded = [expand_entry(entry, tuning) for entry in config.entries]
    for i, candidates in enumerate(expanded):
        if len(candidates) > tuning.max_candidates:
            msg = f"optimizers[{i}] 展开出 {len(candidates)} 个候选，超过 tuning.max_candidates={tuning.max_candidates}"
            logging.error(msg)
            raise ConfigurationError(msg, field="tuning.max_candidates")
    keys = [(i, c, config.seed + j) for i, candidates in enumerate(expanded) if len(candidates) > 1
            for c in range(len(candidates)) for j in range(tuning.runs)]
    jobs = [
        (lambda entry=expanded[i][c].entry, seed=seed: _tuning_score(entry, problem, config.oracle, seed,
                                                                     tuning.metric))
        for i, c, seed in keys
    ]
    logging.info(f"调参: {len(jobs)} 次运行 ({tuning.metric}, 每个候选 {tuning.runs} 个种子)")
    collected = {}
    for (i, c, _), score in zip(keys, await run_jobs(jobs, max_workers)):
        collected.setdefault((i, c), []).append(score)

    entries, rows = [], []
    for i, candidates in enumerate(expanded):
        if len(candidates) == 1:
            entries.append(candidates[0].entry)
            continue
        raw_scores = [collected[(i, c)] for c in range(len(candidates))]
        means = [mean_score(scores) for scores in raw_scores]
        best = select_best(means)
        if best is None:
            msg = f"optimizers[{i}] ({entry_label(config.entries[i])}) 的 {len(candidates)} 个调参候选全部发散"
            logging.error(msg)
            raise NumericalBlowUpError(msg)
        entries.append(candidates[best].entry)
        for c, candidate in enumerate(candidates):
            rows.append({"spec_index": i, "label": entry_label(candidate.entry), "candidate": c,
                         "settings": candidate.description, "score": means[c],
                         "failed_runs": sum(1 for s in raw_scores[c] if not math.isfinite(s)), "selected": c == best})
        logging.info(f"调参 optimizers[{i}]: 入选 {candidates[best].description} ({tuning.metric}={means[best]:.6g})")
    return entries, rows


async def run_experiment_async(config: ExperimentConfig, out_dir: str | Path, max_workers: int = 1,
                               write: bool = True) -> ExperimentResult:
    """
    执行实验配置中的全部条目 × repeat 次重复。

    第 j 次重复使用种子 seed + j；问题只构造一次，在线程间只读共享。
    CSV 由本协程在全部作业结束后写出，与线程数无关。

    Raises:
        ConfigurationError: 条目参数与问题不兼容。
        NumericalBlowUpError: 任一运行数值发散。
    """
    out_dir = Path(out_dir)
    problem = await asyncio.to_thread(build_problem, config.problem, max_rounds(config))
    logging.info(f"实验 '{config.name}': 问题 {problem.name}, {len(config.entries)} 个条目 × {config.repeat} 次重复, "
                 f"并发 {max_workers}")
    result = ExperimentResult(config, out_dir)
    entries = config.entries
    if config.tuning is not None:
        entries, rows = await tune_entries(config, problem, max_workers)
        result.tuning = pd.DataFrame(rows, columns=TUNING_COLUMNS)
    specs = [(i, entry, j, config.seed + j) for i, entry in enumerate(entries) for j in range(config.repeat)]
    jobs = [
        (lambda entry=entry, seed=seed: execute_entry(entry, problem, config.oracle, seed))
        for _, entry, _, seed in specs
    ]
    runs = await run_jobs(jobs, max_workers)
    for (i, entry, j, seed), run in zip(specs, runs):
        result.results.append(RunResult(i, entry_label(entry), j, seed, run))

    result.summary = summarize(result.results, config.outputs.slope_window)
    result.ranking = rank_methods(result.summary)
    if config.outputs.heterogeneity:
        result.heterogeneity = pd.DataFrame(heterogeneity_rows(problem, result.results, config.seed),
                                            columns=HETEROGENEITY_COLUMNS)
    if write:
        write_outputs(result)
    return result


def run_experiment(config: ExperimentConfig, out_dir: str | Path, max_workers: int = 1,
                   write: bool = True) -> ExperimentResult:
    return asyncio.run(run_experiment_async(config, out_dir, max_workers, write))


def write_outputs(result: ExperimentResult):
    config_hash = result.config.config_hash
    out_dir = result.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    for res in result.results:
        name = f"{res.spec_index:02d}_{_safe_name(res.label)}_seed{res.seed}.csv"
        res.path = write_trace_csv(out_dir / name, res.run.records, config_hash, result.config.outputs.metrics)
    write_table_csv(out_dir / "summary.csv", result.summary.to_dict("records"), config_hash, SUMMARY_COLUMNS)
    write_table_csv(out_dir / "ranking.csv", result.ranking.to_dict("records"), config_hash, RANKING_COLUMNS)
    if result.heterogeneity is not None:
        write_table_csv(out_dir / "heterogeneity.csv", result.heterogeneity.to_dict("records"), config_hash,
                        HETEROGENEITY_COLUMNS)
    if result.tuning is not None:
        write_table_csv(out_dir / "tuning.csv", result.tuning.to_dict("records"), config_hash, TUNING_COLUMNS)
    (out_dir / "config.yaml").write_text(dump_config(result.config), encoding="utf-8")
    logging.info(f"实验 '{result.config.name}' 的 {len(result.results)} 条轨迹已写入 {out_dir}")


# --- 下界实验 ---
@dataclass
class LowerBoundReport:
    method: str
    rounds: int
    l2: float
    zeta_hat: float
    mu: float
    dim: int
    initial_gap: float
    initial_gap_bound: float
    achieved: float
    bound: float
    ratio: float
    audit_clean: bool
    violations: int
    run: OptimizerRun | None = None

    def to_row(self) -> dict:
        return {k: getattr(self, k) for k in ("method", "rounds", "l2", "zeta_hat", "mu", "dim", "initial_gap",
                                              "initial_gap_bound", "achieved", "bound", "ratio", "audit_clean",
                                              "violations")}


def run_wild_guess(problem: FederatedProblem, rounds: int) -> OptimizerRun:
    """第 1 轮起直接跳到闭式最优点的基线；每轮在上一点各记录一次查询，用于演示审计的判别力。"""
    oracle = Oracle(OracleConfig(), record_queries=True)
    x0 = problem.initial_point.copy()
    records = [make_record(problem, x0, 0, oracle, WILD_GUESS)]
    iterates = [x0]
    x = x0
    for r in range(1, rounds + 1):
        oracle.grad_calls += problem.n_clients
        oracle.queries.append(QueryRecord(r, 0, 0, x.copy(), WILD_GUESS))
        x = problem.optimum.copy()
        records.append(make_record(problem, x, r, oracle, WILD_GUESS))
        iterates.append(x.copy())
    return OptimizerRun(x.copy(), records, iterates, [], {"method": WILD_GUESS}, oracle.queries)


def run_lowerbound(l2: float, zeta_hat: float, rounds: int, method: str = "sgd", mu: float | None = None,
                   local_steps: int | None = None, dim: int | None = None, seed: int = 0) -> LowerBoundReport:
    """
    在困难实例上以精确梯度运行优化器，对比解析下界并做零响应审计。

    Args:
        mu: 默认取 ℓ₂/(64R²) (R = 0 时必须显式给出)。
        local_steps: 默认 fedavg 族取 4，其余取 1。
        dim: 默认取满足维度条件的最小偶数。

    Raises:
        ConfigurationError: 参数无效 (μ <= 0、维度不足、未知方法)。
    """
    mu = mu if mu is not None else proof_mu(l2, rounds)
    dim = dim if dim is not None else hard_instance_dimension(l2, mu, rounds)
    instance = make_hard_instance(l2, zeta_hat, mu, dim)
    problem = instance.problem()
    bound = instance.lower_bound(rounds)

    if method == WILD_GUESS:
        run = run_wild_guess(problem, rounds)
    else:
        if local_steps is None:
            local_steps = 4 if method in ("fedavg", "m-fedavg") else 1
        spec = OptimizerSpec(method, rounds, local_steps=local_steps)
        run = run_optimizer(spec, problem, Oracle(OracleConfig(), record_queries=True), seed)

    achieved = problem.suboptimality(run.x_hat)
    audit = audit_zero_respecting(run, instance)
    ratio = achieved / bound if bound > 0 else math.inf
    report = LowerBoundReport(method, rounds, l2, zeta_hat, mu, dim, problem.suboptimality(problem.initial_point),
                              instance.initial_gap_bound(), achieved, bound, ratio, audit.clean,
                              len(audit.violations), run)
    level = logging.INFO if ratio >= 1 - 1e-9 and audit.clean else logging.WARNING
    logging.log(level, f"下界检查 [{method}] R={rounds}, d={dim}: 实际 {achieved:.6e} / 下界 {bound:.6e} = {ratio:.6g}, "
                       f"支撑审计{'通过' if audit.clean else f'发现 {len(audit.violations)} 处越界'}")
    return report
