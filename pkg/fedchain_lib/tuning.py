# -*- coding: utf-8 -*-
"""
网格调参：把条目中未固定的步长 eta 与切换比例 split 展开为候选，按最终指标择优。

FedChain 条目的本地阶段与全局阶段各自独立调步长；嵌套链的外层切分由内层轮数决定，不参与调参。
"""
import itertools
import logging
import math
from dataclasses import dataclass, replace

from fedsim_utils.optimizers import OptimizerSpec

from .experiment_config import ChainEntry, TuningSpec

TUNING_COLUMNS = ["spec_index", "label", "candidate", "settings", "score", "failed_runs", "selected"]


@dataclass(frozen=True)
class Candidate:
    """settings 为 ((点分路径, 取值), ...)，entry 为代入取值后的条目。"""
    settings: tuple
    entry: object

    @property
    def description(self) -> str:
        return ";".join(f"{key}={value:.6g}" for key, value in self.settings) or "-"


def expand_entry(entry, tuning: TuningSpec, prefix: str = "") -> list[Candidate]:
    """
    展开一个条目的全部候选，顺序为本地 × 全局 × 切分的字典序。

    partial-fedavg-sgd 条目的 eta1 / eta2 是必填项，原样返回。
    """
    if isinstance(entry, OptimizerSpec):
        if entry.eta is not None:
            return [Candidate((), entry)]
        return [Candidate(((f"{prefix}eta", eta),), replace(entry, eta=eta)) for eta in tuning.eta]
    if isinstance(entry, ChainEntry):
        local_cands = expand_entry(entry.local, tuning, f"{prefix}local.")
        global_cands = expand_entry(entry.global_spec, tuning, f"{prefix}global.")
        if entry.split_pinned or isinstance(entry.local, ChainEntry):
            splits = [((), entry.split)]
        else:
            splits = [(((f"{prefix}split", s),), s) for s in tuning.split]
        return [
            Candidate(lo.settings + gl.settings + extra,
                      replace(entry, local=lo.entry, global_spec=gl.entry, split=split, split_pinned=True))
            for lo, gl, (extra, split) in itertools.product(local_cands, global_cands, splits)
        ]
    return [Candidate((), entry)]


def mean_score(scores: list) -> float:
    """候选在多个种子上的平均指标；任一次发散或指标缺失即为 inf。"""
    if not scores or any(not math.isfinite(s) for s in scores):
        return math.inf
    return sum(scores) / len(scores)


def select_best(scores: list) -> int | None:
    """最小有限分数的下标，相等时取靠前者；全部为 inf 时返回 None。"""
    best = None
    for index, score in enumerate(scores):
        if math.isfinite(score) and (best is None or score < scores[best]):
            best = index
    if best is None:
        logging.warning(f"{len(scores)} 个候选全部发散或指标缺失")
    return best
