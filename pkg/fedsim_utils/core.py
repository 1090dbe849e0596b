# -*- coding: utf-8 -*-
"""
核心数值工具：稠密向量运算、基于计数器的确定性随机流、轮次记录，以及全库共享的异常类型。

所有运算均为 64 位浮点；随机数只由 (seed, client, round, step, tag) 决定，
与执行顺序和线程数无关。
"""
import logging
import zlib
from dataclasses import dataclass, replace

import numpy as np

# --- 常量 ---
TOL_EVAL = 1e-9  # "次优性 >= 0" 断言的绝对容差
SUPPORT_THRESHOLD = 1e-12  # 判定坐标非零的阈值
_UINT64_MOD = 2 ** 64

CSV_COLUMNS = ["round", "suboptimality", "grad_norm_sq", "dist_sq", "grad_calls", "value_calls", "phase"]


# --- 异常类型 ---
class FedSimError(Exception):
    """模拟器错误基类。"""


class ConfigurationError(FedSimError, ValueError):
    """配置或参数错误。field 为出错字段的点分路径 (可选)。"""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DimensionMismatchError(FedSimError, ValueError):
    """向量维度不一致。"""


class NumericalBlowUpError(FedSimError, ArithmeticError):
    """迭代点出现 NaN/Inf。"""

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message)
        self.round_index = round_index


class TraceDataError(FedSimError, ValueError):
    """轨迹数据不足以完成分析 (缺少逐步记录、次优性非正等)。"""


# --- 向量工具 ---
def as_vector(x, dim: int | None = None) -> np.ndarray:
    """
    把输入转换为一维 float64 数组 (标量视为 1 维向量)。

    Args:
        x: 数组、列表或标量。
        dim (int | None): 期望维度；给定时不一致即报错。

    Returns:
        np.ndarray: 一维 float64 数组 (新副本)。

    Raises:
        DimensionMismatchError: 不是一维，或维度与 dim 不符。
    """
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        msg = f"期望一维向量，实际形状为 {arr.shape}"
        logging.error(msg)
        raise DimensionMismatchError(msg)
    if dim is not None and arr.shape[0] != dim:
        msg = f"向量维度不匹配: 期望 {dim}，实际 {arr.shape[0]}"
        logging.error(msg)
        raise DimensionMismatchError(msg)
    return arr


def ensure_finite(x: np.ndarray, round_index: int | None = None, context: str = "") -> np.ndarray:
    """检查数组全部有限，否则抛出 NumericalBlowUpError。"""
    if not np.all(np.isfinite(x)):
        where = f" (轮次 {round_index})" if round_index is not None else ""
        msg = f"数值发散: {context or '迭代点'}出现非有限值{where}"
        logging.error(msg)
        raise NumericalBlowUpError(msg, round_index=round_index)
    return x


def axpy(a: float, x, y) -> np.ndarray:
    """
    返回 a·x + y。

    Raises:
        DimensionMismatchError: x 与 y 维度不同。
        NumericalBlowUpError: 结果出现非有限值。
    """
    x_vec = as_vector(x)
    y_vec = as_vector(y)
    if x_vec.shape != y_vec.shape:
        msg = f"axpy 维度不匹配: {x_vec.shape[0]} 与 {y_vec.shape[0]}"
        logging.error(msg)
        raise DimensionMismatchError(msg)
    return ensure_finite(float(a) * x_vec + y_vec, context="axpy 结果")


def support(x: np.ndarray, threshold: float = SUPPORT_THRESHOLD) -> set[int]:
    """非零坐标的下标集合 (0 起始)。"""
    return set(np.flatnonzero(np.abs(x) > threshold).tolist())


def support_prefix(x: np.ndarray, threshold: float = SUPPORT_THRESHOLD) -> int:
    """最小的 p 使 supp(x) ⊆ {0..p-1}；零向量返回 0。"""
    nz = np.flatnonzero(np.abs(x) > threshold)
    return int(nz[-1]) + 1 if nz.size else 0


# --- 随机流 ---
def _encode_key(value) -> int:
    """把流标识的一个分量编码成无符号 64 位整数 (字符串用 crc32)。"""
    if isinstance(value, str):
        return zlib.crc32(value.encode("utf-8"))
    return int(value) % _UINT64_MOD


@dataclass(frozen=True)
class RngStream:
    """
    计数器式随机流。同一 (seed, stream_id) 永远生成同一序列，
    不同 stream_id 经 SeedSequence 的 spawn_key 分离为独立序列。
    """
    seed: int
    client: int = -1
    round: int = -1
    step: int = -1
    tag: str = ""

    @property
    def stream_id(self) -> tuple:
        return (self.client, self.round, self.step, self.tag)

    def child(self, **changes) -> "RngStream":
        """返回替换了部分键的新流。"""
        return replace(self, **changes)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=_encode_key(self.seed),
            spawn_key=tuple(_encode_key(v) for v in self.stream_id),
        )
        return np.random.Generator(np.random.Philox(seq))


def gaussian(stream: RngStream, n: int) -> np.ndarray:
    """从流中取前 n 个标准正态数。"""
    if n < 1:
        msg = f"gaussian 需要 n >= 1，实际为 {n}"
        logging.error(msg)
        raise ValueError(msg)
    return stream.generator().standard_normal(n)


# --- 轮次记录 ---
@dataclass(frozen=True)
class RoundRecord:
    """单轮诊断量。suboptimality / dist_sq 在最优点未知时为 None。"""
    round: int
    suboptimality: float | None
    grad_norm_sq: float
    dist_sq: float | None
    grad_oracle_calls: int
    value_oracle_calls: int
    phase: str = ""

    def to_row(self) -> dict:
        return {
            "round": self.round,
            "suboptimality": self.suboptimality,
            "grad_norm_sq": self.grad_norm_sq,
            "dist_sq": self.dist_sq,
            "grad_calls": self.grad_oracle_calls,
            "value_calls": self.value_oracle_calls,
            "phase": self.phase,
        }
