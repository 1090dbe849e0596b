# -*- coding: utf-8 -*-
"""
CSV 轨迹读写。首行为 `# config_sha256=<hex>`，其后为 pandas 写出的表格，浮点数一律写成 12 位有效数字的定点十进制 (不用科学计数法)。
"""
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from fedsim_utils.core import CSV_COLUMNS, RoundRecord, TraceDataError

SIGNIFICANT_DIGITS = 12
HASH_PREFIX = "# config_sha256="


def format_float(value) -> str | None:
    """12 位有效数字的定点十进制，NaN 返回 None (写出为空)。"""
    if math.isnan(value):
        return None
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return np.format_float_positional(value, precision=SIGNIFICANT_DIGITS, unique=False, fractional=False, trim="-")


def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return value


def _write_with_header(frame: pd.DataFrame, path: Path, config_hash: str):
    # object 列里混有 None 与浮点数，float_format 管不到，逐列格式化
    frame = pd.DataFrame({name: frame[name].map(_format_cell) for name in frame.columns}, columns=frame.columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{HASH_PREFIX}{config_hash}\n")
        frame.to_csv(f, index=False, na_rep="", lineterminator="\n")


def write_trace_csv(path: str | Path, records: list, config_hash: str, columns=CSV_COLUMNS) -> Path:
    """
    写出单次运行的逐轮轨迹。

    Args:
        path: 目标文件。
        records (list[RoundRecord]): 逐轮记录。
        config_hash (str): 配置哈希，写入首行。
        columns: 输出列 (CSV_COLUMNS 的子集，round 总是第一列)。

    Returns:
        Path: 写出的文件路径。
    """
    frame = pd.DataFrame([rec.to_row() for rec in records], columns=list(CSV_COLUMNS))
    frame = frame[[c for c in CSV_COLUMNS if c in columns]]
    path = Path(path)
    _write_with_header(frame, path, config_hash)
    logging.debug(f"轨迹已写入 {path} ({len(frame)} 行)")
    return path


def write_table_csv(path: str | Path, rows: list, config_hash: str, columns: list | None = None) -> Path:
    """写出汇总类表格 (summary / ranking / heterogeneity)。"""
    frame = pd.DataFrame(rows, columns=columns)
    path = Path(path)
    _write_with_header(frame, path, config_hash)
    logging.info(f"表格已写入 {path} ({len(frame)} 行)")
    return path


def read_trace_csv(path: str | Path) -> tuple[str, pd.DataFrame]:
    """
    读取 write_trace_csv / write_table_csv 写出的文件。

    Returns:
        tuple[str, DataFrame]: (配置哈希, 表格)。

    Raises:
        FileNotFoundError: 文件不存在。
        TraceDataError: 首行不是配置哈希。
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
        if not first.startswith(HASH_PREFIX):
            msg = f"文件 {path} 缺少配置哈希首行"
            logging.error(msg)
            raise TraceDataError(msg)
        frame = pd.read_csv(f, keep_default_na=True, dtype={"phase": str})
    if "phase" in frame.columns:
        frame["phase"] = frame["phase"].fillna("")
    return first[len(HASH_PREFIX):], frame


def _cell(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


def records_from_frame(frame: pd.DataFrame) -> list:
    """把完整列的轨迹表格还原为 RoundRecord 列表。"""
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        msg = f"轨迹缺少列: {', '.join(missing)}"
        logging.error(msg)
        raise TraceDataError(msg)
    records = []
    for row in frame.itertuples(index=False):
        records.append(RoundRecord(int(row.round), _cell(row.suboptimality), float(row.grad_norm_sq),
                                   _cell(row.dist_sq), int(row.grad_calls), int(row.value_calls), str(row.phase)))
    return records
