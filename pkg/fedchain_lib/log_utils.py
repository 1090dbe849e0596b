# -*- coding: utf-8 -*-
"""
日志设置工具函数。
"""
import logging
import logging.handlers
import sys
from datetime import datetime
from pathlib import Path

from .config_utils import LOGS_DIR, VALID_LOG_LEVELS, load_sim_config

# 默认日志格式
DEFAULT_LOG_FORMAT = '%(asctime)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'
DEFAULT_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

# --- 全局日志配置状态 ---
_logging_configured = False


def _timestamped_log_name() -> str:
    return f"fedchain_sim_{datetime.now().strftime('%Y%m%d_%H%M%S_%f')[:-3]}.log"


def _resolve_level(log_level_arg) -> str:
    """优先级: 命令行 > sim_config.yaml > INFO。"""
    if log_level_arg:
        if log_level_arg.upper() in VALID_LOG_LEVELS:
            if not _logging_configured: print(f"[Log Setup] 使用命令行指定的日志级别: {log_level_arg.upper()}")
            return log_level_arg.upper()
        if not _logging_configured: print(f"[Log Setup] 警告：命令行指定的日志级别 '{log_level_arg}' 无效，将尝试配置文件或默认值。")
    level = load_sim_config().get('logging', {}).get('level', 'INFO')
    if not _logging_configured: print(f"[Log Setup] 使用配置文件或默认日志级别: {level}")
    return level


def _resolve_log_file(log_file_path_arg) -> Path | None:
    """返回日志文件路径；'' 或 'none' 或路径不可用时返回 None (禁用文件日志)。"""
    if isinstance(log_file_path_arg, str) and log_file_path_arg.lower() in ('', 'none'):
        print("[Log Setup] 根据命令行参数禁用文件日志记录。")
        return None
    try:
        if log_file_path_arg:
            log_path_arg = Path(log_file_path_arg)
            if log_path_arg.is_dir():
                path = log_path_arg / _timestamped_log_name()
                print(f"[Log Setup] 日志将记录到指定目录下的文件: {path}")
                return path
            log_path_arg.parent.mkdir(parents=True, exist_ok=True)
            print(f"[Log Setup] 日志将记录到指定的文件: {log_path_arg}")
            return log_path_arg
        LOGS_DIR.mkdir(parents=True, exist_ok=True)
        path = LOGS_DIR / _timestamped_log_name()
        print(f"[Log Setup] 使用默认日志路径: {path}")
        return path
    except OSError as e:
        print(f"[Log Setup] 处理日志路径 '{log_file_path_arg or LOGS_DIR}' 时出错: {e}。将禁用文件日志。")
        return None


def setup_logging(log_level_arg=None, log_file_path_arg=None):
    """
    配置根 logger：控制台处理器 + 轮转文件处理器 (5MB × 20)。
    可以安全地多次调用，只有第一次调用会添加 Handler，后续调用只调整级别。

    Args:
        log_level_arg (str | None): 命令行指定的日志级别 (优先级最高)。
        log_file_path_arg (str | Path | None):
            - 文件路径：写入该文件 (带轮转)。
            - 目录：写入该目录下带时间戳的文件。
            - None：写入 runtime_data/logs/fedchain_sim_<时间戳>.log。
            - '' 或 'none'：禁用文件日志。
    """
    global _logging_configured

    final_log_level_str = _resolve_level(log_level_arg)
    log_level = getattr(logging, final_log_level_str, logging.INFO)
    root_logger = logging.getLogger()

    if _logging_configured:
        print(f"[Log Setup] 调整现有日志记录器级别为: {final_log_level_str}")
        root_logger.setLevel(log_level)
        for handler in root_logger.handlers:
            handler.setLevel(log_level)
        return

    root_logger.setLevel(log_level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
    formatter = logging.Formatter(DEFAULT_LOG_FORMAT, datefmt=DEFAULT_DATE_FORMAT)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)
    print(f"[Log Setup] 控制台日志处理器已添加，级别: {final_log_level_str}")

    final_log_file_path = _resolve_log_file(log_file_path_arg)
    if final_log_file_path:
        try:
            final_log_file_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.handlers.RotatingFileHandler(
                final_log_file_path, maxBytes=5 * 1024 * 1024, backupCount=20, encoding='utf-8'
            )
            file_handler.setLevel(log_level)
            file_handler.setFormatter(formatter)
            root_logger.addHandler(file_handler)
            logging.info(f"文件日志处理器已添加，目标文件: {final_log_file_path}")
        except OSError as e:
            logging.error(f"无法配置轮转日志文件处理器 ({final_log_file_path}): {e}", exc_info=True)
            print(f"[ERROR] 无法设置日志文件 '{final_log_file_path}'。请检查权限或路径。", file=sys.stderr)
    else:
        logging.info("文件日志记录已禁用。")

    _logging_configured = True
    logging.info(f"日志记录系统初始化完成，级别: {final_log_level_str}")
