# -*- coding: utf-8 -*-
"""
配置文件加载、路径常量和运行时数据目录管理工具。
"""
import copy
import hashlib
import json
import logging
import os
from pathlib import Path

import yaml

from fedsim_utils.core import ConfigurationError

# --- 配置常量 ---
SIM_CONFIG_PATH = Path("sim_config.yaml")  # 工具级默认配置
EXAMPLE_CONFIG_DIR = Path("configs")  # 示例实验配置目录
THREADS_ENV_VAR = "FEDCHAIN_SIM_THREADS"

# --- 内部运行时数据目录 ---
RUNTIME_DATA_BASE_DIR = Path("runtime_data")
LOGS_DIR = RUNTIME_DATA_BASE_DIR / "logs"  # 日志文件存放目录
DEFAULT_OUTPUT_DIR = RUNTIME_DATA_BASE_DIR / "results"  # 默认 CSV 输出目录

# 默认日志文件名基础部分
DEFAULT_LOG_FILE_BASENAME = "fedchain_sim.log"

VALID_LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]

DEFAULT_SIM_CONFIG = {
    'runner': {
        'max_workers': 4,  # 并行运行的 (spec, repeat) 作业数
        'output_dir': str(DEFAULT_OUTPUT_DIR),
    },
    'logging': {
        'level': "INFO"
    }
}


def load_yaml_config(path: str | Path) -> dict | None:
    """
    从指定路径加载 YAML 配置文件。

    Args:
        path (str | Path): YAML 文件的路径。

    Returns:
        dict | None: 加载后的配置字典；内容不是字典时返回 None。

    Raises:
        FileNotFoundError: 文件不存在。
        yaml.YAMLError: YAML 语法错误。
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            config_data = yaml.safe_load(f)
            if not isinstance(config_data, dict):
                logging.error(f"配置文件内容无效，期望为字典格式: {path}")
                return None
            return config_data
    except FileNotFoundError:
        logging.error(f"配置文件未找到: {path}")
        raise
    except yaml.YAMLError as e:
        logging.error(f"YAML 配置文件格式错误: {path} - {e}")
        raise


def load_sim_config(path: str | Path = SIM_CONFIG_PATH) -> dict:
    """
    加载工具级配置 (sim_config.yaml)，逐节合并到默认值上。
    文件不存在、加载失败或键无效时使用默认值。

    Returns:
        dict: 生效的工具配置。
    """
    config = copy.deepcopy(DEFAULT_SIM_CONFIG)
    path = Path(path)
    if not path.is_file():
        logging.info(f"工具配置文件 {path} 未找到，将使用默认配置。")
        return config
    try:
        loaded_data = load_yaml_config(path)
    except (FileNotFoundError, yaml.YAMLError) as e:
        logging.error(f"加载工具配置文件 {path} 时发生错误: {e}，将使用默认配置。")
        return config
    if not loaded_data:
        logging.warning(f"工具配置文件 {path} 内容无效，将使用默认配置。")
        return config

    for section, settings in loaded_data.items():
        if section not in config or not isinstance(settings, dict):
            logging.warning(f"工具配置 {path} 中发现未知顶层键 '{section}'，将被忽略。")
            continue
        for key, value in settings.items():
            if key not in config[section]:
                logging.warning(f"工具配置 {path} 中发现未知键 '{section}.{key}'，将被忽略。")
                continue
            if section == 'logging' and key == 'level':
                if isinstance(value, str) and value.upper() in VALID_LOG_LEVELS:
                    config[section][key] = value.upper()
                else:
                    logging.warning(f"工具配置 {path} 中 'logging.level' 的值 '{value}' 无效，"
                                    f"将使用默认值 '{config[section][key]}'. 有效值: {', '.join(VALID_LOG_LEVELS)}")
            elif section == 'runner' and key == 'max_workers':
                if isinstance(value, int) and not isinstance(value, bool) and value >= 1:
                    config[section][key] = value
                else:
                    logging.warning(f"工具配置 {path} 中 'runner.max_workers' 的值 '{value}' 无效 (必须是正整数)，"
                                    f"将使用默认值 '{config[section][key]}'.")
            elif isinstance(value, type(config[section][key])):
                config[section][key] = value
            else:
                logging.warning(f"工具配置 {path} 中 '{section}.{key}' 的类型 ({type(value).__name__}) 与默认值类型 "
                                f"({type(config[section][key]).__name__}) 不匹配，将使用默认值。")
    logging.info(f"成功加载工具配置文件: {path}")
    logging.debug(f"最终生效的工具配置: {config}")
    return config


def resolve_worker_count(cli_threads: int | None, sim_config: dict) -> int:
    """
    并行作业数：--threads > 环境变量 FEDCHAIN_SIM_THREADS > runner.max_workers。

    Raises:
        ConfigurationError: 命令行或环境变量给出的值不是正整数。
    """
    if cli_threads is not None:
        if cli_threads < 1:
            raise ConfigurationError(f"--threads 必须 >= 1，实际为 {cli_threads}", field="threads")
        return cli_threads
    env_value = os.environ.get(THREADS_ENV_VAR)
    if env_value:
        try:
            workers = int(env_value)
        except ValueError:
            workers = 0
        if workers < 1:
            msg = f"环境变量 {THREADS_ENV_VAR}='{env_value}' 不是正整数"
            logging.error(msg)
            raise ConfigurationError(msg, field=THREADS_ENV_VAR)
        return workers
    return sim_config.get('runner', {}).get('max_workers', DEFAULT_SIM_CONFIG['runner']['max_workers'])


def config_sha256(config: dict) -> str:
    """配置的规范 JSON (键排序) 的 sha256。"""
    canonical = json.dumps(config, sort_keys=True, ensure_ascii=False, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
