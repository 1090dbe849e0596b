# -*- coding: utf-8 -*-
"""
处理命令行参数解析与子命令分发 (run / compare / lowerbound / presets list)，
并把异常映射为退出码：0 成功，1 运行错误，2 配置错误，3 数值发散。
"""
import argparse
import logging
from pathlib import Path

import yaml

from fedsim_utils.core import ConfigurationError, NumericalBlowUpError
from fedsim_utils.optimizers import METHODS

from .config_utils import (DEFAULT_LOG_FILE_BASENAME, EXAMPLE_CONFIG_DIR, LOGS_DIR, THREADS_ENV_VAR, VALID_LOG_LEVELS,
                           config_sha256, load_sim_config, resolve_worker_count)
from .experiment_config import load_experiment_config
from .experiment_runner import WILD_GUESS, run_experiment_async, run_lowerbound
from .presets import build_preset, list_presets
from .trace_io import write_table_csv, write_trace_csv

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_CONFIG_ERROR = 2
EXIT_BLOW_UP = 3


# --- Argument Parser Setup ---
def _common_parser() -> argparse.ArgumentParser:
    """所有子命令共享的参数。"""
    common = argparse.ArgumentParser(add_help=False)
    run_group = common.add_argument_group('运行控制')
    run_group.add_argument("--seed", type=int, default=None, metavar="<U64>",
                           help="覆盖配置中的随机种子 (第 j 次重复使用 seed + j)。")
    run_group.add_argument("--out", metavar="<dir>", default=None,
                           help="CSV 输出目录。\n优先级: --out > 配置 outputs.dir > sim_config.yaml runner.output_dir。")
    run_group.add_argument("--threads", type=int, default=None, metavar="<N>",
                           help=f"并行作业数。未指定时依次使用环境变量 {THREADS_ENV_VAR} 与 sim_config.yaml。")

    log_group = common.add_argument_group('日志选项')
    log_group.add_argument("--log-level", default=None, choices=VALID_LOG_LEVELS,
                           help="设置日志记录级别 (默认取 sim_config.yaml，其次为 INFO)。")
    log_group.add_argument("--log-file", metavar="<path>", default=None,
                           help=f"指定日志文件的具体路径或目录。\n默认为 '{LOGS_DIR}/{DEFAULT_LOG_FILE_BASENAME}' (带时间戳与轮转)。"
                                "\n如果提供空字符串 '' 或 'none'，则不写入文件。")
    return common


def _add_experiment_source(parser: argparse.ArgumentParser):
    source = parser.add_argument_group('实验来源 (二选一)')
    exclusive = source.add_mutually_exclusive_group(required=True)
    exclusive.add_argument("--config", metavar="<path>",
                           help=f"实验配置 YAML 文件 (例如: {EXAMPLE_CONFIG_DIR}/toy_sgd.yaml)。")
    exclusive.add_argument("--preset", metavar="<name>", help="内置预设名称 (见 'presets list')。")
    parser.add_argument("--repeat", type=int, default=None, metavar="<N>", help="覆盖配置中的重复次数。")


def setup_arg_parser():
    """设置并返回命令行参数解析器"""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        description="FedChain 联邦优化模拟器",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", metavar="<command>", required=True)

    run_parser = subparsers.add_parser("run", parents=[common], formatter_class=argparse.RawTextHelpFormatter,
                                       help="执行实验配置中的每个优化器，写出逐轮 CSV 与 summary.csv。")
    _add_experiment_source(run_parser)

    compare_parser = subparsers.add_parser("compare", parents=[common], formatter_class=argparse.RawTextHelpFormatter,
                                           help="执行至少两个优化器并按最终次优性中位数排名。")
    _add_experiment_source(compare_parser)

    lb_parser = subparsers.add_parser("lowerbound", parents=[common], formatter_class=argparse.RawTextHelpFormatter,
                                      help="在下界困难实例上运行优化器并与解析下界比较。")
    lb_group = lb_parser.add_argument_group('困难实例参数')
    lb_group.add_argument("--l2", type=float, default=1.0, help="ℓ₂ (默认 1.0)。")
    lb_group.add_argument("--zeta-hat", type=float, default=1.0, help="ζ̂ (默认 1.0)。")
    lb_group.add_argument("--mu", type=float, default=None, help="μ，默认 ℓ₂/(64R²)。")
    lb_group.add_argument("--rounds", type=int, required=True, help="通信轮数 R。")
    lb_group.add_argument("--method", default="sgd", choices=list(METHODS) + [WILD_GUESS],
                          help="优化方法 (默认 sgd)；wild-guess 为直接跳到最优点的对照基线。")
    lb_group.add_argument("--local-steps", type=int, default=None, help="本地步数 K，默认 fedavg 为 4，其余为 1。")
    lb_group.add_argument("--dim", type=int, default=None, help="实例维度，默认取满足维度条件的最小偶数。")

    presets_parser = subparsers.add_parser("presets", parents=[common], help="内置预设相关操作。")
    presets_parser.add_argument("action", choices=["list"], help="list: 列出全部预设名称与说明。")
    return parser


# --- 子命令实现 ---
def _load_configs(args) -> list:
    if args.preset:
        configs = build_preset(args.preset)
    else:
        configs = [load_experiment_config(Path(args.config))]
    if args.repeat is not None and args.repeat < 1:
        raise ConfigurationError(f"--repeat 必须 >= 1，实际为 {args.repeat}", field="repeat")
    if args.seed is not None and args.seed < 0:
        raise ConfigurationError(f"--seed 必须非负，实际为 {args.seed}", field="seed")
    return [config.with_overrides(seed=args.seed, repeat=args.repeat) for config in configs]


def _output_dir(args, config, sim_config: dict) -> Path:
    return Path(args.out or config.outputs.dir or sim_config['runner']['output_dir'])


async def _run_experiments(args, sim_config: dict, compare: bool) -> int:
    configs = _load_configs(args)
    workers = resolve_worker_count(args.threads, sim_config)
    for config in configs:
        if compare and len(config.entries) < 2:
            raise ConfigurationError(f"compare 至少需要 2 个优化器条目，'{config.name}' 只有 {len(config.entries)} 个",
                                     field="optimizers")
        base_dir = _output_dir(args, config, sim_config)
        out_dir = base_dir / config.name if len(configs) > 1 else base_dir
        result = await run_experiment_async(config, out_dir, workers)
        print(f"\n=== 实验 {config.name} (config_sha256={config.config_hash[:12]}…) ===")
        if compare:
            print(result.ranking.to_string(index=False))
        else:
            columns = ["label", "seed", "final_round", "suboptimality", "grad_calls", "value_calls", "slope"]
            print(result.summary[columns].to_string(index=False))
        print(f"输出目录: {out_dir}")
    return EXIT_OK


def _run_lowerbound(args, sim_config: dict) -> int:
    report = run_lowerbound(args.l2, args.zeta_hat, args.rounds, method=args.method, mu=args.mu,
                            local_steps=args.local_steps, dim=args.dim, seed=args.seed or 0)
    row = report.to_row()
    config_hash = config_sha256({k: v for k, v in row.items() if k in ("method", "rounds", "l2", "zeta_hat", "mu", "dim")}
                                | {"local_steps": args.local_steps, "seed": args.seed or 0})
    out_dir = Path(args.out or sim_config['runner']['output_dir'])
    stem = f"lowerbound_{args.method}_R{args.rounds}"
    write_trace_csv(out_dir / f"{stem}_trace.csv", report.run.records, config_hash)
    write_table_csv(out_dir / f"{stem}.csv", [row], config_hash, list(row))
    print(f"\n下界检查: 方法 {report.method}, R={report.rounds}, μ={report.mu:.6g}, d={report.dim}")
    print(f"  初始间隙 F(0) − F*      : {report.initial_gap:.12g} (上界 {report.initial_gap_bound:.12g})")
    print(f"  实际次优性              : {report.achieved:.12g}")
    print(f"  解析下界                : {report.bound:.12g}")
    print(f"  实际 / 下界             : {report.ratio:.12g}")
    print(f"  支撑审计                : {'通过' if report.audit_clean else f'{report.violations} 处越界'}")
    print(f"输出目录: {out_dir}")
    return EXIT_OK


def _print_presets() -> int:
    print("\n可用预设:")
    for name, description in list_presets():
        print(f"  {name:<28} {description}")
    return EXIT_OK


async def main_cli_entry(args):
    """
    CLI 处理主入口点：分发子命令并把异常映射为退出码。
    """
    sim_config = load_sim_config()
    logging.debug(f"CLI Handler 加载的工具配置: {sim_config}")
    try:
        if args.command == "presets":
            return _print_presets()
        if args.command == "lowerbound":
            return _run_lowerbound(args, sim_config)
        return await _run_experiments(args, sim_config, compare=args.command == "compare")
    except ConfigurationError as e:
        logging.error(f"配置错误: {e}")
        print(f"配置错误: {e}")
        return EXIT_CONFIG_ERROR
    except (FileNotFoundError, yaml.YAMLError) as e:
        logging.error(f"无法读取配置: {e}")
        print(f"配置错误: 无法读取配置文件 ({e})")
        return EXIT_CONFIG_ERROR
    except NumericalBlowUpError as e:
        logging.error(f"数值发散 (第 {e.round_index} 轮): {e}")
        print(f"数值发散: 第 {e.round_index} 轮出现非有限值。请减小步长。")
        return EXIT_BLOW_UP
    except Exception as e:
        logging.error(f"运行失败: {e}", exc_info=True)
        print(f"运行失败: {e}。详情请查看日志。")
        return EXIT_RUN_ERROR
