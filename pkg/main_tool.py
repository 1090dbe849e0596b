# -*- coding: utf-8 -*-
"""
主入口脚本 - FedChain 联邦优化模拟器。

用法见 `./run_tool.sh --help` 与 docs/DEVELOPMENT.md。
"""

import sys
import asyncio
import logging

import numpy as np

from fedchain_lib.log_utils import setup_logging
from fedchain_lib.cli_handler import setup_arg_parser, main_cli_entry


def main(argv=None) -> int:
    """解析参数、初始化日志并运行子命令，返回进程退出码。"""
    args = setup_arg_parser().parse_args(argv)

    try:
        setup_logging(log_level_arg=args.log_level, log_file_path_arg=args.log_file)
    except Exception as e:
        print(f"[CRITICAL] 日志系统初始化失败: {e}", file=sys.stderr)
        return 99

    logging.info("=" * 20 + f" 模拟器启动: {args.command} " + "=" * 20)
    logging.info(f"命令行参数: {' '.join(sys.argv)}")
    logging.debug(f"Python {sys.version.split()[0]}, numpy {np.__version__}")
    try:
        exit_code = asyncio.run(main_cli_entry(args))
    except KeyboardInterrupt:
        logging.warning("用户通过 Ctrl+C 中断模拟，未写出的结果已丢弃。")
        print("\n模拟已由用户中断。")
        return 130
    except Exception as e:
        # main_cli_entry 已处理已知错误，这里只剩未预期的异常
        logging.critical(f"模拟器异常终止: {e}", exc_info=True)
        print(f"\n发生严重错误，请检查日志文件获取详细信息。错误: {e}")
        return 1
    logging.info("=" * 20 + f" 模拟器结束，退出码 {exit_code} " + "=" * 20)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
