# -*- coding: utf-8 -*-
"""
单元测试 for fedchain_lib 的实验配置、执行器、CSV 读写与命令行入口
"""
import asyncio
import math
from pathlib import Path

import pandas as pd
import pytest
import yaml

from fedchain_lib.cli_handler import EXIT_BLOW_UP, EXIT_CONFIG_ERROR, EXIT_OK, main_cli_entry, setup_arg_parser
from fedchain_lib.experiment_config import (ChainEntry, TuningSpec, build_problem, load_experiment_config,
                                           parse_experiment_config)
from fedchain_lib.experiment_runner import rank_methods, run_experiment, run_jobs, run_lowerbound, summarize
from fedchain_lib.presets import PRESETS, build_preset
from fedchain_lib.trace_io import format_float, read_trace_csv, records_from_frame, write_table_csv, write_trace_csv
from fedchain_lib.tuning import expand_entry, mean_score, select_best
from fedsim_utils.chaining import PartialChainConfig
from fedsim_utils.core import ConfigurationError, TraceDataError

TOY_CONFIG = {
    "name": "toy-sgd",
    "seed": 0,
    "problem": {"family": "toy"},
    "optimizers": [{"method": "sgd", "rounds": 10, "eta": 0.1}],
}


def _write_config(tmp_path: Path, raw: dict, name: str = "experiment.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw, allow_unicode=True), encoding="utf-8")
    return path


def _cli(argv: list) -> int:
    args = setup_arg_parser().parse_args(argv)
    return asyncio.run(main_cli_entry(args))


# --- 配置解析 ---
def test_parse_reports_dotted_field_path():
    raw = dict(TOY_CONFIG, optimizers=[{"method": "sgd", "rounds": 10}, {"method": "sgd", "rounds": 5, "stepsize": 1}])
    with pytest.raises(ConfigurationError) as excinfo:
        parse_experiment_config(raw)
    assert excinfo.value.field == "optimizers[1].stepsize"


def test_parse_rejects_bad_values():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_experiment_config(dict(TOY_CONFIG, optimizers=[{"method": "sgd", "rounds": 0}]))
    assert excinfo.value.field == "optimizers[0].rounds"
    with pytest.raises(ConfigurationError) as excinfo:
        parse_experiment_config(dict(TOY_CONFIG, problem={"family": "torus"}))
    assert excinfo.value.field == "problem.family"
    with pytest.raises(ConfigurationError) as excinfo:
        parse_experiment_config(dict(TOY_CONFIG, oracle={"sigma": -1.0}))
    assert excinfo.value.field == "oracle.sigma"
    with pytest.raises(ConfigurationError):
        parse_experiment_config(dict(TOY_CONFIG, outputs={"metrics": ["round", "loss"]}))


def test_parse_chain_and_partial_entries():
    raw = {
        "problem": {"family": "shared_hessian", "params": {"n_clients": 4, "dim": 3, "kappa": 2.0, "zeta": 0.0}},
        "optimizers": [
            {"method": "fedchain", "rounds": 20, "split": 0.25,
             "local": {"method": "fedavg", "eta": 0.1, "local_steps": 4},
             "global": {"method": "sgd", "eta": 0.1},
             "selection": {"clients": 2, "samples": 3}},
            {"method": "partial-fedavg-sgd", "rounds": 5, "eta1": 0.01, "eta2": [0.2, 0.1], "local_steps": 10},
        ],
    }
    config = parse_experiment_config(raw)
    chain, partial = config.entries
    assert isinstance(chain, ChainEntry) and isinstance(partial, PartialChainConfig)
    assert chain.label == "fedavg->sgd"
    built = chain.build(build_problem(config.problem))
    assert built.local_rounds == 5 and built.global_spec.rounds == 15
    assert built.selection_clients == 2 and built.selection_samples == 3
    assert partial.eta2 == (0.2, 0.1)


def test_with_overrides_changes_hash():
    config = parse_experiment_config(TOY_CONFIG)
    same = config.with_overrides()
    other = config.with_overrides(seed=5, repeat=2)
    assert same.config_hash == config.config_hash
    assert other.config_hash != config.config_hash
    assert other.seed == 5 and other.repeat == 2


# --- CSV 读写 ---
def test_trace_csv_header_and_precision(tmp_path: Path):
    """首行为配置哈希；数值按 12 位有效数字往返。"""
    result = run_experiment(parse_experiment_config(TOY_CONFIG), tmp_path / "out", write=False)
    records = result.results[0].run.records
    path = write_trace_csv(tmp_path / "trace.csv", records, "abc123")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "# config_sha256=abc123"
    config_hash, frame = read_trace_csv(path)
    assert config_hash == "abc123"
    restored = records_from_frame(frame)
    assert [rec.round for rec in restored] == [rec.round for rec in records]
    for a, b in zip(restored, records):
        assert a.suboptimality == pytest.approx(b.suboptimality, rel=1e-11, abs=1e-300)
        assert a.grad_oracle_calls == b.grad_oracle_calls
        assert a.phase == b.phase


def test_csv_floats_are_plain_decimal(tmp_path: Path):
    """极小与极大的数值也写成定点十进制，保留 12 位有效数字，缺失值为空。"""
    assert format_float(1e-15) == "0.000000000000001"
    assert format_float(1.0 / 3.0) == "0.333333333333"
    assert format_float(2.5e13) == "25000000000000"
    assert format_float(float("nan")) is None
    rows = [{"name": "a", "value": 1.234567890123456e-20, "count": 3}, {"name": "b", "value": None, "count": 4}]
    path = write_table_csv(tmp_path / "table.csv", rows, "h", columns=["name", "value", "count"])
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[2] == "a,0." + "0" * 19 + "123456789012,3"
    assert lines[3] == "b,,4"
    assert "e-" not in "".join(lines[1:])
    _, frame = read_trace_csv(path)
    assert frame.loc[0, "value"] == pytest.approx(1.23456789012e-20, rel=1e-11)
    assert math.isnan(frame.loc[1, "value"])


def test_read_trace_csv_requires_hash_line(tmp_path: Path):
    path = tmp_path / "plain.csv"
    path.write_text("round,suboptimality\n0,1.0\n", encoding="utf-8")
    with pytest.raises(TraceDataError):
        read_trace_csv(path)


def test_metrics_subset_keeps_round_first(tmp_path: Path):
    raw = dict(TOY_CONFIG, outputs={"metrics": ["grad_calls", "suboptimality"]})
    run_experiment(parse_experiment_config(raw), tmp_path)
    _, frame = read_trace_csv(tmp_path / "00_sgd_seed0.csv")
    assert list(frame.columns) == ["round", "suboptimality", "grad_calls"]


# --- 执行器 ---
def test_run_experiment_writes_traces_and_summary(tmp_path: Path):
    """10 轮的玩具 SGD：轨迹 11 行，梯度调用单调，摘要 / 排名 / 配置文件齐全。"""
    config = parse_experiment_config(TOY_CONFIG)
    run_experiment(config, tmp_path)
    lines = (tmp_path / "00_sgd_seed0.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == f"# config_sha256={config.config_hash}"
    assert len(lines) == 1 + 1 + 11
    _, frame = read_trace_csv(tmp_path / "00_sgd_seed0.csv")
    assert frame["round"].tolist() == list(range(11))
    assert frame["grad_calls"].is_monotonic_increasing
    for name in ("summary.csv", "ranking.csv", "config.yaml"):
        assert (tmp_path / name).is_file()
    assert not (tmp_path / "heterogeneity.csv").exists()


def test_same_seed_gives_identical_bytes(tmp_path: Path):
    raw = dict(TOY_CONFIG, oracle={"sigma": 0.5}, repeat=2)
    run_experiment(parse_experiment_config(raw), tmp_path / "a")
    run_experiment(parse_experiment_config(raw), tmp_path / "b")
    for name in ("00_sgd_seed0.csv", "00_sgd_seed1.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "00_sgd_seed0.csv").read_bytes() != (tmp_path / "a" / "00_sgd_seed1.csv").read_bytes()


def test_thread_count_does_not_change_output(tmp_path: Path):
    """1 个与 8 个工作线程写出的文件逐字节一致。"""
    raw = {
        "name": "threads",
        "repeat": 3,
        "problem": {"family": "shared_hessian", "params": {"n_clients": 4, "dim": 3, "kappa": 5.0, "zeta": 0.5}},
        "oracle": {"sigma": 0.3},
        "optimizers": [
            {"method": "sgd", "rounds": 15, "eta": 0.1, "clients_per_round": 2},
            {"method": "fedavg", "rounds": 15, "eta": 0.05, "local_steps": 4, "clients_per_round": 2},
            {"method": "fedchain", "rounds": 15, "local": {"method": "fedavg", "eta": 0.05, "local_steps": 4},
             "global": {"method": "sgd", "eta": 0.1}},
        ],
        "outputs": {"heterogeneity": True},
    }
    config = parse_experiment_config(raw)
    run_experiment(config, tmp_path / "one", max_workers=1)
    run_experiment(config, tmp_path / "eight", max_workers=8)
    names = sorted(p.name for p in (tmp_path / "one").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "eight").iterdir())
    assert len([n for n in names if n.endswith(".csv")]) == 9 + 3
    for name in names:
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "eight" / name).read_bytes()


def test_run_jobs_preserves_order_and_raises_first_error():
    assert asyncio.run(run_jobs([lambda i=i: i * i for i in range(6)], 3)) == [0, 1, 4, 9, 16, 25]

    def boom():
        raise ValueError("first")

    def later():
        raise KeyError("second")

    with pytest.raises(ValueError):
        asyncio.run(run_jobs([lambda: 1, boom, later], 2))


def test_ranking_ties_keep_entry_order(tmp_path: Path):
    """两个完全相同的条目结果相同，排名按条目序号。"""
    entry = {"method": "sgd", "rounds": 5, "eta": 0.1}
    raw = dict(TOY_CONFIG, optimizers=[dict(entry, name="first"), dict(entry, name="second")])
    result = run_experiment(parse_experiment_config(raw), tmp_path, write=False)
    ranking = result.ranking
    assert ranking["label"].tolist() == ["first", "second"]
    assert ranking["rank"].tolist() == [1, 2]


def test_rank_methods_puts_nan_last():
    summary = pd.DataFrame({
        "spec_index": [0, 1, 2], "label": ["a", "b", "c"], "repeat": [0, 0, 0],
        "suboptimality": [math.nan, 0.5, 0.1], "slope": [0.0, 0.0, 0.0],
        "grad_calls": [1, 1, 1], "value_calls": [0, 0, 0],
    })
    assert rank_methods(summary)["label"].tolist() == ["c", "b", "a"]


def test_summary_slope_window(tmp_path: Path):
    result = run_experiment(parse_experiment_config(TOY_CONFIG), tmp_path, write=False)
    summary = summarize(result.results, window=(2, 8))
    assert summary.loc[0, "slope"] < 0
    assert summary.loc[0, "final_round"] == 10


def test_heterogeneity_file_for_shared_hessian(tmp_path: Path):
    raw = {
        "problem": {"family": "shared_hessian", "params": {"n_clients": 4, "dim": 3, "kappa": 5.0, "zeta": 0.5}},
        "optimizers": [{"method": "sgd", "rounds": 5, "eta": 0.1}],
        "outputs": {"heterogeneity": True},
    }
    run_experiment(parse_experiment_config(raw), tmp_path)
    _, frame = read_trace_csv(tmp_path / "heterogeneity.csv")
    assert frame.loc[0, "probe"] == "closed_form"
    assert frame.loc[0, "zeta_exact"] == pytest.approx(0.5)
    assert len(frame) == 2


# --- 网格调参 ---
def test_parse_tuning_defaults_and_errors():
    config = parse_experiment_config(dict(TOY_CONFIG, tuning={}))
    assert list(config.tuning.eta) == pytest.approx([1e-3, 10 ** -2.5, 1e-2, 10 ** -1.5, 1e-1])
    assert list(config.tuning.split) == pytest.approx([1e-2, 10 ** -1.625, 10 ** -1.25, 10 ** -0.875, 10 ** -0.5])
    assert config.tuning.metric == "grad_norm_sq" and config.tuning.runs == 1
    assert config.normalized["tuning"]["eta"] == list(config.tuning.eta)
    assert parse_experiment_config(TOY_CONFIG).tuning is None
    cases = [({"metric": "accuracy"}, "tuning.metric"), ({"split": [0.1, 1.5]}, "tuning.split"),
             ({"eta": [0.0]}, "tuning.eta"), ({"eta": []}, "tuning.eta"), ({"runs": 0}, "tuning.runs"),
             ({"grid": [1]}, "tuning.grid")]
    for tuning, path in cases:
        with pytest.raises(ConfigurationError) as excinfo:
            parse_experiment_config(dict(TOY_CONFIG, tuning=tuning))
        assert excinfo.value.field == path


def test_expand_entry_tunes_only_unpinned_fields():
    """显式给出的 eta / split 不参与调参；嵌套链的外层切分也不参与。"""
    fedavg = {"method": "fedavg", "local_steps": 4}
    raw = {
        "problem": {"family": "toy"},
        "optimizers": [
            {"method": "sgd", "rounds": 10, "eta": 0.1},
            {"method": "sgd", "rounds": 10},
            {"method": "fedchain", "rounds": 20, "local": fedavg, "global": {"method": "sgd"}},
            {"method": "fedchain", "rounds": 20, "split": 0.25, "local": fedavg, "global": {"method": "sgd", "eta": 0.1}},
            {"method": "fedchain", "rounds": 20, "global": {"method": "asg"},
             "local": {"method": "fedchain", "rounds": 10, "split": 0.5, "local": fedavg, "global": {"method": "sgd"}}},
        ],
    }
    tuning = TuningSpec()
    pinned, free, chain, pinned_chain, nested = (expand_entry(e, tuning) for e in parse_experiment_config(raw).entries)
    assert len(pinned) == 1 and pinned[0].description == "-"
    assert [c.entry.eta for c in free] == list(tuning.eta)
    assert free[-1].description == "eta=0.1"
    assert len(chain) == 5 * 5 * 5
    assert [key for key, _ in chain[0].settings] == ["local.eta", "global.eta", "split"]
    assert chain[1].entry.split == tuning.split[1] and chain[1].entry.split_pinned
    assert len(pinned_chain) == 5 and {c.entry.split for c in pinned_chain} == {0.25}
    assert len(nested) == 5 * 5 * 5
    assert [key for key, _ in nested[0].settings] == ["local.local.eta", "local.global.eta", "global.eta"]


def test_select_best_prefers_first_minimum_and_skips_blow_ups():
    assert select_best([3.0, 1.0, 1.0]) == 1
    assert select_best([math.inf, 2.0]) == 1
    assert select_best([math.inf, math.inf]) is None
    assert mean_score([1.0, 3.0]) == 2.0
    assert mean_score([1.0, math.inf]) == math.inf


def test_run_experiment_with_tuning_keeps_best_candidate(tmp_path: Path):
    """发散的候选记为 inf；入选候选的分数等于正式运行 (同一种子) 的最终梯度范数平方。"""
    raw = {
        "problem": {"family": "shared_hessian", "params": {"kappa": 10.0}},
        "optimizers": [{"method": "sgd", "rounds": 200},
                       {"method": "sgd", "rounds": 200, "eta": 0.05, "name": "fixed"}],
        "tuning": {"eta": [0.05, 0.1, 10.0]},
    }
    result = run_experiment(parse_experiment_config(raw), tmp_path)
    _, frame = read_trace_csv(tmp_path / "tuning.csv")
    assert list(frame["spec_index"]) == [0, 0, 0]
    assert list(frame["settings"]) == ["eta=0.05", "eta=0.1", "eta=10"]
    assert list(frame["selected"]) == [False, True, False]
    assert frame.loc[2, "failed_runs"] == 1 and math.isinf(frame.loc[2, "score"])
    assert frame.loc[1, "score"] < frame.loc[0, "score"]
    assert result.summary.loc[0, "grad_norm_sq"] == pytest.approx(frame.loc[1, "score"], rel=1e-9)
    assert len(result.summary) == 2


def test_tuning_rejects_too_many_candidates(tmp_path: Path):
    raw = dict(TOY_CONFIG, optimizers=[{"method": "sgd", "rounds": 5}], tuning={"max_candidates": 3})
    with pytest.raises(ConfigurationError) as excinfo:
        run_experiment(parse_experiment_config(raw), tmp_path, write=False)
    assert excinfo.value.field == "tuning.max_candidates"


def test_tuning_presets_wire_grids_and_switch_rules():
    large = build_preset("large-k")[0]
    assert len(large.tuning.eta) == 7 and large.tuning.eta[-1] == pytest.approx(1.0)
    assert large.entries[3].build(build_problem(large.problem)).local_rounds == 1
    multi = build_preset("multistage-chain")[0]
    assert multi.entries[3].split == "stepsize" and multi.tuning is not None
    three = build_preset("three-stage-chain")[0]
    assert isinstance(three.entries[1].local, ChainEntry)
    assert len(expand_entry(three.entries[1], three.tuning)) == 5 * 5 * 5
    decay = build_preset("stepsize-decay")[0]
    assert [e.label for e in decay.entries[:3]] == ["m-fedavg", "m-sgd", "m-asg"]


def test_presets_build_valid_configs():
    for name in PRESETS:
        configs = build_preset(name)
        assert configs and all(config.entries for config in configs)
    assert [c.name for c in build_preset("paper-stochastic-logistic")] == [
        "paper-stochastic-logistic-X0", "paper-stochastic-logistic-X50", "paper-stochastic-logistic-X100"]
    with pytest.raises(ConfigurationError):
        build_preset("nope")


def test_run_lowerbound_sgd_respects_bound():
    report = run_lowerbound(1.0, 1.0, 5)
    assert report.audit_clean
    assert report.achieved >= report.bound
    assert report.initial_gap <= report.initial_gap_bound + 1e-9


# --- 命令行入口 ---
def test_cli_run_exit_ok(tmp_path: Path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    config = _write_config(tmp_path, TOY_CONFIG)
    assert _cli(["run", "--config", str(config), "--out", "results", "--threads", "2"]) == EXIT_OK
    assert (tmp_path / "results" / "00_sgd_seed0.csv").is_file()
    assert "toy-sgd" in capsys.readouterr().out


def test_cli_seed_and_repeat_override(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = _write_config(tmp_path, TOY_CONFIG)
    assert _cli(["run", "--config", str(config), "--out", "results", "--seed", "7", "--repeat", "2"]) == EXIT_OK
    assert (tmp_path / "results" / "00_sgd_seed7.csv").is_file()
    assert (tmp_path / "results" / "00_sgd_seed8.csv").is_file()


def test_cli_unknown_field_exit_2(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    raw = dict(TOY_CONFIG, optimizers=[{"method": "sgd", "rounds": 10}, {"method": "sgd", "rounds": 5, "stepsize": 1}])
    config = _write_config(tmp_path, raw)
    assert _cli(["run", "--config", str(config), "--out", "results"]) == EXIT_CONFIG_ERROR
    assert not (tmp_path / "results").exists()


def test_cli_missing_and_malformed_config_exit_2(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert _cli(["run", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG_ERROR
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: [unclosed", encoding="utf-8")
    assert _cli(["run", "--config", str(bad)]) == EXIT_CONFIG_ERROR


def test_cli_blow_up_exit_3(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    raw = {
        "problem": {"family": "shared_hessian", "params": {"kappa": 10.0}},
        "optimizers": [{"method": "sgd", "rounds": 1000, "eta": 10.0}],
    }
    config = _write_config(tmp_path, raw)
    assert _cli(["run", "--config", str(config), "--out", "results"]) == EXIT_BLOW_UP


def test_cli_compare_requires_two_entries(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = _write_config(tmp_path, TOY_CONFIG)
    assert _cli(["compare", "--config", str(config), "--out", "results"]) == EXIT_CONFIG_ERROR


def test_cli_compare_prints_ranking(tmp_path: Path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    raw = dict(TOY_CONFIG, optimizers=[{"method": "sgd", "rounds": 10, "eta": 0.01},
                                       {"method": "sgd", "rounds": 10, "eta": 0.5, "name": "fast"}])
    config = _write_config(tmp_path, raw)
    assert _cli(["compare", "--config", str(config), "--out", "results"]) == EXIT_OK
    _, ranking = read_trace_csv(tmp_path / "results" / "ranking.csv")
    assert ranking.loc[0, "label"] == "fast"
    assert "median_suboptimality" in capsys.readouterr().out


def test_cli_presets_list(tmp_path: Path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert _cli(["presets", "list"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in PRESETS:
        assert name in out


def test_cli_unknown_preset_exit_2(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert _cli(["run", "--preset", "nope"]) == EXIT_CONFIG_ERROR


def test_cli_lowerbound_writes_report(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert _cli(["lowerbound", "--rounds", "5", "--out", "lb"]) == EXIT_OK
    _, frame = read_trace_csv(tmp_path / "lb" / "lowerbound_sgd_R5.csv")
    assert frame.loc[0, "achieved"] >= frame.loc[0, "bound"]
    _, trace = read_trace_csv(tmp_path / "lb" / "lowerbound_sgd_R5_trace.csv")
    assert trace["round"].tolist() == list(range(6))


def test_cli_threads_must_be_positive(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = _write_config(tmp_path, TOY_CONFIG)
    assert _cli(["run", "--config", str(config), "--threads", "0"]) == EXIT_CONFIG_ERROR


def test_example_configs_are_valid():
    """configs/ 下的示例配置都能通过校验。"""
    config_dir = Path(__file__).resolve().parent.parent / "configs"
    paths = sorted(config_dir.glob("*.yaml"))
    assert paths
    for path in paths:
        config = load_experiment_config(path)
        assert config.entries
