"""Experiment harness: configs, summaries, determinism, CLI surface."""

import json

import numpy as np
import pytest

from privsel.cli import main
from privsel.core import MechanismConstants
from privsel.experiments import (
    ConfigError, EmptyRecordsError, ExperimentConfig, InstanceSpec,
    MechanismSpec, SUMMARY_CSV_HEADER, TrialRecord, nearest_rank_quantile,
    run_experiment, run_trials, summarize,
)


def make_config(**overrides):
    base = dict(
        instance=InstanceSpec("gapped", 64, 20.0),
        mechanisms=(MechanismSpec("binary_tree"),),
        rho=1.0, beta=0.1, trials=50, master_seed=7,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfig:
    def test_round_trip_is_lossless(self):
        config = make_config(mechanisms=(
            MechanismSpec("binary_tree"),
            MechanismSpec("recursive_gap",
                          MechanismConstants(c_xi=1.0, p_xi=1, base_threshold_log=6)),
        ))
        doc = config.to_json()
        again = ExperimentConfig.from_json(doc)
        assert again == config
        assert json.dumps(again.to_json(), sort_keys=True) == \
            json.dumps(doc, sort_keys=True)

    def test_from_json_defaults(self):
        doc = {"instance": {"family": "constant", "size": 4},
               "mechanisms": [{"name": "query_all"}], "rho": 2.0}
        config = ExperimentConfig.from_json(doc)
        assert config.beta == 0.1 and config.trials == 1000 and config.master_seed == 0

    @pytest.mark.parametrize("mutate", [
        lambda d: d.pop("rho"),
        lambda d: d.update(rho=-1.0),
        lambda d: d.update(beta=1.5),
        lambda d: d.update(trials=0),
        lambda d: d.update(master_seed=-3),
        lambda d: d.update(unknown_field=1),
        lambda d: d["instance"].update(family="bogus"),
        lambda d: d["instance"].update(weird=1),
        lambda d: d.update(mechanisms=[{"name": "bogus"}]),
        lambda d: d.update(mechanisms=[]),
        lambda d: d.update(mechanisms=[{"name": "binary_tree",
                                        "constants": {"c_xi": -1}}]),
    ])
    def test_invalid_configs_rejected(self, mutate):
        doc = {"instance": {"family": "constant", "size": 4},
               "mechanisms": [{"name": "query_all"}], "rho": 2.0}
        mutate(doc)
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(doc)


class TestSummarize:
    def _records(self, errors):
        return [TrialRecord("m", i, 0, e, 1, 1.0, 0) for i, e in enumerate(errors)]

    def test_worked_example(self):
        summary = summarize(self._records([0.0, 0.0, 0.0, 10.0]), threshold=5.0)
        row = summary.row("m")
        assert row.mean_error == 2.5
        assert row.failure_frequency == 0.25
        assert row.trials == 4

    def test_single_zero_record(self):
        row = summarize(self._records([0.0]), threshold=0.0).row("m")
        assert (row.mean_error, row.p50_error, row.p90_error, row.p99_error) == \
            (0.0, 0.0, 0.0, 0.0)
        assert row.failure_frequency == 0.0

    def test_nearest_rank_quantiles(self):
        values = np.arange(1.0, 101.0)
        assert nearest_rank_quantile(values, 90) == 90.0
        assert nearest_rank_quantile(values, 50) == 50.0
        assert nearest_rank_quantile(values, 99) == 99.0
        assert nearest_rank_quantile(np.array([3.0]), 90) == 3.0
        row = summarize(self._records(list(range(1, 101))), threshold=1e9).row("m")
        assert (row.p50_error, row.p90_error, row.p99_error) == (50.0, 90.0, 99.0)

    def test_quantiles_monotone(self):
        rng = np.random.default_rng(0)
        row = summarize(self._records(list(rng.uniform(0, 9, 37))), 1.0).row("m")
        assert row.p50_error <= row.p90_error <= row.p99_error

    def test_empty_records(self):
        with pytest.raises(EmptyRecordsError):
            summarize([], 0.0)


class TestRunExperiment:
    def test_constant_instance_has_zero_error(self):
        config = make_config(
            instance=InstanceSpec("constant", 16),
            mechanisms=tuple(MechanismSpec(n) for n in
                             ("binary_tree", "recursive_gap", "combined",
                              "exponential", "query_all")),
            trials=5)
        summary = run_experiment(config)
        assert all(row.mean_error == 0.0 for row in summary.rows)

    def test_byte_identical_reruns(self):
        config = make_config(trials=40)
        assert run_experiment(config).to_csv() == run_experiment(config).to_csv()

    def test_errors_nonnegative_and_budget_capped(self):
        config = make_config(
            instance=InstanceSpec("uniform", 32, 10.0, seed=3),
            mechanisms=(MechanismSpec("binary_tree"), MechanismSpec("query_all")),
            trials=30)
        for rec in run_trials(config):
            assert rec.error >= 0.0
            assert rec.budget_spent <= config.rho * (1 + 1e-9)

    def test_fresh_instances_per_trial(self):
        config = make_config(
            instance=InstanceSpec("uniform", 16, 5.0),
            fresh_instance_per_trial=True, trials=10)
        records = run_trials(config)
        assert len(records) == 10
        # distinct instances make the winner losses vary
        assert len({rec.error for rec in records}) > 1

    def test_gap_instance_failure_rate_within_bound(self):
        from privsel.core import gap_threshold
        gap = gap_threshold(1024, 1.0, 0.1)
        config = make_config(
            instance=InstanceSpec("gapped", 1024, gap),
            trials=500, master_seed=11)
        row = run_experiment(config).row("binary_tree")
        assert row.failure_frequency <= 0.1

    def test_failure_rate_monotone_in_gap_and_rho(self):
        base_gap = 6.0
        freqs_gap = []
        for mult in (1.0, 2.0, 4.0):
            config = make_config(
                instance=InstanceSpec("gapped", 64, base_gap * mult),
                trials=400, master_seed=5)
            freqs_gap.append(run_experiment(config).row("binary_tree").failure_frequency)
        assert freqs_gap[0] >= freqs_gap[1] >= freqs_gap[2]
        freqs_rho = []
        for rho in (0.25, 1.0, 4.0):
            config = make_config(
                instance=InstanceSpec("gapped", 64, base_gap), rho=rho,
                trials=400, master_seed=5)
            freqs_rho.append(run_experiment(config).row("binary_tree").failure_frequency)
        assert freqs_rho[0] >= freqs_rho[1] >= freqs_rho[2]


CONFIG_DOC = {
    "instance": {"family": "gapped", "size": 32, "scale": 10.0},
    "mechanisms": [{"name": "binary_tree"}, {"name": "query_all"}],
    "rho": 1.0,
    "trials": 20,
    "master_seed": 3,
}


class TestCli:
    def _write_config(self, tmp_path, doc=CONFIG_DOC):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        return str(path)

    def test_run_writes_summary_csv(self, tmp_path, capsys):
        cfg = self._write_config(tmp_path)
        out = tmp_path / "summary.csv"
        records = tmp_path / "trials.jsonl"
        code = main(["run", cfg, "--out", str(out), "--records", str(records)])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == SUMMARY_CSV_HEADER
        assert len(lines) == 3
        assert lines[1].startswith("binary_tree,20,")
        rec_lines = records.read_text().strip().split("\n")
        assert len(rec_lines) == 40
        first = json.loads(rec_lines[0])
        assert set(first) == {"mechanism", "trial", "winner", "error",
                              "rounds_used", "budget_spent", "recursion_depth"}

    def test_run_deterministic(self, tmp_path):
        cfg = self._write_config(tmp_path)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["run", cfg, "--out", str(a)]) == 0
        assert main(["run", cfg, "--out", str(b)]) == 0
        assert a.read_text() == b.read_text()

    def test_run_flag_overrides(self, tmp_path):
        cfg = self._write_config(tmp_path)
        out = tmp_path / "o.csv"
        assert main(["run", cfg, "--trials", "5", "--seed", "9", "--out", str(out)]) == 0
        assert ",5," in out.read_text().split("\n")[1]

    def test_config_error_exit_code(self, tmp_path):
        bad = dict(CONFIG_DOC, mechanisms=[{"name": "bogus"}])
        cfg = self._write_config(tmp_path, bad)
        assert main(["run", cfg]) == 2
        assert main(["run", str(tmp_path / "missing.json")]) == 2
        notjson = tmp_path / "x.json"
        notjson.write_text("{nope")
        assert main(["run", str(notjson)]) == 2

    def test_gen_csv(self, tmp_path):
        out = tmp_path / "inst.csv"
        assert main(["gen", "gapped", "4", "2.5", "0", "--out", str(out)]) == 0
        assert out.read_text() == "index,loss\n0,0.0\n1,2.5\n2,2.5\n3,2.5\n"
        assert main(["gen", "bogus", "4", "2.5", "0", "--out", str(out)]) == 2

    def test_verify_quick_report(self, tmp_path):
        out = tmp_path / "report.csv"
        code = main(["verify", "--grid", "quick", "--fuzz-trials", "300",
                     "--subset-draws", "20000", "--rate-trials", "3000",
                     "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "claim,params,verdict,margin,note"
        assert all(",PASS," in line for line in lines[1:])
        claims = {line.split(",")[0] for line in lines[1:]}
        assert claims == {"scale_dominance", "error_recursion", "gap_margin",
                          "subset_event_dp_match", "subset_event_enum_match",
                          "subset_event_mc", "good_subset_rate", "sensitivity_fuzz"}

    def test_simulate_equal_budget(self, tmp_path):
        cfg = self._write_config(tmp_path)
        out = tmp_path / "eq.csv"
        assert main(["simulate-equal-budget", cfg, "--trials", "5",
                     "--out", str(out)]) == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0].startswith("mechanism,trials,m_bound,equal_rounds_budget,")
        assert len(lines) == 3
        fields = lines[1].split(",")
        assert fields[0] == "binary_tree" and int(fields[2]) == 5
        assert float(fields[-1]) >= 0.0  # min top-up variance
