import json
from pathlib import Path

import pytest

from rfsearch.cli import ConfigError, load_config, main


def _write(path: Path, doc) -> str:
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


def _surrogate_global_config(tmp_path, out_name="run", **overrides):
    doc = {
        "master_seed": 7,
        "output_dir": str(tmp_path / out_name),
        "surrogate": {"target": [1, 4, 2, 8]},
        "global": {
            "iterations": 6,
            "population": 6,
            "p_m": 0.5,
            "p_s": 0.3,
            "epochs": 1,
            "k": 2,
            "T": 4,
        },
    }
    doc.update(overrides)
    return _write(tmp_path / "cfg.json", doc)


def _task_config(tmp_path, out_name="run", **extra):
    doc = {
        "master_seed": 3,
        "output_dir": str(tmp_path / out_name),
        "task": {
            "kind": "lagged_copy",
            "sequence_length": 24,
            "train_size": 48,
            "val_size": 24,
            "lag": 3,
            "num_symbols": 4,
            "seed": 1,
        },
        "network": {
            "layers": [{"kernel_size": 2, "channels": 6}],
            "head": "classifier",
        },
        "training": {"learning_rate": 0.02, "batch_size": 16, "final_epochs": 4},
    }
    doc.update(extra)
    return _write(tmp_path / "task_cfg.json", doc)


class TestConfigLoading:
    def test_missing_file_exit_code_and_message(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        rc = main(["global", "--config", str(missing)])
        assert rc == 2
        assert str(missing) in capsys.readouterr().err

    def test_unknown_keys_rejected(self, tmp_path):
        path = _write(tmp_path / "bad.json", {"master_seed": 1, "bogus": 2,
                                              "global": {}})
        with pytest.raises(ConfigError, match="bogus"):
            load_config(path)

    def test_unknown_nested_keys_rejected(self, tmp_path):
        path = _write(
            tmp_path / "bad.json",
            {"global": {"iterations": 2, "wat": 1}},
        )
        with pytest.raises(ConfigError, match="wat"):
            load_config(path)

    def test_needs_some_command_section(self, tmp_path):
        path = _write(tmp_path / "bad.json", {"master_seed": 1})
        with pytest.raises(ConfigError, match="at least one"):
            load_config(path)

    def test_invalid_json_is_config_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)


class TestGlobalCommand:
    def test_surrogate_smoke_run_writes_outputs(self, tmp_path, capsys):
        cfg = _surrogate_global_config(tmp_path)
        rc = main(["global", "--config", cfg])
        assert rc == 0
        out = tmp_path / "run"
        assert (out / "best.json").exists()
        assert (out / "trajectory.csv").exists()
        assert (out / "population_log.csv").exists()
        assert (out / "resolved_config.json").exists()
        best = json.loads((out / "best.json").read_text())
        assert len(best["dilations"]) == 4

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = _surrogate_global_config(tmp_path)
        assert main(["global", "--config", cfg]) == 0
        best1 = (tmp_path / "run" / "best.json").read_bytes()
        traj1 = (tmp_path / "run" / "trajectory.csv").read_bytes()
        assert main(["global", "--config", cfg]) == 0
        assert (tmp_path / "run" / "best.json").read_bytes() == best1
        assert (tmp_path / "run" / "trajectory.csv").read_bytes() == traj1

    def test_seed_override_changes_result_deterministically(self, tmp_path):
        cfg = _surrogate_global_config(tmp_path)
        assert main(["global", "--config", cfg, "--seed", "11"]) == 0
        run_a = (tmp_path / "run" / "population_log.csv").read_bytes()
        assert main(["global", "--config", cfg, "--seed", "11"]) == 0
        assert (tmp_path / "run" / "population_log.csv").read_bytes()[:100]  # exists
        resolved = json.loads((tmp_path / "run" / "resolved_config.json").read_text())
        assert resolved["master_seed"] == 11

    def test_config_without_global_section(self, tmp_path, capsys):
        path = _write(
            tmp_path / "c.json",
            {"surrogate": {"target": [1]}, "local": {}, "output_dir": str(tmp_path / "x"),
             "task": {"kind": "lagged_copy", "sequence_length": 8, "train_size": 4,
                      "val_size": 4, "lag": 1},
             "network": {"layers": [{"kernel_size": 2, "channels": 4}]}},
        )
        rc = main(["global", "--config", path])
        assert rc == 2
        assert "global" in capsys.readouterr().err


class TestLocalCommand:
    def test_baseline_init_writes_structure_and_trajectory(self, tmp_path):
        cfg = _task_config(
            tmp_path,
            local={"iterations": 2, "epochs_per_iteration": 1, "branches": 3},
        )
        rc = main(["local", "--config", cfg, "--init", "baseline"])
        assert rc == 0
        out = tmp_path / "run"
        structure = json.loads((out / "final_structure.json").read_text())
        assert structure["type"] == "genome"
        assert len(structure["dilations"]) == 1
        lines = (out / "local_trajectory.csv").read_text().strip().splitlines()
        assert lines[0] == "iteration,layer_index,dilations,alphas,new_dilation"
        assert len(lines) > 1

    def test_genome_string_init_and_parallel_flag(self, tmp_path):
        cfg = _task_config(
            tmp_path,
            local={"iterations": 1, "epochs_per_iteration": 1, "branches": 3},
        )
        rc = main(["local", "--config", cfg, "--init", "4", "--parallel"])
        assert rc == 0
        structure = json.loads((tmp_path / "run" / "final_structure.json").read_text())
        assert structure["type"] == "parallel"
        assert structure["extra_parameters"] == sum(
            len(l["dilations"]) for l in structure["layers"]
        )

    def test_pmf_flag_is_echoed_in_resolved_config(self, tmp_path):
        cfg = _task_config(
            tmp_path,
            local={"iterations": 1, "epochs_per_iteration": 1},
        )
        rc = main(["local", "--config", cfg, "--pmf", "softmax"])
        assert rc == 0
        resolved = json.loads((tmp_path / "run" / "resolved_config.json").read_text())
        assert resolved["local"]["pmf_kind"] == "softmax"

    def test_genome_length_mismatch_exits_2(self, tmp_path, capsys):
        cfg = _task_config(
            tmp_path,
            local={"iterations": 1, "epochs_per_iteration": 1},
        )
        rc = main(["local", "--config", cfg, "--init", "2,4"])
        assert rc == 2

    def test_global_then_local_pipeline(self, tmp_path):
        # two-stage pipeline: coarse genetic pass, then local refinement of its best
        cfg = _task_config(
            tmp_path,
            out_name="g",
            **{
                "global": {"iterations": 2, "population": 4, "epochs": 1, "k": 2, "T": 3},
                "local": {"iterations": 1, "epochs_per_iteration": 1},
            },
        )
        assert main(["global", "--config", cfg]) == 0
        best_path = tmp_path / "g" / "best.json"
        assert best_path.exists()
        cfg2 = _task_config(
            tmp_path,
            out_name="l",
            **{"local": {"iterations": 1, "epochs_per_iteration": 1}},
        )
        assert main(["local", "--config", cfg2, "--init", str(best_path)]) == 0
        assert (tmp_path / "l" / "final_structure.json").exists()


class TestTrainCommand:
    def test_train_reports_metrics(self, tmp_path):
        cfg = _task_config(tmp_path, local={"iterations": 1, "epochs_per_iteration": 1})
        rc = main(["train", "--config", cfg, "--init", "3", "--epochs", "3"])
        assert rc == 0
        doc = json.loads((tmp_path / "run" / "train_metrics.json").read_text())
        assert doc["epochs"] == 3
        assert "val_accuracy" in doc["metrics"]

    def test_train_parallel_structure_file(self, tmp_path):
        structure = {
            "type": "parallel",
            "layers": [{"dilations": [2, 3, 4], "alphas": [0.2, 0.5, 0.3]}],
        }
        spath = tmp_path / "structure.json"
        spath.write_text(json.dumps(structure))
        cfg = _task_config(tmp_path, local={"iterations": 1, "epochs_per_iteration": 1})
        rc = main(["train", "--config", cfg, "--init", str(spath), "--epochs", "2"])
        assert rc == 0
        doc = json.loads((tmp_path / "run" / "train_metrics.json").read_text())
        assert doc["structure"]["type"] == "parallel"


class TestOracleAndReport:
    def test_oracle_writes_trajectories_and_summary(self, tmp_path):
        cfg = _write(
            tmp_path / "o.json",
            {
                "master_seed": 5,
                "output_dir": str(tmp_path / "orun"),
                "oracle": {
                    "k": 2, "T": 3, "length": 3, "target": [1, 4, 2],
                    "seeds": 3,
                    "ga": {"population": 4, "iterations": 3, "p_m": 0.5, "p_s": 0.3},
                },
            },
        )
        rc = main(["oracle", "--config", cfg])
        assert rc == 0
        out = tmp_path / "orun"
        rows = (out / "trajectory.csv").read_text().strip().splitlines()
        assert rows[0] == "budget,running_best_fitness,seed,method"
        methods = {line.split(",")[-1] for line in rows[1:]}
        assert methods == {"ga", "random"}
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["methods"]) == {"ga", "random"}

    def test_report_aggregates_and_single_seed_std_is_zero(self, tmp_path, capsys):
        run = tmp_path / "r"
        run.mkdir()
        (run / "trajectory.csv").write_text(
            "budget,running_best_fitness,seed,method\n"
            "4,-3.0,0,ga\n8,-1.0,0,ga\n"
        )
        rc = main(["report", str(run)])
        assert rc == 0
        report = (run / "report.csv").read_text().strip().splitlines()
        assert report[0] == "method,budget,mean,std,n"
        for line in report[1:]:
            assert line.split(",")[3] == "0.0"

    def test_report_skips_malformed_rows_with_warning(self, tmp_path, capsys):
        run = tmp_path / "r"
        run.mkdir()
        (run / "trajectory.csv").write_text(
            "budget,running_best_fitness,seed,method\n"
            "4,-3.0,0,ga\nnot,a,row\n8,-1.0,0,ga\n"
        )
        rc = main(["report", str(run)])
        captured = capsys.readouterr()
        assert rc == 0
        assert "malformed" in captured.err

    def test_report_on_empty_dir_exits_2(self, tmp_path):
        run = tmp_path / "empty"
        run.mkdir()
        assert main(["report", str(run)]) == 2

    def test_report_over_oracle_run(self, tmp_path):
        cfg = _write(
            tmp_path / "o.json",
            {
                "master_seed": 2,
                "output_dir": str(tmp_path / "orun"),
                "oracle": {
                    "k": 2, "T": 3, "length": 3, "target": [4, 1, 2], "seeds": 2,
                    "ga": {"population": 4, "iterations": 3, "p_m": 0.5, "p_s": 0.3},
                },
            },
        )
        assert main(["oracle", "--config", cfg]) == 0
        assert main(["report", str(tmp_path / "orun")]) == 0
        report = (tmp_path / "orun" / "report.csv").read_text().splitlines()
        assert report[0] == "method,budget,mean,std,n"
        assert any(row.startswith("ga,") for row in report[1:])
        assert any(row.startswith("random,") for row in report[1:])

    def test_report_on_missing_dir_exits_2(self, tmp_path):
        assert main(["report", str(tmp_path / "ghost")]) == 2


class TestRuntimeFailureExitCode:
    def test_runtime_failure_exits_3(self, tmp_path, capsys):
        # config is well-formed but the task data file is absent at run time
        doc = {
            "master_seed": 0,
            "output_dir": str(tmp_path / "run"),
            "task": {
                "kind": "permuted_pixels",
                "train_size": 4, "val_size": 2,
                "images_path": str(tmp_path / "ghost-images.idx"),
                "labels_path": str(tmp_path / "ghost-labels.idx"),
            },
            "network": {"layers": [{"kernel_size": 2, "channels": 4}]},
            "global": {"iterations": 1, "population": 2, "epochs": 1, "k": 2, "T": 2},
        }
        path = _write(tmp_path / "cfg.json", doc)
        rc = main(["global", "--config", path])
        assert rc == 3
        assert "runtime failure" in capsys.readouterr().err


class TestJobsDeterminism:
    def test_jobs_do_not_change_results(self, tmp_path):
        cfg = _task_config(
            tmp_path,
            out_name="j1",
            **{"global": {"iterations": 2, "population": 4, "epochs": 1, "k": 2, "T": 3}},
        )
        assert main(["global", "--config", cfg, "--jobs", "1"]) == 0
        best1 = (tmp_path / "j1" / "best.json").read_bytes()
        traj1 = (tmp_path / "j1" / "trajectory.csv").read_bytes()
        cfg2 = _task_config(
            tmp_path,
            out_name="j2",
            **{"global": {"iterations": 2, "population": 4, "epochs": 1, "k": 2, "T": 3}},
        )
        assert main(["global", "--config", cfg2, "--jobs", "3"]) == 0
        assert (tmp_path / "j2" / "best.json").read_bytes() == best1
        assert (tmp_path / "j2" / "trajectory.csv").read_bytes() == traj1
