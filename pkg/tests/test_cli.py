import json

import pandas as pd
import pytest
from click.testing import CliRunner

from src.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, cli
from src.metadata import RunDirectory
from src.utils.file_utils import write_matrix


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


class TestRunCommands:
    def test_run_then_report(self, runner, config_file, tiny_config):
        result = invoke(runner, "run", "--config", config_file)
        assert result.exit_code == EXIT_OK, result.output
        assert "Z=" in result.output

        report = invoke(runner, "report", tiny_config.output.dir)
        assert report.exit_code == EXIT_OK, report.output
        assert "Threshold sweep" in report.output
        assert "Final round by cluster" in report.output

    def test_out_and_seed_overrides(self, runner, config_file, tmp_path):
        out = tmp_path / "other"
        result = invoke(runner, "baseline", "--config", config_file, "--out", out, "--seed", 9, "--workers", 2)
        assert result.exit_code == EXIT_OK, result.output
        snapshot = json.loads((out / RunDirectory.CONFIG).read_text())
        assert snapshot["seed"] == 9
        assert snapshot["workers"] == 2

    def test_partition(self, runner, config_file, tmp_path):
        result = invoke(runner, "partition", "--config", config_file, "--out", tmp_path / "p")
        assert result.exit_code == EXIT_OK, result.output
        assert (tmp_path / "p" / "federation" / "client_0000.csv").exists()

    def test_similarity(self, runner, config_file, tmp_path):
        result = invoke(runner, "similarity", "--config", config_file, "--out", tmp_path / "s")
        assert result.exit_code == EXIT_OK, result.output
        assert (tmp_path / "s" / RunDirectory.PROXIMITY).exists()


class TestClusterCommand:
    def test_two_blocks(self, runner, tmp_path, two_block_matrix):
        matrix = write_matrix(tmp_path / "a.csv", two_block_matrix)
        result = invoke(runner, "cluster", matrix, "--out", tmp_path / "c")
        assert result.exit_code == EXIT_OK, result.output
        assert "Z=2" in result.output
        sweep = pd.read_csv(tmp_path / "c" / RunDirectory.SWEEP)
        assert len(sweep) == 20
        assert sweep["selected"].sum() == 1
        clustering = pd.read_csv(tmp_path / "c" / RunDirectory.CLUSTERING)
        assert clustering["cluster_id"].tolist() == [0, 0, 0, 0, 1, 1, 1, 1]

    def test_empty_file(self, runner, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        result = invoke(runner, "cluster", empty, "--out", tmp_path / "c")
        assert result.exit_code == EXIT_USAGE

    def test_missing_file(self, runner, tmp_path):
        result = invoke(runner, "cluster", tmp_path / "nope.csv", "--out", tmp_path / "c")
        assert result.exit_code == EXIT_USAGE
        assert "nope.csv" in result.output

    def test_non_square(self, runner, tmp_path):
        matrix = tmp_path / "a.csv"
        matrix.write_text("0,1,2\n1,0,3\n")
        result = invoke(runner, "cluster", matrix, "--out", tmp_path / "c")
        assert result.exit_code == EXIT_USAGE


class TestErrors:
    def test_missing_config(self, runner, tmp_path):
        result = invoke(runner, "run", "--config", tmp_path / "missing.json")
        assert result.exit_code == EXIT_USAGE
        assert "missing.json" in result.output

    def test_invalid_config(self, runner, tmp_path, tiny_config_data):
        tiny_config_data["training"]["rounds"] = -2
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(tiny_config_data))
        result = invoke(runner, "run", "--config", path)
        assert result.exit_code == EXIT_USAGE
        assert "training.rounds" in result.output

    def test_report_outside_run_directory(self, runner, tmp_path):
        result = invoke(runner, "report", tmp_path)
        assert result.exit_code == EXIT_USAGE

    def test_runtime_error(self, runner, tmp_path, tiny_config_data, monkeypatch):
        def boom(self, kind="clustered"):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr("src.pipeline.ExperimentPipeline.run", boom)
        path = tmp_path / "ok.json"
        path.write_text(json.dumps(tiny_config_data))
        result = invoke(runner, "run", "--config", path)
        assert result.exit_code == EXIT_RUNTIME
        assert "disk on fire" in result.output

    def test_usage_error(self, runner):
        assert invoke(runner, "frobnicate").exit_code == EXIT_USAGE
        assert invoke(runner, "run", "--workers", 0).exit_code == EXIT_USAGE
