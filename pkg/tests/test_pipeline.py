import json

import numpy as np
import pandas as pd
import pytest

from src.config.schema import RunConfig
from src.data.storage import MANIFEST_NAME, load_federation
from src.errors import DataFormatError, InvalidArgumentError
from src.metadata import METRICS_COLUMNS, SWEEP_COLUMNS, RunDirectory
from src.model import load_checkpoint
from src.pipeline import ExperimentPipeline, build_federation, cluster_matrix, run_experiment
from src.utils.file_utils import write_matrix

from .conftest import tiny_config_dict


@pytest.fixture
def finished_run(tiny_config):
    summary = ExperimentPipeline(tiny_config).run("clustered")
    return RunDirectory(tiny_config.output.dir), summary


class TestBuildFederation:
    def test_synthetic(self, tiny_config):
        fed = build_federation(tiny_config)
        assert fed.N == 6
        assert fed.ground_truth.tolist() == [0, 0, 0, 1, 1, 1]

    def test_label_skew_from_csv(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = np.column_stack([rng.normal(size=(80, 3)), np.repeat(np.arange(4), 20)])
        pd.DataFrame(rows).to_csv(tmp_path / "src.csv", header=False, index=False)
        cfg = RunConfig(
            **tiny_config_dict(
                tmp_path / "run",
                federation={"source": "label_skew", "path": str(tmp_path / "src.csv"), "n_clients": 4, "rho": 0.5},
            )
        )
        fed = build_federation(cfg)
        assert fed.N == 4
        assert sum(d.n_samples + t.n_samples for d, t in zip(fed.clients, fed.test_clients)) == 80

    def test_saved_directory(self, tiny_config):
        target = ExperimentPipeline(tiny_config).partition()
        cfg = tiny_config.model_copy(
            update={"federation": tiny_config.federation.model_copy(update={"source": "directory", "path": str(target)})}
        )
        fed = build_federation(cfg)
        assert fed.N == 6
        assert (target / MANIFEST_NAME).exists()
        assert load_federation(target).num_classes == 4


class TestRun:
    def test_writes_run_directory(self, finished_run):
        run_dir, _ = finished_run
        for name in (
            RunDirectory.CONFIG,
            RunDirectory.MANIFEST,
            RunDirectory.METRICS,
            RunDirectory.SWEEP,
            RunDirectory.CLUSTERING,
            RunDirectory.CCGRAPH,
            RunDirectory.PROXIMITY,
            RunDirectory.PROXIMITY_G,
            RunDirectory.PROXIMITY_V,
            RunDirectory.WEIGHTS,
            RunDirectory.EVENTS,
            RunDirectory.COMMUNICATION,
        ):
            assert run_dir.path(name).exists(), name
        assert sorted(p.name for p in run_dir.path("signatures").iterdir())[0] == "client_0000.json"

    def test_metrics(self, finished_run):
        run_dir, _ = finished_run
        metrics = run_dir.read_metrics()
        assert list(metrics.columns) == list(METRICS_COLUMNS)
        assert len(metrics) == 3 * 6
        assert metrics.groupby("round")["sampled"].sum().tolist() == [3, 3, 3]

    def test_sweep_marks_selection(self, finished_run):
        run_dir, summary = finished_run
        sweep = run_dir.read_sweep()
        assert list(sweep.columns) == list(SWEEP_COLUMNS)
        assert len(sweep) == 20
        selected = sweep[sweep["selected"] == 1]
        assert len(selected) == 1
        assert selected["alpha"].iloc[0] == pytest.approx(summary["alpha_star"])
        assert selected["Z"].iloc[0] == summary["num_clusters"]

    def test_manifest(self, finished_run):
        run_dir, summary = finished_run
        manifest = json.loads(run_dir.path(RunDirectory.MANIFEST).read_text())
        assert set(manifest["stages"]) == {"partition", "cluster", "train"}
        assert manifest["summary"]["rounds"] == 3
        assert manifest["summary"]["kind"] == "clustered"
        assert summary["n_clients"] == 6
        assert 0.0 <= summary["final_mean_accuracy"] <= 1.0

    def test_checkpoints(self, finished_run):
        run_dir, summary = finished_run
        paths = sorted(run_dir.path("checkpoints").iterdir())
        assert len(paths) == summary["num_clusters"]
        arch, params = load_checkpoint(paths[0])
        assert arch.dual
        assert params.enc2.size == arch.encoder_size

    def test_communication_includes_warmup(self, finished_run):
        run_dir, summary = finished_run
        table = pd.read_csv(run_dir.path(RunDirectory.COMMUNICATION))
        assert (table["round"] == -1).sum() == 6
        assert table["bytes_up"].sum() == summary["bytes_up"]

    def test_snapshot_reproduces_config(self, finished_run, tiny_config):
        run_dir, _ = finished_run
        assert run_dir.load_config() == tiny_config

    def test_rerun_is_byte_identical(self, finished_run, tiny_config):
        run_dir, _ = finished_run
        before = {
            name: run_dir.path(name).read_bytes()
            for name in (RunDirectory.METRICS, RunDirectory.PROXIMITY, RunDirectory.SWEEP, RunDirectory.CLUSTERING)
        }
        ExperimentPipeline(tiny_config).run("clustered")
        for name, content in before.items():
            assert run_dir.path(name).read_bytes() == content, name
        assert run_dir.path(RunDirectory.MANIFEST + ".bak").exists()

    def test_baseline(self, tiny_config):
        summary = run_experiment(tiny_config, "baseline")
        run_dir = RunDirectory(tiny_config.output.dir)
        assert summary["num_clusters"] == 1
        assert summary["alpha_star"] is None
        assert run_dir.read_sweep() is None
        assert len(run_dir.read_metrics()) == 3 * 6

    def test_unknown_kind(self, tiny_config):
        with pytest.raises(InvalidArgumentError):
            ExperimentPipeline(tiny_config).run("fedprox")

    def test_missing_source(self, tmp_path):
        cfg = RunConfig(
            **tiny_config_dict(tmp_path / "run", federation={"source": "lda", "path": str(tmp_path / "none.csv")})
        )
        with pytest.raises(DataFormatError):
            ExperimentPipeline(cfg).run()


class TestStages:
    def test_similarity_then_cluster(self, tiny_config):
        pipeline = ExperimentPipeline(tiny_config)
        proximity = pipeline.similarity()
        assert proximity.A.shape == (6, 6)
        assert np.allclose(proximity.A, proximity.A.T)
        sweep = pipeline.cluster()
        clustering = pd.read_csv(pipeline.run_dir.path(RunDirectory.CLUSTERING))
        assert clustering["cluster_id"].tolist() == sweep.selected.clustering.assignment.tolist()
        assert set(pipeline.run_dir.manifest["stages"]) == {"similarity", "cluster"}

    def test_cluster_matrix(self, tmp_path, two_block_matrix, tiny_config):
        path = write_matrix(tmp_path / "a.csv", two_block_matrix)
        assert cluster_matrix(path, tiny_config.clustering).selected.Z == 2

    def test_cluster_matrix_rejects_non_square(self, tmp_path, tiny_config):
        path = write_matrix(tmp_path / "a.csv", np.zeros((2, 3)))
        with pytest.raises(DataFormatError):
            cluster_matrix(path, tiny_config.clustering)


class TestRunDirectory:
    def test_manifest_backup(self, tmp_path):
        run_dir = RunDirectory(tmp_path / "r")
        run_dir.update_stage("partition", n_clients=3)
        assert not run_dir.path(RunDirectory.MANIFEST + ".bak").exists()
        run_dir.update_stage("cluster", num_clusters=2)
        backup = json.loads(run_dir.path(RunDirectory.MANIFEST + ".bak").read_text())
        assert set(backup["stages"]) == {"partition"}
        assert set(RunDirectory(tmp_path / "r").manifest["stages"]) == {"partition", "cluster"}

    def test_unreadable_manifest_starts_fresh(self, tmp_path, caplog):
        (tmp_path / RunDirectory.MANIFEST).write_text("{broken")
        with caplog.at_level("WARNING", logger="RunDirectory"):
            run_dir = RunDirectory(tmp_path)
        assert run_dir.manifest["stages"] == {}
        assert "Manifest unreadable" in caplog.text

    def test_require_manifest(self, tmp_path):
        with pytest.raises(DataFormatError):
            RunDirectory(tmp_path / "empty").require_manifest()

    def test_empty_events_table(self, tmp_path):
        run_dir = RunDirectory(tmp_path)
        path = run_dir.write_events([])
        assert path.read_text().strip() == "kind,round,client_id,old_cluster,new_cluster,note"
