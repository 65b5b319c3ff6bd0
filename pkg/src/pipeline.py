"""
Experiment pipeline

Binds a validated RunConfig to the stages of a run: build the federation,
warm up and cluster, train, evaluate and write the run directory. Each
stage is also callable on its own for the standalone CLI subcommands.
"""

import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .clustering.hierarchy import SweepResult, run_sweep
from .config.schema import ClusteringConfig, RunConfig
from .data.partitioner import (
    Federation,
    gen_synthetic_clusters,
    partition_label_skew_quantity,
    partition_lda,
    with_holdout,
)
from .data.storage import load_csv_dataset, load_federation, save_federation
from .errors import DataFormatError, InvalidArgumentError
from .federation.fedavg import fedavg_config, fedavg_state
from .federation.state import RunState, proximity_from
from .federation.trainer import FederatedTrainer
from .metadata import RunDirectory
from .similarity.proximity import ProximityMatrix
from .types import RunSummary
from .utils.file_utils import read_matrix

RUN_KINDS = ("clustered", "baseline")


def build_federation(cfg: RunConfig) -> Federation:
    """
    Federation described by the config's federation section.

    Raises:
        DataFormatError: If a referenced dataset or directory cannot be read
    """
    fc = cfg.federation
    if fc.source == "synthetic":
        return gen_synthetic_clusters(
            fc.clusters,
            fc.clients_per_cluster,
            fc.num_classes,
            fc.n_features,
            fc.n_per_client,
            fc.separation,
            cfg.seed,
            classes_per_cluster=fc.classes_per_cluster,
            concepts=fc.concepts,
            n_test_per_client=fc.n_test_per_client,
            noise=fc.noise,
        )
    if fc.source == "directory":
        return load_federation(fc.path)

    src = load_csv_dataset(fc.path)
    if fc.source == "label_skew":
        fed = partition_label_skew_quantity(src, fc.n_clients, fc.rho, fc.alpha_q, cfg.seed)
    else:
        fed = partition_lda(src, fc.n_clients, fc.alpha_q, cfg.seed)
    if fc.test_fraction > 0:
        fed = with_holdout(fed, fc.test_fraction, cfg.seed)
    return fed


def cluster_matrix(path: Union[str, Path], clus: ClusteringConfig, workers: int = 1) -> SweepResult:
    """
    Threshold sweep over a proximity matrix stored as a header-less CSV.

    Raises:
        DataFormatError: If the file is empty, not numeric or not a valid proximity matrix
    """
    A = read_matrix(path)
    try:
        return run_sweep(
            A,
            clus.alpha_grid,
            clus.gamma,
            clus.tau,
            clus.lam,
            clus.linkage,
            clus.rel_tol,
            clus.min_plateau,
            workers,
        )
    except InvalidArgumentError as e:
        raise DataFormatError(f"{path}: {e}") from e


class ExperimentPipeline:
    """Runs one configuration end to end and writes its run directory"""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.run_dir = RunDirectory(cfg.output.dir)
        self.logger = logging.getLogger("ExperimentPipeline")

    def validate_inputs(self, kind: str) -> None:
        if kind not in RUN_KINDS:
            raise InvalidArgumentError(f"Unknown run kind: {kind}")
        fc = self.cfg.federation
        if fc.source != "synthetic" and not Path(fc.path).exists():
            raise DataFormatError(f"Federation source not found: {fc.path}")

    def run(self, kind: str = "clustered") -> RunSummary:
        """
        Execute the pipeline.

        Args:
            kind: "clustered" for clustered training, "baseline" for the FedAvg reference

        Returns:
            Run summary, also stored in the manifest
        """
        self.validate_inputs(kind)
        started = time.perf_counter()
        self.logger.info(f"Starting {kind} run into {self.run_dir.root}")

        fed = build_federation(self.cfg)
        self.run_dir.write_config(self.cfg)
        self.run_dir.begin_training()
        self.run_dir.update_stage("partition", n_clients=fed.N, num_classes=fed.num_classes)

        state = self._train_clustered(fed) if kind == "clustered" else self._train_baseline(fed)
        self.run_dir.write_state(state)

        summary = self.summarize(kind, state)
        self.validate_outputs(summary)
        self.run_dir.update_stage("train", elapsed_s=round(time.perf_counter() - started, 3))
        self.run_dir.update_summary(dict(summary))
        return summary

    def _train_clustered(self, fed: Federation) -> RunState:
        trainer = FederatedTrainer(self.cfg, fed, on_round=self.run_dir.record_round)
        state = trainer.prepare()
        self.run_dir.update_stage(
            "cluster",
            num_clusters=state.clustering.Z,
            alpha_star=state.alpha_star,
            notes=list(state.sweep.notes) if state.sweep is not None else [],
        )
        return trainer.run_rounds(state)

    def _train_baseline(self, fed: Federation) -> RunState:
        ref_cfg = fedavg_config(self.cfg)
        trainer = FederatedTrainer(ref_cfg, fed, on_round=self.run_dir.record_round)
        return trainer.run_rounds(fedavg_state(fed, ref_cfg))

    def summarize(self, kind: str, state: RunState) -> RunSummary:
        evaluated = [m for m in state.history if m.accuracy]
        final = evaluated[-1].mean_accuracy if evaluated else float("nan")
        warnings: List[str] = list(state.ccgraph.warnings)
        if state.sweep is not None:
            warnings.extend(state.sweep.notes)
        return RunSummary(
            kind=kind,
            seed=self.cfg.seed,
            n_clients=state.N,
            num_clusters=state.clustering.Z,
            alpha_star=state.alpha_star,
            rounds=len(state.history),
            final_mean_accuracy=final,
            bytes_up=state.ledger.total_up,
            bytes_down=state.ledger.total_down,
            warnings=warnings,
        )

    def validate_outputs(self, summary: RunSummary) -> None:
        if summary["rounds"] and np.isnan(summary["final_mean_accuracy"]):
            self.logger.warning("No client could be evaluated")

    # ==========================================
    # Standalone stages
    # ==========================================

    def partition(self) -> Path:
        """Build the federation and save it as a directory of client CSVs"""
        fed = build_federation(self.cfg)
        target = save_federation(fed, self.run_dir.path("federation"))
        self.run_dir.write_config(self.cfg)
        self.run_dir.update_stage("partition", n_clients=fed.N, num_classes=fed.num_classes)
        return target

    def similarity(self) -> ProximityMatrix:
        """Warm-up, signatures and the fused proximity matrix, without clustering"""
        fed = build_federation(self.cfg)
        trainer = FederatedTrainer(self.cfg, fed)
        signatures, _, traffic = trainer.run_warmup_phase()
        proximity = proximity_from(signatures, fed.num_classes, self.cfg)
        self.run_dir.write_config(self.cfg)
        self.run_dir.write_proximity(proximity)
        if self.cfg.output.save_signatures:
            self.run_dir.write_signatures(signatures)
        self.run_dir.update_stage(
            "similarity",
            n_clients=fed.N,
            mean_weight=float(np.mean(proximity.w)),
            signature_bytes=int(sum(up for up, _ in traffic.values())),
        )
        return proximity

    def cluster(self, proximity_path: Optional[Union[str, Path]] = None) -> SweepResult:
        """Sweep the threshold over a stored proximity matrix and write the assignment"""
        source = Path(proximity_path) if proximity_path else self.run_dir.path(RunDirectory.PROXIMITY)
        sweep = cluster_matrix(source, self.cfg.clustering, self.cfg.workers)
        self.run_dir.write_sweep(sweep)
        self.run_dir.write_clustering(sweep.selected.clustering)
        self.run_dir.update_stage(
            "cluster", num_clusters=sweep.selected.Z, alpha_star=sweep.alpha_star, notes=list(sweep.notes)
        )
        return sweep


def run_experiment(cfg: RunConfig, kind: str = "clustered") -> Dict[str, Any]:
    return dict(ExperimentPipeline(cfg).run(kind))
