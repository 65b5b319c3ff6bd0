#!/usr/bin/env python3
"""
Run directory management

This module owns everything a run writes under its output directory: the
config snapshot, the manifest, per-round metrics and the clustering
artifacts. The manifest is replaced atomically and the previous copy is
kept as a backup.
"""

import json
import logging
import os
import shutil
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from .clustering.ccgraph import CCGraph
from .clustering.hierarchy import Clustering, SweepResult
from .config.manager import ConfigManager
from .config.schema import RunConfig
from .errors import DataFormatError
from .federation.state import ClusterState, RoundMetrics, RunState
from .model.dual_encoder import ArchSpec, save_checkpoint
from .similarity.proximity import ProximityMatrix
from .similarity.signatures import ClientSignature
from .utils.file_utils import append_table, atomic_write_text, read_table, write_matrix, write_table

logger = logging.getLogger("RunDirectory")

METRICS_COLUMNS = (
    "round",
    "client_id",
    "cluster_id",
    "sampled",
    "balanced_accuracy",
    "cluster_train_loss",
    "bytes_up",
    "bytes_down",
    "phases",
)
SWEEP_COLUMNS = ("alpha", "Z", "L1", "L2", "L", "plateau", "selected")
EVENT_COLUMNS = ("kind", "round", "client_id", "old_cluster", "new_cluster", "note")

MANIFEST_VERSION = "1.0"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


class RunDirectory:
    """Reads and writes one run's output directory"""

    CONFIG = "config.json"
    MANIFEST = "manifest.json"
    METRICS = "metrics.csv"
    SWEEP = "sweep.csv"
    CLUSTERING = "clustering.csv"
    CCGRAPH = "ccgraph.csv"
    PROXIMITY = "proximity.csv"
    PROXIMITY_G = "proximity_G.csv"
    PROXIMITY_V = "proximity_V.csv"
    WEIGHTS = "weights.csv"
    EVENTS = "events.csv"
    COMMUNICATION = "communication.csv"

    def __init__(self, root: Union[str, Path]):
        """
        Args:
            root: Run directory; created on first write
        """
        self.root = Path(root)
        self.manifest = self._load_or_create()

    def path(self, name: str) -> Path:
        return self.root / name

    def _load_or_create(self) -> Dict[str, Any]:
        manifest_path = self.path(self.MANIFEST)
        if manifest_path.exists():
            try:
                with open(manifest_path, "r", encoding="utf-8") as f:
                    manifest = json.load(f)
                manifest.setdefault("version", MANIFEST_VERSION)
                manifest.setdefault("stages", {})
                return manifest
            except (json.JSONDecodeError, IOError) as e:
                logger.warning(f"Manifest unreadable ({e}), starting a new one: {manifest_path}")
        return {"version": MANIFEST_VERSION, "updated_at": _now(), "stages": {}}

    # ==========================================
    # Manifest
    # ==========================================

    def save_manifest(self) -> Path:
        """Write the manifest atomically, keeping the previous copy as .bak"""
        manifest_path = self.path(self.MANIFEST)
        if manifest_path.exists():
            try:
                shutil.copyfile(manifest_path, f"{manifest_path}.bak")
            except IOError:
                logger.warning("Could not back up the manifest")
        self.manifest["updated_at"] = _now()
        atomic_write_text(manifest_path, json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        return manifest_path

    def update_stage(self, stage: str, **status: Any) -> None:
        """Record a stage's outcome in the manifest and save it"""
        entry = self.manifest["stages"].setdefault(stage, {})
        entry.update(status)
        entry.setdefault("finished_at", _now())
        self.save_manifest()

    def update_summary(self, summary: Dict[str, Any]) -> None:
        self.manifest["summary"] = summary
        self.save_manifest()

    # ==========================================
    # Config snapshot
    # ==========================================

    def write_config(self, cfg: RunConfig) -> Path:
        return ConfigManager.save_snapshot(cfg, self.path(self.CONFIG))

    def load_config(self) -> RunConfig:
        """The snapshot alone reproduces the run"""
        return ConfigManager(self.path(self.CONFIG), env_file=None).load_validated_config()

    # ==========================================
    # Per-round metrics
    # ==========================================

    def begin_training(self) -> None:
        """Drop metrics and events left by an earlier run in the same directory"""
        for name in (self.METRICS, self.EVENTS):
            target = self.path(name)
            if target.exists():
                os.remove(target)

    def record_round(self, state: RunState, metrics: RoundMetrics) -> None:
        """Round hook: append one row per client"""
        append_table(self.path(self.METRICS), metrics.rows(state.clustering.assignment), METRICS_COLUMNS)

    # ==========================================
    # Clustering artifacts
    # ==========================================

    def write_sweep(self, sweep: SweepResult) -> Path:
        rows = []
        for candidate in sweep.candidates:
            row = candidate.to_row()
            row["selected"] = int(candidate is sweep.selected)
            rows.append(row)
        return write_table(self.path(self.SWEEP), rows, SWEEP_COLUMNS)

    def write_clustering(self, clustering: Clustering) -> Path:
        rows = [{"client_id": i, "cluster_id": int(z)} for i, z in enumerate(clustering.assignment)]
        return write_table(self.path(self.CLUSTERING), rows, ("client_id", "cluster_id"))

    def write_ccgraph(self, graph: CCGraph) -> Path:
        return write_table(self.path(self.CCGRAPH), graph.edge_rows(), ("learner", "source", "score"))

    def write_proximity(self, proximity: ProximityMatrix) -> None:
        write_matrix(self.path(self.PROXIMITY), proximity.A)
        write_matrix(self.path(self.PROXIMITY_G), proximity.Ghat)
        write_matrix(self.path(self.PROXIMITY_V), proximity.Vhat)
        rows = [{"client_id": i, "w": float(w)} for i, w in enumerate(proximity.w)]
        write_table(self.path(self.WEIGHTS), rows, ("client_id", "w"))

    def write_events(self, events: Sequence[Any]) -> Path:
        return write_table(self.path(self.EVENTS), [e.to_dict() for e in events], EVENT_COLUMNS)

    def write_communication(self, rows: List[Dict[str, int]]) -> Path:
        return write_table(self.path(self.COMMUNICATION), rows, ("round", "client_id", "bytes_up", "bytes_down"))

    def write_checkpoints(self, arch: ArchSpec, states: Sequence[ClusterState]) -> List[Path]:
        return [
            save_checkpoint(self.path(f"checkpoints/cluster_{s.cluster_id}.ckpt"), arch, s.model)
            for s in states
        ]

    def write_signatures(self, signatures: Sequence[ClientSignature]) -> List[Path]:
        written = []
        for sig in signatures:
            target = self.path(f"signatures/client_{sig.client_id:04d}.json")
            atomic_write_text(target, json.dumps(sig.to_dict(), sort_keys=True) + "\n")
            written.append(target)
        return written

    def write_state(self, state: RunState) -> None:
        """Everything a finished run leaves behind except metrics, which stream in per round"""
        out = state.cfg.output
        if state.proximity is not None:
            self.write_proximity(state.proximity)
        if state.sweep is not None:
            self.write_sweep(state.sweep)
        self.write_clustering(state.clustering)
        self.write_ccgraph(state.ccgraph)
        self.write_events(state.events)
        self.write_communication(state.ledger.rows())
        if out.save_checkpoints:
            self.write_checkpoints(state.arch, state.states)
        if out.save_signatures and state.signatures:
            self.write_signatures(state.signatures)

    # ==========================================
    # Reading back
    # ==========================================

    def read_metrics(self) -> pd.DataFrame:
        return read_table(self.path(self.METRICS))

    def read_sweep(self) -> Optional[pd.DataFrame]:
        if not self.path(self.SWEEP).exists():
            return None
        return read_table(self.path(self.SWEEP))

    def require_manifest(self) -> Dict[str, Any]:
        if not self.path(self.MANIFEST).exists():
            raise DataFormatError(f"Not a run directory (no {self.MANIFEST}): {self.root}")
        return self.manifest
