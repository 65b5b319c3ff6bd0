"""Shared fixtures: small federations, configs and proximity matrices"""

import json
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

from src.config.schema import RunConfig
from src.data.datamodel import ClientDataset
from src.data.partitioner import gen_synthetic_clusters


def tiny_config_dict(out_dir: Path, **sections: Dict[str, Any]) -> Dict[str, Any]:
    """A config small enough to train in about a second"""
    data: Dict[str, Any] = {
        "seed": 3,
        "workers": 1,
        "federation": {
            "source": "synthetic",
            "clusters": 2,
            "clients_per_cluster": 3,
            "num_classes": 4,
            "n_features": 6,
            "n_per_client": 30,
            "n_test_per_client": 20,
            "classes_per_cluster": 2,
            "separation": 4.0,
        },
        "arch": {"hidden": [8], "feature_dim": 4},
        "similarity": {
            "warmup_rounds": 2,
            "warmup_steps": 2,
            "batch_size": 10,
            "p_fraction": 0.2,
            "sparsity": 0.2,
            "shared_mask": True,
            "fusion_iters": 50,
        },
        "training": {
            "rounds": 3,
            "sampling_rate": 0.5,
            "local_steps": 2,
            "batch_size": 10,
            "lr": 0.05,
        },
        "output": {"dir": str(out_dir)},
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return data


@pytest.fixture
def tiny_config_data(tmp_path) -> Dict[str, Any]:
    return tiny_config_dict(tmp_path / "run")


@pytest.fixture
def tiny_config(tiny_config_data) -> RunConfig:
    return RunConfig(**tiny_config_data)


@pytest.fixture
def config_file(tmp_path, tiny_config_data) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(tiny_config_data), encoding="utf-8")
    return path


@pytest.fixture
def tiny_federation(tiny_config):
    fc = tiny_config.federation
    return gen_synthetic_clusters(
        fc.clusters,
        fc.clients_per_cluster,
        fc.num_classes,
        fc.n_features,
        fc.n_per_client,
        fc.separation,
        tiny_config.seed,
        classes_per_cluster=fc.classes_per_cluster,
        n_test_per_client=fc.n_test_per_client,
    )


@pytest.fixture
def two_block_matrix() -> np.ndarray:
    """Eight clients in two blocks of four: 0.1 inside a block, 0.9 across"""
    a = np.full((8, 8), 0.9)
    a[:4, :4] = 0.1
    a[4:, 4:] = 0.1
    np.fill_diagonal(a, 0.0)
    return a


@pytest.fixture
def small_dataset() -> ClientDataset:
    rng = np.random.default_rng(0)
    features = rng.normal(size=(12, 3))
    labels = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2, 0, 1, 2])
    return ClientDataset(0, features, labels, 4)
