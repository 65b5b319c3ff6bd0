"""
Dataset and federation persistence.

Datasets are header-less CSV files with F feature columns followed by one
integer label column. A saved federation is a directory of per-client CSV
files plus a JSON manifest.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from fs import open_fs

from ..errors import DataFormatError
from ..utils.file_utils import FLOAT_FORMAT, atomic_write_text, ensure_parent
from .datamodel import ClientDataset
from .partitioner import Federation

logger = logging.getLogger("FederationStore")

MANIFEST_NAME = "manifest.json"
PathLike = Union[str, Path]


def load_csv_dataset(path: PathLike, num_classes: Optional[int] = None, client_id: int = 0) -> ClientDataset:
    """
    Load a header-less CSV dataset.

    Args:
        path: CSV file; last column holds integer labels
        num_classes: Class count; inferred as max label + 1 when omitted
        client_id: Id given to the loaded dataset

    Raises:
        DataFormatError: On missing files, non-numeric cells, fractional or out-of-range labels
    """
    source = Path(path)
    if not source.exists():
        raise DataFormatError(f"Dataset not found: {source}")
    try:
        frame = pd.read_csv(source, header=None)
    except pd.errors.EmptyDataError as e:
        raise DataFormatError(f"Dataset is empty: {source}") from e
    if frame.shape[1] < 2:
        raise DataFormatError(f"{source}: need at least one feature column and a label column")
    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as e:
        raise DataFormatError(f"{source}: non-numeric values") from e
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{source}: non-finite values")

    raw_labels = values[:, -1]
    if not np.all(np.equal(np.mod(raw_labels, 1), 0)):
        raise DataFormatError(f"{source}: labels must be integers")
    labels = raw_labels.astype(np.int64)
    classes = int(labels.max()) + 1 if num_classes is None else num_classes
    if labels.min() < 0 or labels.max() >= classes:
        raise DataFormatError(f"{source}: labels must lie in [0, {classes}), got [{labels.min()}, {labels.max()}]")
    return ClientDataset(client_id, values[:, :-1], labels, classes)


def write_csv_dataset(path: PathLike, d: ClientDataset) -> Path:
    """Write a dataset in the loader's format"""
    target = ensure_parent(path)
    frame = pd.DataFrame(d.features)
    frame[d.n_features] = d.labels
    atomic_write_text(target, frame.to_csv(index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n"))
    return target


def _client_file(i: int, split: str) -> str:
    return f"client_{i:04d}.csv" if split == "train" else f"client_{i:04d}_{split}.csv"


def save_federation(fed: Federation, directory: PathLike) -> Path:
    """
    Write every client (and test split) plus manifest.json.

    Features are written with six significant digits.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    files: List[Dict[str, Any]] = []
    for i, d in enumerate(fed.clients):
        entry: Dict[str, Any] = {"client_id": d.client_id, "train": _client_file(i, "train")}
        write_csv_dataset(root / entry["train"], d)
        test = fed.test_set(i)
        if test is not None:
            entry["test"] = _client_file(i, "test")
            write_csv_dataset(root / entry["test"], test)
        files.append(entry)

    manifest = {
        "num_classes": fed.num_classes,
        "n_features": fed.n_features,
        "N": fed.N,
        "ground_truth": None if fed.ground_truth is None else [int(z) for z in fed.ground_truth],
        "concepts": fed.concepts,
        "params": fed.params,
        "clients": files,
    }
    atomic_write_text(root / MANIFEST_NAME, json.dumps(manifest, indent=2, ensure_ascii=False))
    logger.info(f"Saved federation of {fed.N} clients to {root}")
    return root


def list_client_files(directory: PathLike) -> List[str]:
    """Client CSV files present in a federation directory"""
    with open_fs(f"osfs://{Path(directory).resolve()}") as store:
        return sorted(path.lstrip("/") for path in store.walk.files(filter=["client_*.csv"], max_depth=1))


def load_federation(directory: PathLike) -> Federation:
    """
    Read a directory written by save_federation.

    Raises:
        DataFormatError: If the manifest or a listed client file is missing or malformed
    """
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataFormatError(f"No {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"Malformed manifest {manifest_path}: {e}") from e

    present = set(list_client_files(root))
    num_classes = int(manifest["num_classes"])
    clients: List[ClientDataset] = []
    tests: List[Optional[ClientDataset]] = []
    for entry in manifest["clients"]:
        for split in ("train", "test"):
            name = entry.get(split)
            if name is not None and name not in present:
                raise DataFormatError(f"Client file listed in the manifest is missing: {name}")
        clients.append(load_csv_dataset(root / entry["train"], num_classes, int(entry["client_id"])))
        tests.append(
            load_csv_dataset(root / entry["test"], num_classes, int(entry["client_id"])) if "test" in entry else None
        )

    return Federation(
        clients,
        num_classes,
        ground_truth=None if manifest.get("ground_truth") is None else np.asarray(manifest["ground_truth"]),
        test_clients=tests if any(t is not None for t in tests) else None,
        concepts=manifest.get("concepts"),
        params=manifest.get("params", {}),
    )
