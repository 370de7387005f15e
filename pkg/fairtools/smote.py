"""Synthetic pseudo-instances for one (protected value, label value) cell.

Each synthetic row interpolates the numeric features between a base row of the
cell and one of its k nearest in-cell neighbors; categorical features, the
protected value and the label are copied from the base row. Synthetic rows get
fresh row_ids above every existing id and are flagged in ``Dataset.synthetic``.
"""

from __future__ import annotations

import logging
from typing import Tuple

import numpy as np
import pandas as pd

from .data_model import Dataset
from .errors import CellTooSmall, DegenerateFeature, InvalidConfig
from .metrics import FeatureSpace, knn_indices

logger = logging.getLogger(__name__)

DEFAULT_K = 5

TargetCell = Tuple[str, str]


def cell_row_ids(data: Dataset, target_cell: TargetCell) -> np.ndarray:
    z_value, y_value = target_cell
    frame = data.frame
    mask = (frame[data.schema.protected] == str(z_value)) & (frame[data.schema.label] == str(y_value))
    return np.sort(frame.index[mask].to_numpy())


def balance_count(data: Dataset, target_cell: TargetCell, reference_cell: TargetCell) -> int:
    """Rows to add to ``target_cell`` so it matches ``reference_cell`` in size."""
    return max(0, len(cell_row_ids(data, reference_cell)) - len(cell_row_ids(data, target_cell)))


def _in_cell_neighbors(data: Dataset, cell: pd.DataFrame, k: int) -> np.ndarray:
    try:
        space = FeatureSpace.fit(data)
    except DegenerateFeature:
        # every point is equally near; fall back to row_id order
        n = len(cell)
        return np.array([[j for j in range(n) if j != i][:k] for i in range(n)], dtype=np.int64)
    num, cat = space.encode_frame(cell)
    return knn_indices(num, cat, k)


def smote_augment(data: Dataset, target_cell: TargetCell, count: int, k: int = DEFAULT_K,
                  seed: int = 0) -> Dataset:
    numeric = data.schema.numeric_features
    if not numeric:
        raise InvalidConfig("SMOTE interpolates numeric features; the schema has none")
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    if count < 0:
        raise InvalidConfig("count must be >= 0")

    ids = cell_row_ids(data, target_cell)
    if len(ids) < 2:
        raise CellTooSmall(f"cell {target_cell!r} has {len(ids)} rows; SMOTE needs at least 2",
                           size=len(ids))
    if k > len(ids) - 1:
        logger.warning("SMOTE k=%d clamped to %d (cell size - 1)", k, len(ids) - 1)
        k = len(ids) - 1
    if count == 0:
        return data

    cell = data.frame.loc[ids]
    neighbors = _in_cell_neighbors(data, cell, k)

    rng = np.random.Generator(np.random.Philox(key=seed))
    bases = rng.integers(0, len(ids), size=count)
    picks = rng.integers(0, k, size=count)
    u = rng.random(count)

    base_num = cell[numeric].to_numpy(dtype=np.float64)[bases]
    nbr_num = cell[numeric].to_numpy(dtype=np.float64)[neighbors[bases, picks]]
    values = base_num + u[:, None] * (nbr_num - base_num)
    values = np.clip(values, np.minimum(base_num, nbr_num), np.maximum(base_num, nbr_num))

    start = int(data.row_ids.max()) + 1
    new_ids = np.arange(start, start + count)
    synthetic = cell.iloc[bases].copy()
    synthetic.index = pd.Index(new_ids, name="row_id")
    synthetic[numeric] = values

    frame = pd.concat([data.frame, synthetic])
    logger.debug("SMOTE: %d synthetic rows for cell %r (k=%d)", count, target_cell, k)
    return data.with_frame(frame, synthetic=set(data.synthetic) | set(new_ids.tolist()))


def strip_synthetic(data: Dataset) -> Dataset:
    keep = [int(r) for r in data.row_ids if r not in data.synthetic]
    return data.subset(keep)
