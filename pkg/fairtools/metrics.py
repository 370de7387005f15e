"""Group and individual fairness measures.

Group labels follow one convention everywhere: ``groups[i] == 1`` marks the
privileged group, ``0`` the unprivileged (protected) group. Outcomes are 1 for
the favorable decision.

Individual fairness is measured as k-nearest-neighbor consistency. The
distance is Euclidean over standardized numeric columns plus a Hamming count
over categorical columns; neighbor ties go to the lower row_id.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .data_model import Binning, Dataset
from .errors import DegenerateFeature, EmptyGroup, EmptyInput, InvalidConfig, KTooLarge, LengthMismatch

logger = logging.getLogger(__name__)

DEFAULT_K = 5
METRIC_NOTE = "euclidean(standardized numeric) + hamming(categorical); ties -> lower row_id"
_CHUNK = 256


@dataclass(frozen=True)
class GroupParity:
    ratio: float
    difference: float
    rates: Tuple[float, float]
    counts: Tuple[int, int]


def disparate_impact(labels: Sequence[int], groups: Sequence[int]) -> GroupParity:
    y = np.asarray(labels, dtype=np.int64)
    g = np.asarray(groups, dtype=np.int64)
    if y.shape != g.shape:
        raise LengthMismatch(f"labels ({y.size}) and groups ({g.size}) differ in length")
    n_unpriv = int((g == 0).sum())
    n_priv = int((g == 1).sum())
    if n_priv == 0:
        raise EmptyGroup("privileged")
    if n_unpriv == 0:
        raise EmptyGroup("unprivileged")
    rate_unpriv = float(y[g == 0].sum()) / n_unpriv
    rate_priv = float(y[g == 1].sum()) / n_priv
    if rate_priv > 0:
        ratio = rate_unpriv / rate_priv
    else:
        # no favorable outcomes anywhere counts as parity
        ratio = math.inf if rate_unpriv > 0 else 1.0
    return GroupParity(ratio, rate_unpriv - rate_priv, (rate_unpriv, rate_priv), (n_unpriv, n_priv))


def accuracy(predictions: Sequence[int], truth: Sequence[int]) -> float:
    p = np.asarray(predictions)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise LengthMismatch(f"predictions ({p.size}) and truth ({t.size}) differ in length")
    if p.size == 0:
        raise EmptyInput("accuracy of an empty vector")
    return float((p == t).mean())


def _standardize(num: np.ndarray, names: Sequence[str]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (means, scales, keep) for each numeric column; zero-variance columns are dropped."""

    if num.shape[1] == 0:
        empty = np.zeros(0)
        return empty, empty, np.zeros(0, dtype=bool)
    means = num.mean(axis=0)
    scales = num.std(axis=0)
    keep = scales > 0
    for j in np.flatnonzero(~keep):
        logger.warning("feature %r has zero variance; excluded from the distance", names[j])
    return means, np.where(keep, scales, 1.0), keep


def _distance_rows(qn: np.ndarray, qc: np.ndarray, num: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """Distances from each query row (qn/qc) to every reference row (num/cat)."""

    d = np.zeros((qn.shape[0], num.shape[0]))
    if num.shape[1]:
        diff = qn[:, None, :] - num[None, :, :]
        d += np.sqrt((diff ** 2).sum(axis=2))
    if cat.shape[1]:
        d += (qc[:, None, :] != cat[None, :, :]).sum(axis=2)
    return d


@dataclass(frozen=True, eq=False)
class FeatureSpace:
    """The mixed-type metric fitted on one dataset and queried with records or other datasets."""

    numeric: Tuple[str, ...]
    categorical: Tuple[str, ...]
    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def fit(cls, data: Dataset, columns: Optional[Sequence[str]] = None) -> "FeatureSpace":
        cols = list(columns) if columns is not None else data.schema.feature_names
        numeric = [c for c in cols if c in data.schema.numeric_features]
        categorical = []
        for c in cols:
            if c in numeric:
                continue
            if data.frame[c].nunique() < 2:
                logger.warning("feature %r is constant; excluded from the distance", c)
                continue
            categorical.append(c)
        raw = data.frame[numeric].to_numpy(dtype=np.float64) if numeric else np.zeros((len(data), 0))
        means, scales, keep = _standardize(raw, numeric)
        numeric_kept = tuple(n for n, k in zip(numeric, keep) if k)
        if not numeric_kept and not categorical:
            raise DegenerateFeature("every feature column is degenerate")
        return cls(numeric_kept, tuple(categorical), means[keep], scales[keep])

    def encode_frame(self, frame: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray]:
        num = frame[list(self.numeric)].to_numpy(dtype=np.float64) if self.numeric else np.zeros((len(frame), 0))
        num = (num - self.means) / self.scales if self.numeric else num
        cat = frame[list(self.categorical)].astype(str).to_numpy() if self.categorical else np.zeros((len(frame), 0))
        return num, cat

    def encode_record(self, record: Dict[str, object]) -> Tuple[np.ndarray, np.ndarray]:
        return self.encode_frame(pd.DataFrame([record]))

    def neighbors(self, query: Dict[str, object], data: Dataset, k: int,
                  exclude: Optional[int] = None) -> List[int]:
        """The k nearest rows of ``data`` to ``query``, nearest first, ties to lower row_id."""

        frame = data.frame.sort_index()
        ids = frame.index.to_numpy()
        if exclude is not None:
            mask = ids != exclude
            frame, ids = frame[mask], ids[mask]
        if k < 1:
            raise InvalidConfig("k must be >= 1")
        if k > len(ids):
            raise KTooLarge(k, len(ids))
        qn, qc = self.encode_record(query)
        num, cat = self.encode_frame(frame)
        d = _distance_rows(qn, qc, num, cat)[0]
        order = np.argsort(d, kind="stable")[:k]
        return [int(r) for r in ids[order]]


def knn_indices(num: np.ndarray, cat: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k nearest other rows for every row; rows must be in row_id order."""

    n = num.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _CHUNK):
        stop = min(n, start + _CHUNK)
        d = _distance_rows(num[start:stop], cat[start:stop], num, cat)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def consistency(predictions: Sequence[float], features: np.ndarray, k: int = DEFAULT_K,
                categorical: Optional[np.ndarray] = None, row_ids: Optional[Sequence[int]] = None,
                feature_names: Optional[Sequence[str]] = None) -> float:
    """1 - mean_i |y_i - mean of y over the k nearest neighbors of i|."""

    y = np.asarray(predictions, dtype=np.float64)
    num = np.asarray(features, dtype=np.float64)
    if num.ndim == 1:
        num = num[:, None]
    n = y.size
    cat = np.asarray(categorical) if categorical is not None else np.zeros((n, 0))
    if num.shape[0] != n or cat.shape[0] != n:
        raise LengthMismatch("predictions and feature rows differ in length")
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    if k >= n:
        raise KTooLarge(k, n - 1)

    names = list(feature_names) if feature_names is not None else [f"col{j}" for j in range(num.shape[1])]
    means, scales, keep = _standardize(num, names)
    num = ((num - means) / scales)[:, keep] if num.shape[1] else num
    if num.shape[1] == 0 and cat.shape[1] == 0:
        raise DegenerateFeature("every feature column is degenerate")

    order = np.argsort(np.asarray(row_ids), kind="stable") if row_ids is not None else np.arange(n)
    nbrs = knn_indices(num[order], cat[order], k)
    ys = y[order]
    neighbor_mean = ys[nbrs].mean(axis=1)
    return float(1.0 - np.abs(ys - neighbor_mean).mean())


def dataset_consistency(data: Dataset, predictions: Sequence[float], k: int = DEFAULT_K) -> float:
    numeric = data.schema.numeric_features
    categorical = data.schema.categorical_features
    num = data.frame[numeric].to_numpy(dtype=np.float64) if numeric else np.zeros((len(data), 0))
    cat = data.frame[categorical].to_numpy() if categorical else np.zeros((len(data), 0))
    return consistency(predictions, num, k, categorical=cat, row_ids=data.row_ids, feature_names=numeric)


def proxy_leakage(data: Dataset, bins: int = 8) -> Dict[str, float]:
    """How well each feature alone predicts the protected attribute, above the majority baseline."""

    binned = Binning.fit(data, bins=bins).transform(data)
    z = binned.groups()
    baseline = max(z.mean(), 1.0 - z.mean())
    out: Dict[str, float] = {}
    for name in binned.schema.feature_names:
        table = pd.crosstab(binned.frame[name].to_numpy(), z)
        hits = table.max(axis=1).sum()
        out[name] = float(hits / len(z) - baseline)
    return out


def _finite_or_tag(value: float) -> object:
    if value is None:
        return None
    if math.isinf(value):
        return "inf"
    return float(value)


@dataclass
class FairnessReport:
    disparate_impact_ratio: float
    statistical_parity_difference: float
    group_positive_rates: Tuple[float, float]
    counts: Tuple[int, int]
    consistency: Optional[float] = None
    accuracy: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "disparate_impact_ratio": _finite_or_tag(self.disparate_impact_ratio),
            "statistical_parity_difference": self.statistical_parity_difference,
            "group_positive_rates": {"unprivileged": self.group_positive_rates[0],
                                     "privileged": self.group_positive_rates[1]},
            "counts": {"unprivileged": self.counts[0], "privileged": self.counts[1]},
            "consistency": self.consistency,
        }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        return out

    def flat(self) -> Dict[str, object]:
        d = self.to_dict()
        rates = d.pop("group_positive_rates")
        counts = d.pop("counts")
        d["positive_rate_unprivileged"] = rates["unprivileged"]  # type: ignore[index]
        d["positive_rate_privileged"] = rates["privileged"]  # type: ignore[index]
        d["count_unprivileged"] = counts["unprivileged"]  # type: ignore[index]
        d["count_privileged"] = counts["privileged"]  # type: ignore[index]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv_row(self) -> str:
        return pd.DataFrame([self.flat()]).to_csv(index=False, lineterminator="\n")


def _safe_consistency(data: Dataset, values: Sequence[float], k: int) -> Optional[float]:
    try:
        return dataset_consistency(data, values, k)
    except (KTooLarge, DegenerateFeature) as e:
        logger.warning("consistency skipped: %s", e)
        return None


def dataset_report(data: Dataset, k: int = DEFAULT_K) -> FairnessReport:
    labels = data.labels()
    parity = disparate_impact(labels, data.groups())
    return FairnessReport(
        disparate_impact_ratio=parity.ratio,
        statistical_parity_difference=parity.difference,
        group_positive_rates=parity.rates,
        counts=parity.counts,
        consistency=_safe_consistency(data, labels, k),
    )


def prediction_report(data: Dataset, decisions: Sequence[int], k: int = DEFAULT_K) -> FairnessReport:
    d = np.asarray(decisions, dtype=np.int64)
    parity = disparate_impact(d, data.groups())
    return FairnessReport(
        disparate_impact_ratio=parity.ratio,
        statistical_parity_difference=parity.difference,
        group_positive_rates=parity.rates,
        counts=parity.counts,
        consistency=_safe_consistency(data, d, k),
        accuracy=accuracy(d, data.labels()),
    )
