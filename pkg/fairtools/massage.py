"""Label massaging: flip M promotion and M demotion labels so group positive rates meet.

Ranking uses a categorical naive Bayes posterior (Laplace smoothing, alpha = 1)
over the feature columns only; the protected column is never a ranker input.
Numeric features are equal-width binned first.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data_model import DEFAULT_BINS, Binning, Dataset
from .errors import EmptyGroup, EmptyInput, InvalidConfig, SingleClassDataset

logger = logging.getLogger(__name__)

ROUNDING_MODES = ("ceil", "nearest")


@dataclass(frozen=True)
class MassagePlan:
    m: int
    promotions: Tuple[int, ...]
    demotions: Tuple[int, ...]
    scores: Dict[int, float] = field(default_factory=dict, compare=False)
    requested_m: int = 0
    clamped: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {"m": self.m, "promotions": list(self.promotions), "demotions": list(self.demotions)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def rank_samples(data: Dataset, alpha: float = 1.0, bins: int = DEFAULT_BINS) -> np.ndarray:
    """P(favorable | features) for every row, in frame order."""

    if len(data) == 0:
        raise EmptyInput("cannot rank an empty dataset")
    y = data.labels()
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassDataset("ranking needs both label values present")

    binned = Binning.fit(data, bins=bins).transform(data)
    log_pos = np.full(len(y), np.log(n_pos / len(y)))
    log_neg = np.full(len(y), np.log(n_neg / len(y)))
    for name in binned.schema.feature_names:
        values = binned.frame[name].to_numpy()
        levels, codes = np.unique(values, return_inverse=True)
        v = len(levels)
        pos_counts = np.bincount(codes[y == 1], minlength=v)
        neg_counts = np.bincount(codes[y == 0], minlength=v)
        log_pos += np.log((pos_counts[codes] + alpha) / (n_pos + alpha * v))
        log_neg += np.log((neg_counts[codes] + alpha) / (n_neg + alpha * v))
    return 1.0 / (1.0 + np.exp(log_neg - log_pos))


def _group_counts(data: Dataset) -> Tuple[int, int, int, int]:
    y = data.labels()
    g = data.groups()
    n_priv = int((g == 1).sum())
    n_unpriv = int((g == 0).sum())
    if n_priv == 0:
        raise EmptyGroup("privileged")
    if n_unpriv == 0:
        raise EmptyGroup("unprivileged")
    return int(y[g == 1].sum()), n_priv, int(y[g == 0].sum()), n_unpriv


def _ceil_div(num: int, den: int) -> int:
    return -((-num) // den)


def required_flips(pos_priv: int, n_priv: int, pos_unpriv: int, n_unpriv: int, rounding: str = "ceil") -> int:
    """Solve (pos_unpriv + M)/n_unpriv = (pos_priv - M)/n_priv for M, rounded, at least 0.

    ``ceil`` never leaves the privileged rate ahead, but the remaining gap can
    reach 1/n_unpriv + 1/n_priv, which exceeds 1/min(n_priv, n_unpriv) unless
    the groups are close in size. ``nearest`` keeps |gap| within half that
    step, so it always meets 1/min(n_priv, n_unpriv); the gap may then have
    either sign.
    """

    num = pos_priv * n_unpriv - pos_unpriv * n_priv
    den = n_priv + n_unpriv
    if rounding == "ceil":
        m = _ceil_div(num, den)
    elif rounding == "nearest":
        m = (2 * num + den) // (2 * den)
    else:
        raise InvalidConfig(f"rounding must be one of {ROUNDING_MODES}, got {rounding!r}")
    return max(0, m)


def _compute_m(data: Dataset, rounding: str) -> Tuple[int, int]:
    pos_priv, n_priv, pos_unpriv, n_unpriv = _group_counts(data)
    requested = required_flips(pos_priv, n_priv, pos_unpriv, n_unpriv, rounding)
    available = min(pos_priv, n_unpriv - pos_unpriv)
    if requested > available:
        logger.warning("massaging needs M=%d flips but only %d candidate pairs exist; clamped",
                       requested, available)
        return available, requested
    return requested, requested


def compute_m(data: Dataset, rounding: str = "ceil") -> int:
    return _compute_m(data, rounding)[0]


def massage(data: Dataset, rounding: str = "ceil",
            scores: Optional[np.ndarray] = None) -> Tuple[Dataset, MassagePlan]:
    """Flip M promotions and M demotions. ``scores`` overrides the naive Bayes ranking."""

    m, requested = _compute_m(data, rounding)
    scores = rank_samples(data) if scores is None else np.asarray(scores, dtype=np.float64)
    ids = data.row_ids
    y = data.labels()
    g = data.groups()

    pr_mask = (g == 0) & (y == 0)
    dem_mask = (g == 1) & (y == 1)
    # descending score for promotions, ascending for demotions; ties -> lower row_id
    pr = np.lexsort((ids[pr_mask], -scores[pr_mask]))
    dem = np.lexsort((ids[dem_mask], scores[dem_mask]))
    promotions = tuple(int(r) for r in ids[pr_mask][pr][:m])
    demotions = tuple(int(r) for r in ids[dem_mask][dem][:m])

    flips: Dict[int, int] = {r: 1 for r in promotions}
    flips.update({r: 0 for r in demotions})
    repaired = data.with_labels(flips) if flips else data
    plan = MassagePlan(
        m=m,
        promotions=promotions,
        demotions=demotions,
        scores={int(r): float(s) for r, s in zip(ids, scores)},
        requested_m=requested,
        clamped=requested != m,
    )
    logger.debug("massage: M=%d (requested %d)", m, requested)
    return repaired, plan


def flip_candidates(data: Dataset) -> Tuple[List[int], List[int]]:
    """Row_ids eligible for promotion (unprivileged, negative) and demotion (privileged, positive)."""

    ids = data.row_ids
    y = data.labels()
    g = data.groups()
    return ([int(r) for r in ids[(g == 0) & (y == 0)]], [int(r) for r in ids[(g == 1) & (y == 1)]])
