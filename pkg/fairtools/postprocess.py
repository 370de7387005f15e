"""Output corrections applied to model scores: reject option and ensemble disagreement."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import FewerThanTwoClassifiers, InvalidConfig, LengthMismatch

logger = logging.getLogger(__name__)

BOUNDARY = 0.5


@dataclass(frozen=True)
class RejectOptionConfig:
    theta: float = 0.0
    boundary: float = BOUNDARY

    def __post_init__(self) -> None:
        if not (0.0 <= self.theta <= 0.5):
            raise InvalidConfig(f"theta must be in [0, 0.5], got {self.theta}")
        if self.boundary != BOUNDARY:
            raise InvalidConfig("the decision boundary is fixed at 0.5")


@dataclass(frozen=True, eq=False)
class Decisions:
    decisions: np.ndarray
    intervened: np.ndarray

    @property
    def interventions(self) -> int:
        return int(self.intervened.sum())


def _as_groups(groups: Sequence[int], n: int) -> np.ndarray:
    g = np.asarray(groups, dtype=np.int64)
    if g.shape != (n,):
        raise LengthMismatch(f"{n} scores but {g.size} group values")
    return g


def reject_option(scores: Sequence[float], groups: Sequence[int], config: RejectOptionConfig) -> Decisions:
    """Inside the critical region |s - 0.5| < theta the unprivileged row gets the favorable
    outcome and the privileged row the unfavorable one; edges lie outside."""

    s = np.asarray(scores, dtype=np.float64)
    g = _as_groups(groups, s.size)
    if ((s < 0) | (s > 1)).any():
        raise InvalidConfig("scores must lie in [0, 1]")
    default = (s >= config.boundary).astype(np.int64)
    critical = np.abs(s - config.boundary) < config.theta
    decisions = np.where(critical, np.where(g == 0, 1, 0), default)
    return Decisions(decisions, (decisions != default).astype(np.int64))


def ensemble_disagreement(decision_sets: Sequence[Sequence[int]], groups: Sequence[int]) -> Decisions:
    """Unanimous rows keep their decision; on disagreement unprivileged -> favorable, privileged -> unfavorable."""

    if len(decision_sets) < 2:
        raise FewerThanTwoClassifiers(f"ensemble needs at least 2 classifiers, got {len(decision_sets)}")
    lengths = {len(d) for d in decision_sets}
    if len(lengths) != 1:
        raise LengthMismatch(f"classifier decision vectors differ in length: {sorted(lengths)}")
    votes = np.asarray(decision_sets, dtype=np.int64)
    g = _as_groups(groups, votes.shape[1])
    unanimous = (votes == votes[0]).all(axis=0)
    decisions = np.where(unanimous, votes[0], np.where(g == 0, 1, 0))
    return Decisions(decisions, (~unanimous).astype(np.int64))


def write_decisions_csv(path: Union[str, Path], row_ids: Sequence[int],
                        scores: Union[Sequence[float], Dict[str, Sequence[float]]],
                        result: Decisions) -> None:
    """row_id, one raw score column per scorer, decision, intervened."""

    frame = pd.DataFrame({"row_id": np.asarray(row_ids, dtype=np.int64)})
    if isinstance(scores, dict):
        for name, values in scores.items():
            frame[f"score_{name}"] = np.asarray(values, dtype=np.float64)
    else:
        frame["score"] = np.asarray(scores, dtype=np.float64)
    frame["decision"] = result.decisions
    frame["intervened"] = result.intervened
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")


def plain_decisions(scores: Sequence[float], boundary: Optional[float] = None) -> Decisions:
    s = np.asarray(scores, dtype=np.float64)
    decisions = (s >= (BOUNDARY if boundary is None else boundary)).astype(np.int64)
    return Decisions(decisions, np.zeros_like(decisions))
