"""Precedent audit: what a repair does to the neighborhood a probe case is compared against.

Neighbors are always found in the ORIGINAL data with the metrics module's
distance; the repaired data is only looked up by row_id. Both models are
trained with the same trainer config and seed so the repair is the only
thing that differs between the two probe decisions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .classifiers import Model, TrainerConfig, decide, predict, train_model
from .data_model import NUMERIC, Dataset
from .errors import RowIdMismatch
from .metrics import DEFAULT_K, FeatureSpace

logger = logging.getLogger(__name__)

Probe = Union[int, Mapping[str, object]]


@dataclass(frozen=True)
class NeighborDiff:
    row_id: int
    original_label: int
    repaired_label: int
    flipped: int
    distortion: int


@dataclass(frozen=True)
class AuditFinding:
    probe: Optional[int]
    k: int
    neighbors: Tuple[NeighborDiff, ...]
    flip_rate: float
    original_decision: int
    repaired_decision: int
    repaired_neighbors: Tuple[int, ...]
    overlap: int
    synthetic_neighbors: int

    @property
    def neighbor_ids(self) -> List[int]:
        return [n.row_id for n in self.neighbors]

    @property
    def flipped_ids(self) -> List[int]:
        return [n.row_id for n in self.neighbors if n.flipped]

    @property
    def decision_changed(self) -> bool:
        return self.original_decision != self.repaired_decision

    def to_dict(self) -> Dict[str, object]:
        out = asdict(self)
        out["neighbors"] = [asdict(n) for n in self.neighbors]
        out["repaired_neighbors"] = list(self.repaired_neighbors)
        out["decision_changed"] = self.decision_changed
        return out


@dataclass(frozen=True)
class AuditSummary:
    count: int
    mean_flip_rate: float
    decision_change_rate: float
    mean_overlap: float

    @property
    def empty(self) -> bool:
        return self.count == 0

    def to_dict(self) -> Dict[str, object]:
        out = asdict(self)
        out["empty"] = self.empty
        return out


def check_row_ids(original: Dataset, repaired: Dataset) -> None:
    """Every original row must survive the repair; anything new must be flagged synthetic."""

    orig = set(int(r) for r in original.row_ids)
    kept = set(int(r) for r in repaired.row_ids) - set(repaired.synthetic)
    if orig != kept:
        missing = sorted(orig - kept)[:5]
        extra = sorted(kept - orig)[:5]
        raise RowIdMismatch(f"repaired data does not share row_ids with the original "
                            f"(missing {missing}, unexpected {extra})")


def _feature_changes(data_a: Dataset, data_b: Dataset, row_ids: Sequence[int]) -> np.ndarray:
    a = data_a.frame.loc[list(row_ids)]
    b = data_b.frame.loc[list(row_ids)]
    changes = np.zeros(len(row_ids), dtype=np.int64)
    for col in data_a.schema.features:
        if col.kind == NUMERIC:
            changes += ~np.isclose(a[col.name].to_numpy(), b[col.name].to_numpy(), rtol=0.0, atol=1e-12)
        else:
            changes += a[col.name].to_numpy() != b[col.name].to_numpy()
    return changes


def _probe_frame(original: Dataset, probe: Probe) -> Tuple[Optional[int], Dict[str, object], Dataset]:
    if isinstance(probe, (int, np.integer)):
        row_id = int(probe)
        return row_id, original.record(row_id), original.subset([row_id])
    record = dict(probe)
    frame = pd.DataFrame([record], index=pd.Index([-1], name="row_id"))
    return None, record, original.with_frame(frame, synthetic=())


def train_pair(original: Dataset, repaired: Dataset, trainer: TrainerConfig) -> Tuple[Model, Model]:
    return train_model(original, trainer), train_model(repaired, trainer)


def audit_probe(original: Dataset, repaired: Dataset, probe: Probe, k: int = DEFAULT_K,
                trainer: TrainerConfig = TrainerConfig(),
                models: Optional[Tuple[Model, Model]] = None,
                space: Optional[FeatureSpace] = None) -> AuditFinding:
    """Audit one probe. ``probe`` is an original row_id (excluded from its own
    neighborhood) or a full record with every schema column."""

    check_row_ids(original, repaired)
    space = space or FeatureSpace.fit(original)
    probe_id, record, probe_data = _probe_frame(original, probe)

    neighbor_ids = space.neighbors(record, original, k, exclude=probe_id)
    orig_labels = original.labels()[original.frame.index.get_indexer(neighbor_ids)]
    rep_labels = repaired.labels()[repaired.frame.index.get_indexer(neighbor_ids)]
    distortion = _feature_changes(original, repaired, neighbor_ids)
    diffs = tuple(
        NeighborDiff(int(r), int(a), int(b), int(a != b), int(d))
        for r, a, b, d in zip(neighbor_ids, orig_labels, rep_labels, distortion)
    )
    flip_rate = sum(d.flipped for d in diffs) / k

    repaired_ids = space.neighbors(record, repaired, k, exclude=probe_id)
    overlap = len(set(repaired_ids) & set(neighbor_ids))
    synthetic = sum(1 for r in repaired_ids if r in repaired.synthetic)

    model_orig, model_rep = models or train_pair(original, repaired, trainer)
    before = int(decide(predict(model_orig, probe_data))[0])
    after = int(decide(predict(model_rep, probe_data))[0])
    return AuditFinding(probe_id, k, diffs, flip_rate, before, after, tuple(repaired_ids), overlap, synthetic)


def summarize(findings: Sequence[AuditFinding]) -> AuditSummary:
    if not findings:
        return AuditSummary(0, 0.0, 0.0, 0.0)
    return AuditSummary(
        count=len(findings),
        mean_flip_rate=float(np.mean([f.flip_rate for f in findings])),
        decision_change_rate=float(np.mean([f.decision_changed for f in findings])),
        mean_overlap=float(np.mean([f.overlap / f.k for f in findings])),
    )


def audit_sweep(original: Dataset, repaired: Dataset, probes: Sequence[Probe], k: int = DEFAULT_K,
                trainer: TrainerConfig = TrainerConfig()) -> Tuple[List[AuditFinding], AuditSummary]:
    check_row_ids(original, repaired)
    if not probes:
        return [], summarize([])
    models = train_pair(original, repaired, trainer)
    space = FeatureSpace.fit(original)
    findings = [audit_probe(original, repaired, p, k, trainer, models=models, space=space) for p in probes]
    summary = summarize(findings)
    logger.info("audit: %d probes, mean flip rate %.4f, decision change rate %.4f",
                summary.count, summary.mean_flip_rate, summary.decision_change_rate)
    return findings, summary


def write_findings_jsonl(path: Union[str, Path], findings: Sequence[AuditFinding]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for finding in findings:
            f.write(json.dumps(finding.to_dict(), sort_keys=True) + "\n")


def write_summary_json(path: Union[str, Path], summary: AuditSummary) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
