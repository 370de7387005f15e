"""Consent-gated AI routing with blind human re-evaluation of AI rejections.

A matter whose owner consents may be decided by the model, up to
floor(f * n) matters. A favorable AI decision is final. An unfavorable one is
put back into the human queue at a random position, as a record that looks
exactly like every other queue record. Everything else goes to humans directly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .classifiers import Model, decide, predict
from .data_model import Dataset
from .errors import EmptyGroup, InvalidConfig
from .metrics import disparate_impact

logger = logging.getLogger(__name__)

SELECTIONS = ("arrival", "random", "score")
HUMAN_MODES = ("group_rates", "ground_truth")
AI = "ai"
HUMAN = "human"


def _check_probability(name: str, value: float) -> None:
    if not (0.0 <= float(value) <= 1.0):
        raise InvalidConfig(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class HumanModel:
    """``group_rates``: favorable with probability rates[group] (unprivileged, privileged).
    ``ground_truth``: the true label with probability ``agreement_rate``, otherwise
    favorable with probability ``error_favorable_rate``."""

    mode: str = "group_rates"
    group_rates: Tuple[float, float] = (0.5, 0.5)
    agreement_rate: float = 0.9
    error_favorable_rate: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in HUMAN_MODES:
            raise InvalidConfig(f"human model mode must be one of {HUMAN_MODES}, got {self.mode!r}")
        if len(self.group_rates) != 2:
            raise InvalidConfig("group_rates needs one rate per group")
        object.__setattr__(self, "group_rates", tuple(float(r) for r in self.group_rates))
        for i, rate in enumerate(self.group_rates):
            _check_probability(f"group_rates[{i}]", rate)
        _check_probability("agreement_rate", self.agreement_rate)
        _check_probability("error_favorable_rate", self.error_favorable_rate)


@dataclass(frozen=True)
class RoutingConfig:
    consent_rate: float = 0.5
    ai_fraction_cap: float = 1.0
    human_model: HumanModel = field(default_factory=HumanModel)
    selection: str = "arrival"
    seed: int = 0
    n_matters: Optional[int] = None

    def __post_init__(self) -> None:
        _check_probability("consent_rate", self.consent_rate)
        _check_probability("ai_fraction_cap", self.ai_fraction_cap)
        if self.selection not in SELECTIONS:
            raise InvalidConfig(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if self.n_matters is not None and self.n_matters < 1:
            raise InvalidConfig("n_matters must be >= 1")

    def knobs(self) -> Dict[str, object]:
        return {"f": self.ai_fraction_cap, "consent_rate": self.consent_rate, "selection": self.selection}


@dataclass(frozen=True)
class MatterTrace:
    row_id: int
    group: int
    consented: int
    routed_to: str
    ai_score: Optional[float]
    ai_decision: Optional[int]
    final_decision: int
    re_evaluated: int


@dataclass(frozen=True)
class RoutingResult:
    matters: Tuple[MatterTrace, ...]
    queue: Tuple[Dict[str, object], ...]
    n: int
    cap: int
    non_consent: int
    overflow: int
    ai_routed: int
    ai_final: int
    ai_negative: int
    human_workload: int
    favorable_rates: Tuple[float, float]
    seed: int

    @property
    def reevaluation_load(self) -> int:
        return self.ai_negative

    @property
    def human_decided(self) -> int:
        return self.human_workload

    def aggregates(self) -> Dict[str, object]:
        return {
            "n": self.n,
            "cap": self.cap,
            "non_consent": self.non_consent,
            "overflow": self.overflow,
            "ai_routed": self.ai_routed,
            "ai_final": self.ai_final,
            "ai_negative": self.ai_negative,
            "human_workload": self.human_workload,
            "reevaluation_load": self.reevaluation_load,
            "favorable_rate_unprivileged": self.favorable_rates[0],
            "favorable_rate_privileged": self.favorable_rates[1],
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.aggregates(), indent=2, sort_keys=True)


def _select(consenting: np.ndarray, cap: int, selection: str, select_u: np.ndarray,
            scores: Optional[np.ndarray]) -> np.ndarray:
    if cap >= consenting.size:
        return consenting
    if selection == "random":
        order = np.argsort(select_u[consenting], kind="stable")
    elif selection == "score":
        # most confident first; arrival order breaks ties
        order = np.argsort(-np.abs(scores - 0.5), kind="stable")
    else:
        order = np.arange(consenting.size)
    return np.sort(consenting[order[:cap]])


def ai_cap(fraction: float, n: int) -> int:
    """floor(fraction * n), read as the decimal the user wrote: 0.29 of 100 is 29, not 28."""
    return math.floor(fraction * n + 1e-9)


def _human_decision(human: HumanModel, group: int, truth: int, u: float, u_err: float) -> int:
    if human.mode == "group_rates":
        return int(u < human.group_rates[group])
    if u < human.agreement_rate:
        return truth
    return int(u_err < human.error_favorable_rate)


def simulate(matters: Dataset, model: Model, config: RoutingConfig) -> RoutingResult:
    if config.n_matters is not None:
        if config.n_matters > len(matters):
            raise InvalidConfig(f"n_matters={config.n_matters} exceeds the {len(matters)} available rows")
        matters = matters.subset(matters.row_ids[: config.n_matters].tolist())
    n = len(matters)
    ids = matters.row_ids
    groups = matters.groups()
    truth = matters.labels()

    # every stochastic input is drawn up front so the model never shifts the stream
    rng = np.random.default_rng(config.seed)
    consent_u = rng.random(n)
    select_u = rng.random(n)
    human_u = rng.random(n)
    human_err_u = rng.random(n)

    consented = consent_u < config.consent_rate
    consenting = np.flatnonzero(consented)
    cap = ai_cap(config.ai_fraction_cap, n)

    consent_scores = None
    if config.selection == "score" and cap > 0 and consenting.size:
        consent_scores = predict(model, matters.subset(ids[consenting].tolist()))
    routed = _select(consenting, cap, config.selection, select_u, consent_scores) if cap > 0 else consenting[:0]

    ai_scores = np.full(n, np.nan)
    ai_decisions = np.full(n, -1, dtype=np.int64)
    if routed.size:
        if consent_scores is not None:
            ai_scores[routed] = consent_scores[np.searchsorted(consenting, routed)]
        else:
            ai_scores[routed] = predict(model, matters.subset(ids[routed].tolist()))
        ai_decisions[routed] = decide(ai_scores[routed])

    is_routed = np.zeros(n, dtype=bool)
    is_routed[routed] = True
    negative = np.flatnonzero(is_routed & (ai_decisions == 0))

    # queue records carry the matter as submitted, nothing about its history
    columns = [matters.schema.protected] + matters.schema.feature_names
    records = matters.frame[columns].reset_index().to_dict("records")
    queue: List[int] = np.flatnonzero(~is_routed).tolist()
    for pos in negative.tolist():
        queue.insert(int(rng.integers(0, len(queue) + 1)), pos)

    final = np.where(is_routed & (ai_decisions == 1), 1, -1)
    for pos in queue:
        final[pos] = _human_decision(config.human_model, int(groups[pos]), int(truth[pos]),
                                     float(human_u[pos]), float(human_err_u[pos]))

    traces = tuple(
        MatterTrace(
            row_id=int(ids[i]),
            group=int(groups[i]),
            consented=int(consented[i]),
            routed_to=AI if is_routed[i] else HUMAN,
            ai_score=None if np.isnan(ai_scores[i]) else float(ai_scores[i]),
            ai_decision=None if ai_decisions[i] < 0 else int(ai_decisions[i]),
            final_decision=int(final[i]),
            re_evaluated=int(is_routed[i] and ai_decisions[i] == 0),
        )
        for i in range(n)
    )
    rates = (float(final[groups == 0].mean()) if (groups == 0).any() else 0.0,
             float(final[groups == 1].mean()) if (groups == 1).any() else 0.0)
    result = RoutingResult(
        matters=traces,
        queue=tuple(records[pos] for pos in queue),
        n=n,
        cap=cap,
        non_consent=int((~consented).sum()),
        overflow=int(consenting.size - routed.size),
        ai_routed=int(routed.size),
        ai_final=int(routed.size - negative.size),
        ai_negative=int(negative.size),
        human_workload=len(queue),
        favorable_rates=rates,
        seed=config.seed,
    )
    logger.debug("routing: n=%d cap=%d ai=%d negative=%d workload=%d",
                 n, cap, result.ai_routed, result.ai_negative, result.human_workload)
    return result


@dataclass(frozen=True)
class BlindnessReport:
    passed: bool
    offending_fields: Tuple[str, ...]
    reinserted: int
    never_routed: int

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def verify_blindness(result: RoutingResult) -> BlindnessReport:
    """Every human-queue record must have the same fields in the same order,
    whether it came back from the AI or was never routed."""

    reinserted_ids = {m.row_id for m in result.matters if m.re_evaluated}
    signatures: Dict[Tuple[str, ...], int] = {}
    counts = [0, 0]
    for record in result.queue:
        signatures.setdefault(tuple(record.keys()), 0)
        signatures[tuple(record.keys())] += 1
        counts[int(record.get("row_id") in reinserted_ids)] += 1
    if len(signatures) <= 1:
        return BlindnessReport(True, (), counts[1], counts[0])

    common = set.intersection(*(set(s) for s in signatures))
    offending = sorted(set().union(*(set(s) for s in signatures)) - common)
    if not offending:
        offending = ["<field order>"]
    return BlindnessReport(False, tuple(offending), counts[1], counts[0])


def write_trace_jsonl(path: Union[str, Path], result: RoutingResult) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for trace in result.matters:
            f.write(json.dumps(asdict(trace), sort_keys=True) + "\n")


def write_result_json(path: Union[str, Path], result: RoutingResult) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(result.to_json() + "\n", encoding="utf-8")


def sweep_ai_fraction(matters: Dataset, model: Model, config: RoutingConfig, fractions: Sequence[float],
                      path: Optional[Union[str, Path]] = None, progress: bool = False) -> pd.DataFrame:
    """One simulation per cap value with everything else fixed; one CSV row per point."""

    rows = []
    for f in tqdm(list(fractions), desc="routing sweep", disable=not progress):
        result = simulate(matters, model, replace(config, ai_fraction_cap=float(f)))
        row = {"ai_fraction_cap": float(f), **result.aggregates()}
        finals = np.array([m.final_decision for m in result.matters])
        groups = np.array([m.group for m in result.matters])
        try:
            row["disparate_impact"] = disparate_impact(finals, groups).ratio
        except EmptyGroup:
            row["disparate_impact"] = float("nan")
        rows.append(row)
    table = pd.DataFrame(rows)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")
    return table
