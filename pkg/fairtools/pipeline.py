"""End-to-end experiment runner driven by one YAML file.

Stages run in a fixed order: ingest, preprocess, train, postprocess, metrics,
audit, simulate. Every section except ``data`` is optional. A ``sweep`` block
runs several intervention stacks over the same data and seed instead.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import platform
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from . import __version__
from .audit import AuditSummary, audit_sweep, write_findings_jsonl, write_summary_json
from .classifiers import (
    KINDS,
    AdversarialConfig,
    LogisticConfig,
    Model,
    PrejudiceConfig,
    TrainerConfig,
    decide,
    predict,
    prejudice_index,
    train_model,
)
from .data_model import (
    DEFAULT_BINS,
    Binning,
    Dataset,
    GeneratorConfig,
    empirical_joint,
    generate_synthetic,
    load_csv,
    load_schema,
    standard_config,
    train_test_split,
)
from .errors import ConfigParse, FairtoolsError, InvalidConfig, StageFailure
from .log import configure_logging
from .massage import ROUNDING_MODES, MassagePlan, massage
from .metrics import DEFAULT_K, METRIC_NOTE, dataset_report, prediction_report, proxy_leakage
from .optimize import (
    C_TUNING_NOTE,
    OptimizeConfig,
    SolveResult,
    apply_repair,
    check_repair_map,
    knobs_summary,
    solve_repair_map,
)
from .postprocess import (
    Decisions,
    RejectOptionConfig,
    ensemble_disagreement,
    plain_decisions,
    reject_option,
    write_decisions_csv,
)
from .routing import HumanModel, RoutingConfig, simulate, sweep_ai_fraction, write_result_json, write_trace_jsonl
from .smote import DEFAULT_K as SMOTE_K
from .smote import balance_count, smote_augment

logger = logging.getLogger(__name__)

PREPROCESS_METHODS = ("none", "massage", "optimize", "smote")
POSTPROCESS_METHODS = ("none", "reject_option", "ensemble")
TOP_LEVEL_KEYS = ("seed", "data", "preprocess", "train", "postprocess", "metrics", "audit", "simulate", "sweep")
SWEEP_AUDIT_PROBES = 100

T = TypeVar("T")


# ──────────────── config ────────────────

@dataclass(frozen=True)
class DataSection:
    generate: Optional[GeneratorConfig] = None
    csv: Optional[Path] = None
    schema: Optional[Path] = None
    test_fraction: float = 0.0


@dataclass(frozen=True)
class OptimizeSection:
    features: Tuple[str, ...]
    bins: int
    repair: OptimizeConfig


@dataclass(frozen=True)
class SmoteSection:
    target: Optional[Tuple[str, str]] = None
    reference: Optional[Tuple[str, str]] = None
    count: Union[int, str] = "balance"
    k: int = SMOTE_K


@dataclass(frozen=True)
class Stack:
    name: str = "default"
    preprocess: str = "none"
    rounding: str = "ceil"
    optimize: Optional[OptimizeSection] = None
    smote: SmoteSection = field(default_factory=SmoteSection)
    trainer: Optional[TrainerConfig] = None
    postprocess: str = "none"
    reject: RejectOptionConfig = field(default_factory=RejectOptionConfig)
    ensemble: Tuple[str, ...] = ("logistic", "prejudice_remover", "adversarial")

    def knobs(self) -> Dict[str, object]:
        out: Dict[str, object] = {}
        if self.preprocess == "massage":
            out["rounding"] = self.rounding
        if self.optimize is not None:
            out.update(knobs_summary(self.optimize.repair))
        if self.trainer is not None:
            out.update(self.trainer.knobs())
        if self.postprocess == "reject_option":
            out["theta"] = self.reject.theta
        if self.postprocess == "ensemble":
            out["ensemble"] = list(self.ensemble)
        return out


@dataclass(frozen=True)
class AuditSection:
    k: int = DEFAULT_K
    probes: Union[int, str] = "all"


@dataclass(frozen=True)
class SimulateSection:
    routing: RoutingConfig
    fractions: Tuple[float, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    data: DataSection
    stack: Stack
    metrics_k: int = DEFAULT_K
    audit: Optional[AuditSection] = None
    simulate: Optional[SimulateSection] = None
    sweep: Tuple[Stack, ...] = ()
    resolved: Dict[str, Any] = field(default_factory=dict, compare=False)


def _mapping(raw: Any, path: str, allowed: Sequence[str]) -> Dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigParse(f"{path} must be a mapping", field=path)
    for key in raw:
        if key not in allowed:
            raise ConfigParse(f"unknown key {path}.{key}", field=f"{path}.{key}")
    return raw


def _tupled(value: Any) -> Any:
    return tuple(_tupled(v) for v in value) if isinstance(value, list) else value


def _build(cls: Type[T], raw: Any, path: str, **fixed: Any) -> T:
    """Instantiate a config dataclass from a YAML mapping; errors name the field path."""

    allowed = [f.name for f in fields(cls) if f.name not in fixed]  # type: ignore[arg-type]
    body = {k: _tupled(v) for k, v in _mapping(raw, path, allowed).items()}
    try:
        return cls(**body, **fixed)
    except InvalidConfig as e:
        raise ConfigParse(f"{path}: {e.message}", field=path) from e
    except (TypeError, ValueError) as e:
        raise ConfigParse(f"{path}: {e}", field=path) from e


def _choice(value: Any, options: Sequence[str], path: str) -> str:
    if value not in options:
        raise ConfigParse(f"{path} must be one of {list(options)}, got {value!r}", field=path)
    return str(value)


def _pair(value: Any, path: str) -> Optional[Tuple[str, str]]:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigParse(f"{path} must be [protected value, label value]", field=path)
    return (str(value[0]), str(value[1]))


def _existing_path(value: Any, base_dir: Path, path: str) -> Path:
    p = Path(str(value))
    if not p.is_absolute():
        p = (base_dir / p).resolve()
    if not p.exists():
        raise ConfigParse(f"{path}: file not found: {p}", field=path)
    return p


def _parse_data(raw: Any, seed: int, base_dir: Path, resolved: Dict[str, Any]) -> DataSection:
    body = _mapping(raw, "data", ("generate", "csv", "schema", "test_fraction"))
    has_generate = body.get("generate") is not None
    has_csv = body.get("csv") is not None
    if has_generate == has_csv:
        raise ConfigParse("data needs exactly one of generate or csv", field="data")
    test_fraction = float(body.get("test_fraction", 0.0))
    if not (0.0 <= test_fraction < 1.0):
        raise ConfigParse("data.test_fraction must be in [0, 1)", field="data.test_fraction")
    if has_generate:
        allowed = [f.name for f in fields(GeneratorConfig) if f.name != "seed"]
        overrides = _mapping(body["generate"], "data.generate", allowed)
        try:
            gen = standard_config(**overrides, seed=seed)
        except InvalidConfig as e:
            raise ConfigParse(f"data.generate: {e.message}", field="data.generate") from e
        return DataSection(generate=gen, test_fraction=test_fraction)
    if body.get("schema") is None:
        raise ConfigParse("data.csv needs data.schema", field="data.schema")
    csv_path = _existing_path(body["csv"], base_dir, "data.csv")
    schema_path = _existing_path(body["schema"], base_dir, "data.schema")
    resolved["data"]["csv"] = str(csv_path)
    resolved["data"]["schema"] = str(schema_path)
    return DataSection(csv=csv_path, schema=schema_path, test_fraction=test_fraction)


def _parse_trainer(raw: Any, seed: int, path: str) -> Optional[TrainerConfig]:
    if raw is None:
        return None
    body = _mapping(raw, path, ("kind", "logistic", "prejudice", "adversarial"))
    kind = _choice(body.get("kind", "logistic"), KINDS, f"{path}.kind")
    return TrainerConfig(
        kind=kind,
        logistic=_build(LogisticConfig, body.get("logistic"), f"{path}.logistic", seed=seed),
        prejudice=_build(PrejudiceConfig, body.get("prejudice"), f"{path}.prejudice"),
        adversarial=_build(AdversarialConfig, body.get("adversarial"), f"{path}.adversarial", seed=seed),
    )


def _parse_stack(name: str, pre_raw: Any, train_raw: Any, post_raw: Any, seed: int, path: str) -> Stack:
    pre = _mapping(pre_raw, f"{path}preprocess", ("method", "massage", "optimize", "smote"))
    method = _choice(pre.get("method", "none"), PREPROCESS_METHODS, f"{path}preprocess.method")
    rounding = _mapping(pre.get("massage"), f"{path}preprocess.massage", ("rounding",)).get("rounding", "ceil")
    rounding = _choice(rounding, ROUNDING_MODES, f"{path}preprocess.massage.rounding")

    optimize = None
    if method == "optimize":
        opt_path = f"{path}preprocess.optimize"
        opt = dict(_mapping(pre.get("optimize"), opt_path,
                            ["features", "bins"] + [f.name for f in fields(OptimizeConfig)
                                                    if f.name not in ("distortion", "seed")]))
        features = tuple(str(f) for f in (opt.pop("features", None) or ()))
        if not features:
            raise ConfigParse(f"{opt_path}.features must list at least one column", field=f"{opt_path}.features")
        bins = int(opt.pop("bins", DEFAULT_BINS))
        if "distortion_budget" not in opt:
            raise ConfigParse(f"{opt_path}.distortion_budget has no default; set it explicitly",
                              field=f"{opt_path}.distortion_budget")
        optimize = OptimizeSection(features, bins, _build(OptimizeConfig, opt, opt_path, seed=seed))

    smote_raw = _mapping(pre.get("smote"), f"{path}preprocess.smote", ("target", "reference", "count", "k"))
    count = smote_raw.get("count", "balance")
    if not (count == "balance" or (isinstance(count, int) and count >= 0)):
        raise ConfigParse("smote.count must be 'balance' or a non-negative integer",
                          field=f"{path}preprocess.smote.count")
    smote = SmoteSection(_pair(smote_raw.get("target"), f"{path}preprocess.smote.target"),
                         _pair(smote_raw.get("reference"), f"{path}preprocess.smote.reference"),
                         count, int(smote_raw.get("k", SMOTE_K)))

    trainer = _parse_trainer(train_raw, seed, f"{path}train")
    post = _mapping(post_raw, f"{path}postprocess", ("method", "theta", "ensemble"))
    post_method = _choice(post.get("method", "none"), POSTPROCESS_METHODS, f"{path}postprocess.method")
    reject = _build(RejectOptionConfig, {"theta": post["theta"]} if "theta" in post else None,
                    f"{path}postprocess")
    ensemble = tuple(str(k) for k in post.get("ensemble", Stack.ensemble))
    for i, kind in enumerate(ensemble):
        _choice(kind, KINDS, f"{path}postprocess.ensemble[{i}]")
    if post_method != "none" and trainer is None:
        raise ConfigParse("postprocessing needs a train section", field=f"{path}postprocess")
    if post_method == "ensemble" and len(ensemble) < 2:
        raise ConfigParse("ensemble needs at least 2 classifiers", field=f"{path}postprocess.ensemble")
    return Stack(name, method, rounding, optimize, smote, trainer, post_method, reject, ensemble)


def parse_config(raw: Any, base_dir: Union[str, Path] = ".", seed: Optional[int] = None) -> PipelineConfig:
    top = _mapping(raw, "config", TOP_LEVEL_KEYS)
    resolved = copy.deepcopy(top)
    if seed is None:
        seed = top.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigParse("seed must be a non-negative integer", field="seed")
    resolved["seed"] = seed
    base = Path(base_dir)

    if "data" not in top:
        raise ConfigParse("missing data section", field="data")
    data = _parse_data(top["data"], seed, base, resolved)
    stack = _parse_stack("default", top.get("preprocess"), top.get("train"), top.get("postprocess"), seed, "")

    metrics = _mapping(top.get("metrics"), "metrics", ("k",))
    audit = None
    if "audit" in top:
        audit = _build(AuditSection, top["audit"], "audit")
        if not (audit.probes == "all" or (isinstance(audit.probes, int) and audit.probes >= 0)):
            raise ConfigParse("audit.probes must be 'all' or a count", field="audit.probes")

    simulate_section = None
    if "simulate" in top:
        sim = dict(_mapping(top["simulate"], "simulate",
                            ("consent_rate", "ai_fraction_cap", "selection", "n_matters", "human_model",
                             "fractions")))
        fractions = tuple(float(f) for f in (sim.pop("fractions", None) or ()))
        human = _build(HumanModel, sim.pop("human_model", None), "simulate.human_model")
        routing = _build(RoutingConfig, sim, "simulate", human_model=human, seed=seed)
        if stack.trainer is None:
            raise ConfigParse("simulate needs a train section", field="simulate")
        simulate_section = SimulateSection(routing, fractions)

    sweep: List[Stack] = []
    if "sweep" in top:
        body = _mapping(top["sweep"], "sweep", ("stacks",))
        stacks = body.get("stacks") or []
        if not isinstance(stacks, list) or len(stacks) < 2:
            raise ConfigParse("sweep.stacks must list at least 2 stacks", field="sweep.stacks")
        for i, entry in enumerate(stacks):
            path = f"sweep.stacks[{i}]."
            item = _mapping(entry, path[:-1], ("name", "preprocess", "train", "postprocess"))
            train_raw = item.get("train", top.get("train") or {"kind": "logistic"})
            sweep.append(_parse_stack(str(item.get("name", f"stack_{i}")), item.get("preprocess"), train_raw,
                                      item.get("postprocess"), seed, path))

    return PipelineConfig(seed, data, stack, int(metrics.get("k", DEFAULT_K)), audit, simulate_section,
                          tuple(sweep), resolved)


def load_config(path: Union[str, Path], seed: Optional[int] = None) -> PipelineConfig:
    """Read a YAML config, or a manifest written by an earlier run."""

    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigParse(f"cannot read config {p}: {e.strerror or e}", field="--config") from e
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigParse(f"invalid YAML in {p}: {getattr(e, 'problem', e)}",
                          line=mark.line + 1 if mark is not None else None) from e
    if isinstance(raw, dict) and raw.get("tool") == "fairtools" and "config" in raw:
        raw = raw["config"]
    return parse_config(raw if raw is not None else {}, p.parent.resolve(), seed)


# ──────────────── stages ────────────────

@contextmanager
def stage(name: str) -> Iterator[None]:
    logger.debug("stage: %s", name)
    try:
        yield
    except (ConfigParse, StageFailure):
        raise
    except Exception as e:  # noqa: BLE001 - every failure surfaces as a StageFailure
        raise StageFailure(name, e) from e


def ingest(section: DataSection) -> Dataset:
    if section.generate is not None:
        return generate_synthetic(section.generate)
    assert section.csv is not None and section.schema is not None
    return load_csv(section.csv, load_schema(section.schema))


@dataclass
class StackOutcome:
    stack: Stack
    base: Dataset
    repaired: Dataset
    evaluation: Dataset
    plan: Optional[MassagePlan] = None
    solve: Optional[SolveResult] = None
    binning: Optional[Binning] = None
    model: Optional[Model] = None
    scores: Dict[str, np.ndarray] = field(default_factory=dict)
    decisions: Optional[Decisions] = None


def _smote_cells(data: Dataset, section: SmoteSection) -> Tuple[Tuple[str, str], Tuple[str, str]]:
    s = data.schema
    target = section.target or (str(s.unprivileged_value), s.favorable_label)
    reference = section.reference or (s.privileged_value, s.favorable_label)
    return target, reference


def preprocess(stack: Stack, train: Dataset, test: Dataset, seed: int) -> StackOutcome:
    same = test is train
    if stack.preprocess == "massage":
        repaired, plan = massage(train, rounding=stack.rounding)
        logger.info("massage: M=%d (requested %d)", plan.m, plan.requested_m)
        return StackOutcome(stack, train, repaired, test, plan=plan)

    if stack.preprocess == "optimize":
        assert stack.optimize is not None
        section = stack.optimize
        numeric = [f for f in section.features if f in train.schema.numeric_features]
        binning = Binning.fit(train, numeric, section.bins)
        base = binning.transform(train)
        evaluation = base if same else binning.transform(test)
        joint = empirical_joint(base, section.features)
        solved = solve_repair_map(joint, section.repair)
        report = check_repair_map(joint, solved.repair_map, section.repair)
        if not report.ok:
            logger.warning("repair map misses a constraint by %.3g", report.worst_excess)
        repaired = apply_repair(base, solved.repair_map, seed)
        logger.info("optimize: objective %.6g, %d iterations", solved.objective, solved.iterations)
        return StackOutcome(stack, base, repaired, evaluation, solve=solved, binning=binning)

    if stack.preprocess == "smote":
        target, reference = _smote_cells(train, stack.smote)
        count = balance_count(train, target, reference) if stack.smote.count == "balance" else int(stack.smote.count)
        repaired = smote_augment(train, target, count, k=stack.smote.k, seed=seed)
        logger.info("smote: %d synthetic rows for cell %s", count, target)
        return StackOutcome(stack, train, repaired, test)

    return StackOutcome(stack, train, train, test)


def train_and_decide(outcome: StackOutcome) -> None:
    stack = outcome.stack
    if stack.trainer is None:
        return
    with stage("train"):
        outcome.model = train_model(outcome.repaired, stack.trainer)
        scores = predict(outcome.model, outcome.evaluation)
        outcome.scores = {stack.trainer.kind: scores}
    with stage("postprocess"):
        groups = outcome.evaluation.groups()
        if stack.postprocess == "reject_option":
            outcome.decisions = reject_option(scores, groups, stack.reject)
        elif stack.postprocess == "ensemble":
            outcome.scores = {}
            for i, kind in enumerate(stack.ensemble):
                member = train_model(outcome.repaired, replace(stack.trainer, kind=kind))
                name = kind if kind not in outcome.scores else f"{kind}_{i}"
                outcome.scores[name] = predict(member, outcome.evaluation)
            outcome.decisions = ensemble_disagreement([decide(s) for s in outcome.scores.values()], groups)
        else:
            outcome.decisions = plain_decisions(scores)
        if outcome.decisions.interventions:
            logger.info("%s: %d decisions changed", stack.postprocess, outcome.decisions.interventions)


def run_stack(stack: Stack, train: Dataset, test: Dataset, seed: int) -> StackOutcome:
    with stage("preprocess"):
        outcome = preprocess(stack, train, test, seed)
    train_and_decide(outcome)
    return outcome


def _probes(outcome: StackOutcome, section: AuditSection, seed: int) -> List[Union[int, Dict[str, object]]]:
    evaluation = outcome.evaluation
    in_base = evaluation is outcome.base
    ids = evaluation.row_ids
    if section.probes != "all" and int(section.probes) < len(ids):
        rng = np.random.default_rng(seed)
        ids = np.sort(rng.choice(ids, size=int(section.probes), replace=False))
    if in_base:
        return [int(r) for r in ids]
    return [evaluation.record(int(r)) for r in ids]


def run_audit(outcome: StackOutcome, section: AuditSection, seed: int) -> Tuple[list, AuditSummary]:
    trainer = outcome.stack.trainer or TrainerConfig(logistic=LogisticConfig(seed=seed))
    return audit_sweep(outcome.base, outcome.repaired, _probes(outcome, section, seed), section.k, trainer)


# ──────────────── artifacts ────────────────

def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _package_versions() -> Dict[str, str]:
    import tqdm as tqdm_module

    return {
        "fairtools": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "pyyaml": yaml.__version__,
        "tqdm": tqdm_module.__version__,
    }


def write_manifest(out_dir: Path, config: PipelineConfig, artifacts: Sequence[str]) -> Path:
    manifest = {
        "tool": "fairtools",
        "versions": _package_versions(),
        "seed": config.seed,
        "config": config.resolved,
        "artifacts": {name: _sha256(out_dir / name) for name in sorted(artifacts)},
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path


def _stack_summary(stack: Stack) -> Dict[str, object]:
    return {"name": stack.name, "preprocess": stack.preprocess,
            "train": stack.trainer.kind if stack.trainer else None, "postprocess": stack.postprocess}


def run_pipeline(config: PipelineConfig, out_dir: Union[str, Path]) -> List[str]:
    """Run every configured stage and write the artifacts. Returns the artifact file names."""

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: List[str] = []

    with stage("ingest"):
        data = ingest(config.data)
        train, test = train_test_split(data, config.data.test_fraction, config.seed)
        logger.info("ingest: %d rows (%d train, %d evaluation)", len(data), len(train), len(test))

    stack = config.stack
    outcome = run_stack(stack, train, test, config.seed)

    report: Dict[str, object] = {"stack": _stack_summary(stack), "knobs": stack.knobs(), "metric": METRIC_NOTE}
    with stage("metrics"):
        report["dataset"] = dataset_report(outcome.base, config.metrics_k).to_dict()
        report["proxy_leakage"] = proxy_leakage(train)
        if stack.preprocess != "none":
            report["repaired_dataset"] = dataset_report(outcome.repaired, config.metrics_k).to_dict()
        if outcome.decisions is not None and outcome.model is not None:
            model_report = prediction_report(outcome.evaluation, outcome.decisions.decisions, config.metrics_k)
            report["model"] = model_report.to_dict()
            report["model"]["prejudice_index"] = prejudice_index(  # type: ignore[index]
                next(iter(outcome.scores.values())), outcome.evaluation.groups())
            report["model"]["interventions"] = outcome.decisions.interventions  # type: ignore[index]
            write_decisions_csv(out / "decisions.csv", outcome.evaluation.row_ids,
                                outcome.scores if len(outcome.scores) > 1 else next(iter(outcome.scores.values())),
                                outcome.decisions)
            artifacts.append("decisions.csv")

    if outcome.plan is not None:
        write_json(out / "massage_plan.json", outcome.plan.to_dict())
        artifacts.append("massage_plan.json")
    if outcome.solve is not None:
        write_json(out / "repair_map.json", outcome.solve.repair_map.to_dict())
        artifacts.append("repair_map.json")
        report["optimize"] = {"objective": outcome.solve.objective, "max_violation": outcome.solve.max_violation,
                              "lower_bound": outcome.solve.lower_bound, "converged": outcome.solve.converged,
                              "iterations": outcome.solve.iterations,
                              "bins": outcome.binning.to_dict() if outcome.binning else {}}

    if config.audit is not None:
        with stage("audit"):
            findings, summary = run_audit(outcome, config.audit, config.seed)
            write_findings_jsonl(out / "audit_findings.jsonl", findings)
            write_summary_json(out / "audit_summary.json", summary)
            artifacts += ["audit_findings.jsonl", "audit_summary.json"]
            report["audit"] = summary.to_dict()

    if config.simulate is not None:
        with stage("simulate"):
            assert outcome.model is not None
            result = simulate(outcome.evaluation, outcome.model, config.simulate.routing)
            write_result_json(out / "routing_result.json", result)
            write_trace_jsonl(out / "routing_trace.jsonl", result)
            artifacts += ["routing_result.json", "routing_trace.jsonl"]
            report["routing"] = result.aggregates()
            report["knobs"]["f"] = config.simulate.routing.ai_fraction_cap  # type: ignore[index]
            if config.simulate.fractions:
                sweep_ai_fraction(outcome.evaluation, outcome.model, config.simulate.routing,
                                  config.simulate.fractions, out / "routing_sweep.csv")
                artifacts.append("routing_sweep.csv")

    write_json(out / "report.json", report)
    artifacts.append("report.json")
    write_manifest(out, config, artifacts)
    return artifacts + ["manifest.json"]


def compare_interventions(config: PipelineConfig, out_dir: Union[str, Path]) -> pd.DataFrame:
    """One comparison row per stack, all over the same data split and seed."""

    if len(config.sweep) < 2:
        raise ConfigParse("sweep.stacks must list at least 2 stacks", field="sweep.stacks")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with stage("ingest"):
        data = ingest(config.data)
        train, test = train_test_split(data, config.data.test_fraction, config.seed)

    audit_section = config.audit or AuditSection(probes=SWEEP_AUDIT_PROBES)
    rows = []
    for stack in tqdm(config.sweep, desc="stacks", disable=not logger.isEnabledFor(logging.DEBUG)):
        outcome = run_stack(stack, train, test, config.seed)
        assert outcome.decisions is not None
        with stage("metrics"):
            m = prediction_report(outcome.evaluation, outcome.decisions.decisions, config.metrics_k)
        with stage("audit"):
            _, summary = run_audit(outcome, audit_section, config.seed)
        rows.append({
            "stack": stack.name,
            "preprocess": stack.preprocess,
            "train": stack.trainer.kind if stack.trainer else "",
            "postprocess": stack.postprocess,
            "accuracy": m.accuracy,
            "disparate_impact_ratio": m.disparate_impact_ratio,
            "statistical_parity_difference": m.statistical_parity_difference,
            "consistency": m.consistency,
            "audit_decision_change_rate": summary.decision_change_rate,
            "knobs": json.dumps(stack.knobs(), sort_keys=True, default=_json_default),
        })
    table = pd.DataFrame(rows)
    table.to_csv(out / "comparison.csv", index=False, lineterminator="\n", float_format="%.12g")
    write_manifest(out, config, ["comparison.csv"])
    return table


# ──────────────── CLI ────────────────

def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="fairtools", description="fairtools: run a fairness intervention experiment")
    parser.add_argument("--config", default=os.getenv("FAIRTOOLS_CONFIG"),
                        help="YAML experiment config, or a manifest.json from an earlier run")
    parser.add_argument("--seed", type=int, default=os.getenv("FAIRTOOLS_SEED"),
                        help="Override the config seed")
    parser.add_argument("--out-dir", default=os.getenv("FAIRTOOLS_OUT_DIR", "out"),
                        help="Directory for reports (default: out)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging (also FAIRTOOLS_DEBUG=1)")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.verbose)
    try:
        if not args.config:
            raise ConfigParse("no config given (--config or FAIRTOOLS_CONFIG)", field="--config")
        seed = None if args.seed is None else int(args.seed)
        config = load_config(args.config, seed)
        if config.sweep:
            compare_interventions(config, args.out_dir)
        else:
            run_pipeline(config, args.out_dir)
    except FairtoolsError as e:
        print(e.to_line(), file=sys.stderr)
        return e.exit_code
    if config.stack.optimize is not None or any(s.optimize is not None for s in config.sweep):
        logger.info("note: %s", C_TUNING_NOTE)
    logger.info("done -> %s", Path(args.out_dir).resolve())
    return 0
