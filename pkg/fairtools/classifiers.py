"""From-scratch scorers: logistic regression, the prejudice remover and the adversarial debiaser.

All training is full-batch gradient descent from a fixed initialization, so a
(data, config, seed) triple always yields the same per-epoch losses.

Prejudice index (PI) is the mutual information between the predicted outcome
and the protected group, estimated from soft probabilities:

    A_z = sum of p_i over group z / n      (P(y^ = 1, z))
    B_z = share of group z - A_z           (P(y^ = 0, z))
    PI  = sum_z A_z ln(A_z / (M1 P(z))) + B_z ln(B_z / (M0 P(z)))

with M1 = A_0 + A_1, M0 = 1 - M1 and every probability clamped at a floor.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .data_model import Dataset
from .errors import EncodingMismatch, InvalidConfig, NonFiniteLoss, SingleClassDataset, SingleGroupDataset

logger = logging.getLogger(__name__)

PI_FLOOR = 1e-9
KINDS = ("logistic", "prejudice_remover", "adversarial")


def sigmoid(s: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def _nll(s: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, s) - y * s))


# ──────────────── encoding ────────────────

@dataclass(frozen=True, eq=False)
class FeatureEncoder:
    """One-hot categorical columns, standardized numeric columns; frozen at fit time."""

    numeric: Tuple[str, ...]
    means: np.ndarray
    scales: np.ndarray
    categorical: Tuple[str, ...]
    levels: Tuple[Tuple[str, ...], ...]

    @classmethod
    def fit(cls, data: Dataset, include_protected: bool = False) -> "FeatureEncoder":
        columns = list(data.schema.feature_names)
        if include_protected:
            columns.append(data.schema.protected)
        kinds = {c.name: c.kind for c in data.schema.columns}
        numeric = tuple(c for c in columns if kinds[c] == "numeric")
        categorical = tuple(c for c in columns if kinds[c] == "categorical")
        raw = data.frame[list(numeric)].to_numpy(dtype=np.float64) if numeric else np.zeros((len(data), 0))
        means = raw.mean(axis=0) if numeric else np.zeros(0)
        scales = raw.std(axis=0) if numeric else np.zeros(0)
        scales = np.where(scales > 0, scales, 1.0)
        levels = tuple(tuple(sorted(set(data.frame[c].tolist()))) for c in categorical)
        return cls(numeric, means, scales, categorical, levels)

    @property
    def width(self) -> int:
        return len(self.numeric) + sum(len(v) for v in self.levels)

    def names(self) -> List[str]:
        out = list(self.numeric)
        for col, values in zip(self.categorical, self.levels):
            out += [f"{col}={v}" for v in values]
        return out

    def transform(self, data: Dataset) -> np.ndarray:
        frame = data.frame
        missing = [c for c in self.numeric + self.categorical if c not in frame.columns]
        if missing:
            raise EncodingMismatch(f"column {missing[0]!r} was seen at fit time but is missing", column=missing[0])
        parts = []
        if self.numeric:
            parts.append((frame[list(self.numeric)].to_numpy(dtype=np.float64) - self.means) / self.scales)
        for col, values in zip(self.categorical, self.levels):
            raw = frame[col].astype(str).to_numpy()
            unseen = sorted(set(raw) - set(values))
            if unseen:
                logger.warning("column %r: unseen level(s) %s encoded as all zeros", col, unseen)
            parts.append((raw[:, None] == np.asarray(values)[None, :]).astype(np.float64))
        return np.hstack(parts) if parts else np.zeros((len(frame), 0))

    def to_dict(self) -> Dict[str, object]:
        return {
            "numeric": {c: {"mean": float(m), "scale": float(s)}
                        for c, m, s in zip(self.numeric, self.means, self.scales)},
            "categorical": {c: list(v) for c, v in zip(self.categorical, self.levels)},
        }


# ──────────────── configs ────────────────

@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 0.5
    epochs: int = 500
    l2: float = 0.0
    seed: int = 0
    include_protected: bool = False

    def __post_init__(self) -> None:
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise InvalidConfig("learning_rate must be a positive number")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if self.l2 < 0:
            raise InvalidConfig("l2 must be >= 0")


@dataclass(frozen=True)
class PrejudiceConfig:
    eta: float = 1.0
    floor: float = PI_FLOOR

    def __post_init__(self) -> None:
        if not math.isfinite(self.eta) or self.eta < 0:
            raise InvalidConfig(f"eta must be finite and >= 0, got {self.eta}")
        if not (0 < self.floor < 0.5):
            raise InvalidConfig("floor must be in (0, 0.5)")


@dataclass(frozen=True)
class AdversarialConfig:
    hidden: int = 8
    adversary_weight: float = 1.0
    learning_rate: float = 0.5
    adversary_learning_rate: Optional[float] = None
    adversary_steps: int = 1
    epochs: int = 500
    init_scale: float = 0.5
    seed: int = 0
    include_protected: bool = False

    def __post_init__(self) -> None:
        if self.hidden < 1:
            raise InvalidConfig("hidden must be >= 1")
        if not math.isfinite(self.adversary_weight) or self.adversary_weight < 0:
            raise InvalidConfig("adversary_weight (lambda) must be finite and >= 0")
        if self.learning_rate <= 0 or (self.adversary_learning_rate is not None and self.adversary_learning_rate <= 0):
            raise InvalidConfig("learning rates must be > 0")
        if self.adversary_steps < 1 or self.epochs < 0:
            raise InvalidConfig("adversary_steps must be >= 1 and epochs >= 0")
        if self.init_scale <= 0:
            raise InvalidConfig("init_scale must be > 0")


# ──────────────── models ────────────────

@dataclass(frozen=True, eq=False)
class LogisticModel:
    encoder: FeatureEncoder
    weights: np.ndarray
    intercept: float
    config: LogisticConfig
    losses: Tuple[float, ...] = ()
    eta: Optional[float] = None

    @property
    def kind(self) -> str:
        return "logistic" if self.eta is None else "prejudice_remover"


@dataclass(frozen=True, eq=False)
class AdversarialModel:
    encoder: FeatureEncoder
    params: Dict[str, np.ndarray]
    config: AdversarialConfig
    losses: Tuple[Tuple[float, float], ...] = ()

    kind = "adversarial"


Model = Union[LogisticModel, AdversarialModel]


def _check_labels(data: Dataset) -> np.ndarray:
    y = data.labels()
    if len(y) == 0 or y.min() == y.max():
        raise SingleClassDataset("training needs both label values present")
    return y.astype(np.float64)


def _descend(fn: Callable[[np.ndarray], Tuple[float, np.ndarray]], theta: np.ndarray,
             learning_rate: float, epochs: int, what: str) -> Tuple[np.ndarray, List[float]]:
    """Full-batch gradient descent; halves the step whenever the loss would rise."""

    lr = learning_rate
    loss, grad = fn(theta)
    if not math.isfinite(loss):
        raise NonFiniteLoss(0)
    losses = [loss]
    for epoch in range(1, epochs + 1):
        while True:
            candidate = theta - lr * grad
            cand_loss, cand_grad = fn(candidate)
            if not math.isfinite(cand_loss) or not np.isfinite(cand_grad).all():
                raise NonFiniteLoss(epoch)
            if cand_loss <= loss + 1e-12 or lr < 1e-12:
                break
            lr *= 0.5
            logger.debug("%s: loss rose at epoch %d, learning rate halved to %.3g", what, epoch, lr)
        theta, loss, grad = candidate, cand_loss, cand_grad
        losses.append(loss)
    return theta, losses


# ──────────────── logistic regression and the prejudice remover ────────────────

def _xlogx(v: float, floor: float) -> float:
    v = max(v, floor)
    return v * math.log(v)


def _dxlogx(v: float, floor: float) -> float:
    return math.log(v) + 1.0 if v > floor else 0.0


def _prejudice_terms(p: np.ndarray, groups: np.ndarray, floor: float) -> Tuple[float, np.ndarray]:
    """PI and dPI/dA_z for both groups."""

    n = len(p)
    value = 0.0
    grad_a = np.zeros(2)
    a = np.array([p[groups == z].sum() / n for z in (0, 1)])
    share = np.array([(groups == z).sum() / n for z in (0, 1)])
    m1 = float(a.sum())
    m0 = 1.0 - m1
    for z in (0, 1):
        if share[z] == 0:
            continue
        b = share[z] - a[z]
        value += _xlogx(a[z], floor) + _xlogx(b, floor) - _xlogx(share[z], floor)
        grad_a[z] = _dxlogx(a[z], floor) - _dxlogx(b, floor) - _dxlogx(m1, floor) + _dxlogx(m0, floor)
    value -= _xlogx(m1, floor) + _xlogx(m0, floor)
    return value, grad_a


def prejudice_index(scores: Sequence[float], groups: Sequence[int], floor: float = PI_FLOOR) -> float:
    p = np.asarray(scores, dtype=np.float64)
    g = np.asarray(groups, dtype=np.int64)
    return _prejudice_terms(p, g, floor)[0]


def logistic_objective(theta: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float = 0.0,
                       eta: float = 0.0, groups: Optional[np.ndarray] = None,
                       floor: float = PI_FLOOR) -> Tuple[float, np.ndarray]:
    """Mean NLL + l2/2 |w|^2 (+ eta * PI); ``theta`` is the weights with the intercept last."""

    w, b = theta[:-1], theta[-1]
    s = x @ w + b
    p = sigmoid(s)
    n = len(y)
    loss = _nll(s, y) + 0.5 * l2 * float(w @ w)
    r = (p - y) / n
    grad = np.concatenate([x.T @ r + l2 * w, [r.sum()]])
    if eta:
        if groups is None:
            raise InvalidConfig("the prejudice remover needs the protected groups")
        value, grad_a = _prejudice_terms(p, groups, floor)
        loss += eta * value
        coef = eta * grad_a[groups] * p * (1.0 - p) / n
        grad = grad + np.concatenate([x.T @ coef, [coef.sum()]])
    return loss, grad


def fit_logistic(data: Dataset, config: LogisticConfig = LogisticConfig()) -> LogisticModel:
    y = _check_labels(data)
    encoder = FeatureEncoder.fit(data, config.include_protected)
    x = encoder.transform(data)
    theta, losses = _descend(lambda t: logistic_objective(t, x, y, config.l2),
                             np.zeros(encoder.width + 1), config.learning_rate, config.epochs, "logistic")
    return LogisticModel(encoder, theta[:-1], float(theta[-1]), config, tuple(losses))


def fit_prejudice_remover(data: Dataset, prejudice: PrejudiceConfig = PrejudiceConfig(),
                          config: LogisticConfig = LogisticConfig()) -> LogisticModel:
    y = _check_labels(data)
    encoder = FeatureEncoder.fit(data, include_protected=False)
    x = encoder.transform(data)
    groups = data.groups()
    theta, losses = _descend(
        lambda t: logistic_objective(t, x, y, config.l2, prejudice.eta, groups, prejudice.floor),
        np.zeros(encoder.width + 1), config.learning_rate, config.epochs, "prejudice remover")
    return LogisticModel(encoder, theta[:-1], float(theta[-1]), config, tuple(losses), eta=prejudice.eta)


# ──────────────── adversarial debiasing ────────────────

MAIN_PARAMS = ("W1", "b1", "a", "a0")
ADVERSARY_PARAMS = ("c", "c0")


def init_adversarial_params(width: int, config: AdversarialConfig) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    h, s = config.hidden, config.init_scale
    return {
        "W1": rng.uniform(-s, s, size=(width, h)),
        "b1": np.zeros(h),
        "a": rng.uniform(-s, s, size=h),
        "a0": np.zeros(()),
        "c": rng.uniform(-s, s, size=h),
        "c0": np.zeros(()),
    }


def _hidden(params: Dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    return np.tanh(x @ params["W1"] + params["b1"])


def adversary_objective(params: Dict[str, np.ndarray], x: np.ndarray,
                        z: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """Head B's NLL on the protected group, with gradients for B only."""

    hidden = _hidden(params, x)
    s_b = hidden @ params["c"] + params["c0"]
    r = (sigmoid(s_b) - z) / len(z)
    return _nll(s_b, z), {"c": hidden.T @ r, "c0": np.asarray(r.sum())}


def adversarial_main_objective(params: Dict[str, np.ndarray], x: np.ndarray, y: np.ndarray, z: np.ndarray,
                               adversary_weight: float) -> Tuple[float, Dict[str, np.ndarray]]:
    """NLL_A - lambda * NLL_B, with gradients for the shared layer and head A."""

    n = len(y)
    hidden = _hidden(params, x)
    s_a = hidden @ params["a"] + params["a0"]
    s_b = hidden @ params["c"] + params["c0"]
    value = _nll(s_a, y) - adversary_weight * _nll(s_b, z)
    r_a = (sigmoid(s_a) - y) / n
    r_b = (sigmoid(s_b) - z) / n
    d_hidden = r_a[:, None] * params["a"][None, :] - adversary_weight * r_b[:, None] * params["c"][None, :]
    d_pre = d_hidden * (1.0 - hidden ** 2)
    grads = {
        "W1": x.T @ d_pre,
        "b1": d_pre.sum(axis=0),
        "a": hidden.T @ r_a,
        "a0": np.asarray(r_a.sum()),
    }
    return value, grads


def fit_adversarial(data: Dataset, config: AdversarialConfig = AdversarialConfig()) -> AdversarialModel:
    y = _check_labels(data)
    z = data.groups().astype(np.float64)
    if z.min() == z.max():
        raise SingleGroupDataset("adversarial debiasing needs both protected groups present")
    encoder = FeatureEncoder.fit(data, config.include_protected)
    x = encoder.transform(data)
    params = init_adversarial_params(encoder.width, config)
    lr_b = config.adversary_learning_rate or config.learning_rate

    losses: List[Tuple[float, float]] = []
    for epoch in range(1, config.epochs + 1):
        for _ in range(config.adversary_steps):
            _, grads = adversary_objective(params, x, z)
            for name in ADVERSARY_PARAMS:
                params[name] = params[name] - lr_b * grads[name]
        value, grads = adversarial_main_objective(params, x, y, z, config.adversary_weight)
        if not math.isfinite(value):
            raise NonFiniteLoss(epoch)
        for name in MAIN_PARAMS:
            params[name] = params[name] - config.learning_rate * grads[name]
        hidden = _hidden(params, x)
        nll_a = _nll(hidden @ params["a"] + params["a0"], y)
        nll_b = _nll(hidden @ params["c"] + params["c0"], z)
        if not (math.isfinite(nll_a) and math.isfinite(nll_b)):
            raise NonFiniteLoss(epoch)
        losses.append((nll_a, nll_b))
    return AdversarialModel(encoder, params, config, tuple(losses))


def adversary_accuracy(model: AdversarialModel, data: Dataset) -> float:
    """How often head B recovers the protected group from the shared representation."""

    hidden = _hidden(model.params, model.encoder.transform(data))
    guess = sigmoid(hidden @ model.params["c"] + model.params["c0"]) >= 0.5
    return float((guess.astype(np.int64) == data.groups()).mean())


# ──────────────── shared surface ────────────────

def predict(model: Model, data: Dataset) -> np.ndarray:
    x = model.encoder.transform(data)
    if isinstance(model, AdversarialModel):
        hidden = _hidden(model.params, x)
        return sigmoid(hidden @ model.params["a"] + model.params["a0"])
    return sigmoid(x @ model.weights + model.intercept)


def decide(scores: Sequence[float]) -> np.ndarray:
    return (np.asarray(scores, dtype=np.float64) >= 0.5).astype(np.int64)


@dataclass(frozen=True)
class TrainerConfig:
    kind: str = "logistic"
    logistic: LogisticConfig = field(default_factory=LogisticConfig)
    prejudice: PrejudiceConfig = field(default_factory=PrejudiceConfig)
    adversarial: AdversarialConfig = field(default_factory=AdversarialConfig)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidConfig(f"trainer kind must be one of {KINDS}, got {self.kind!r}")

    def knobs(self) -> Dict[str, object]:
        if self.kind == "prejudice_remover":
            return {"eta": self.prejudice.eta}
        if self.kind == "adversarial":
            return {"lambda": self.adversarial.adversary_weight}
        return {}


def train_model(data: Dataset, config: TrainerConfig = TrainerConfig()) -> Model:
    logger.debug("training %s on %d rows", config.kind, len(data))
    if config.kind == "prejudice_remover":
        return fit_prejudice_remover(data, config.prejudice, config.logistic)
    if config.kind == "adversarial":
        return fit_adversarial(data, config.adversarial)
    return fit_logistic(data, config.logistic)


def model_to_dict(model: Model, data: Optional[Dataset] = None) -> Dict[str, object]:
    out: Dict[str, object] = {"kind": model.kind, "encoding": model.encoder.to_dict(),
                              "config": asdict(model.config)}
    if isinstance(model, AdversarialModel):
        out["params"] = {k: np.asarray(v).tolist() for k, v in sorted(model.params.items())}
        out["final_losses"] = list(model.losses[-1]) if model.losses else None
    else:
        out["weights"] = dict(zip(model.encoder.names(), model.weights.tolist()))
        out["intercept"] = model.intercept
        out["final_loss"] = model.losses[-1] if model.losses else None
        if model.eta is not None:
            out["eta"] = model.eta
    if data is not None:
        scores = predict(model, data)
        out["train_prejudice_index"] = prejudice_index(scores, data.groups())
    return out


def model_to_json(model: Model, data: Optional[Dataset] = None) -> str:
    return json.dumps(model_to_dict(model, data), sort_keys=True, indent=2)
