from __future__ import annotations

import json
import logging

import numpy as np
import pandas as pd
import pytest

from fairtools.classifiers import (
    MAIN_PARAMS,
    AdversarialConfig,
    FeatureEncoder,
    LogisticConfig,
    LogisticModel,
    PrejudiceConfig,
    TrainerConfig,
    adversarial_main_objective,
    adversary_accuracy,
    decide,
    fit_adversarial,
    fit_logistic,
    fit_prejudice_remover,
    init_adversarial_params,
    logistic_objective,
    model_to_json,
    predict,
    prejudice_index,
    sigmoid,
    train_model,
)
from fairtools.data_model import (
    CATEGORICAL,
    FEATURE,
    LABEL,
    NUMERIC,
    PROTECTED,
    Column,
    Dataset,
    GeneratorConfig,
    Schema,
    generate_synthetic,
    standard_config,
)
from fairtools.errors import EncodingMismatch, InvalidConfig, SingleClassDataset, SingleGroupDataset


def _schema(*features: Column) -> Schema:
    return Schema((Column("z", CATEGORICAL, PROTECTED),) + features + (Column("y", CATEGORICAL, LABEL),),
                  favorable_label="1", privileged_value="1", unfavorable_label="0", unprivileged_value="0")


def _toy(x1, x2, y, z, f=None) -> Dataset:
    cols = [Column("x1", NUMERIC, FEATURE), Column("x2", NUMERIC, FEATURE)]
    frame = {"z": [str(v) for v in z], "x1": x1, "x2": x2, "y": [str(v) for v in y]}
    if f is not None:
        cols.append(Column("f", CATEGORICAL, FEATURE))
        frame["f"] = f
    return Dataset(_schema(*cols), pd.DataFrame(frame))


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def _finite_difference(fn, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e.flat[i] = step
        grad.flat[i] = (fn(theta + e) - fn(theta - e)) / (2 * step)
    return grad


def _ten_rows(seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(10, 3))
    y = np.array([0, 1, 1, 0, 1, 0, 0, 1, 1, 0], dtype=float)
    z = np.array([0, 0, 0, 1, 1, 1, 0, 1, 0, 1])
    return x, y, z, rng


def test_logistic_gradient_matches_finite_differences() -> None:
    x, y, _, rng = _ten_rows()
    theta = rng.normal(size=4)
    _, grad = logistic_objective(theta, x, y, l2=0.1)
    numeric = _finite_difference(lambda t: logistic_objective(t, x, y, l2=0.1)[0], theta)
    assert _relative_error(grad, numeric) < 1e-5


def test_prejudice_gradient_matches_finite_differences() -> None:
    x, y, z, rng = _ten_rows(1)
    theta = rng.normal(size=4) * 0.5
    _, grad = logistic_objective(theta, x, y, eta=2.0, groups=z)
    numeric = _finite_difference(lambda t: logistic_objective(t, x, y, eta=2.0, groups=z)[0], theta)
    assert _relative_error(grad, numeric) < 1e-4


def test_adversarial_main_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(2)
    x = rng.normal(size=(8, 2))
    y = np.array([0, 1, 1, 0, 1, 0, 0, 1], dtype=float)
    z = np.array([1, 1, 0, 0, 1, 0, 1, 0], dtype=float)
    params = init_adversarial_params(2, AdversarialConfig(hidden=3, init_scale=0.8, seed=4))
    params["c0"] = np.asarray(0.3)
    _, grads = adversarial_main_objective(params, x, y, z, adversary_weight=0.7)
    for name in MAIN_PARAMS:
        def f(v: np.ndarray, name: str = name) -> float:
            trial = dict(params)
            trial[name] = v
            return adversarial_main_objective(trial, x, y, z, 0.7)[0]

        numeric = _finite_difference(f, np.array(params[name], dtype=float))
        assert _relative_error(np.asarray(grads[name]), numeric) < 1e-4, name


def test_logistic_loss_is_convex() -> None:
    x, y, _, rng = _ten_rows(3)
    for _ in range(20):
        a, b = rng.normal(size=4) * 3, rng.normal(size=4) * 3
        mid = logistic_objective((a + b) / 2, x, y)[0]
        assert mid <= (logistic_objective(a, x, y)[0] + logistic_objective(b, x, y)[0]) / 2 + 1e-12


def test_separable_data_is_fit_exactly() -> None:
    rng = np.random.default_rng(0)
    x1 = np.concatenate([rng.uniform(1, 3, 20), rng.uniform(-3, -1, 20)])
    x2 = rng.normal(size=40)
    y = [1] * 20 + [0] * 20
    z = [i % 2 for i in range(40)]
    data = _toy(x1, x2, y, z)
    model = fit_logistic(data)
    assert (decide(predict(model, data)) == data.labels()).all()


def test_zero_epochs_scores_one_half() -> None:
    data = _toy([0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [0, 1, 1], [0, 1, 0])
    model = fit_logistic(data, LogisticConfig(epochs=0))
    assert predict(model, data).tolist() == [0.5, 0.5, 0.5]


def test_losses_non_increasing_and_deterministic() -> None:
    data = generate_synthetic(standard_config(n_rows=300))
    a = fit_logistic(data, LogisticConfig(epochs=200, learning_rate=5.0))
    b = fit_logistic(data, LogisticConfig(epochs=200, learning_rate=5.0))
    assert a.losses == b.losses
    assert all(later <= earlier + 1e-12 for earlier, later in zip(a.losses, a.losses[1:]))


def test_hand_set_weights_closed_form() -> None:
    encoder = FeatureEncoder(("x1",), np.zeros(1), np.ones(1), (), ())
    model = LogisticModel(encoder, np.array([2.0]), -0.3, LogisticConfig())
    data = _toy([0.0, 0.0], [5.0, -5.0], [0, 1], [0, 1])
    assert predict(model, data).tolist() == pytest.approx([float(sigmoid(np.array(-0.3)))] * 2)


def test_predict_is_pure() -> None:
    data = _toy([0.5, 0.5, -1.0, 2.0], [1.0, 1.0, 0.0, 3.0], [0, 0, 1, 1], [0, 1, 0, 1])
    model = fit_logistic(data, LogisticConfig(epochs=50))
    scores = predict(model, data)
    assert scores[0] == scores[1]
    assert np.array_equal(scores, predict(model, data))


def test_unseen_level_and_missing_column(caplog: pytest.LogCaptureFixture) -> None:
    train = _toy([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 0.0, 1.0], [0, 0, 1, 1], [0, 1, 0, 1], f=["a", "b", "a", "b"])
    model = fit_logistic(train, LogisticConfig(epochs=30))
    probe = _toy([1.0], [1.0], [0], [0], f=["c"])
    with caplog.at_level(logging.WARNING, logger="fairtools"):
        scores = predict(model, probe)
    assert "unseen level" in caplog.text
    x = model.encoder.transform(probe)
    assert x[0, 2:].tolist() == [0.0, 0.0]
    assert scores[0] == pytest.approx(float(sigmoid(x @ model.weights + model.intercept)[0]))

    without_f = _toy([1.0], [1.0], [0], [0])
    with pytest.raises(EncodingMismatch):
        predict(model, without_f)


def test_single_class_and_group() -> None:
    with pytest.raises(SingleClassDataset):
        fit_logistic(_toy([0.0, 1.0], [1.0, 0.0], [1, 1], [0, 1]))
    with pytest.raises(SingleGroupDataset):
        fit_adversarial(_toy([0.0, 1.0], [1.0, 0.0], [0, 1], [1, 1]), AdversarialConfig(epochs=1))


def test_prejudice_index_properties() -> None:
    assert prejudice_index([0.2, 0.8, 0.2, 0.8], [0, 0, 1, 1]) < 1e-12
    rng = np.random.default_rng(5)
    for _ in range(50):
        scores = rng.uniform(0, 1, 30)
        groups = rng.integers(0, 2, 30)
        assert prejudice_index(scores, groups) >= -1e-8
    assert prejudice_index([0.9, 0.9, 0.1, 0.1], [1, 1, 0, 0]) > 0.1


def test_eta_zero_matches_plain_logistic() -> None:
    data = generate_synthetic(standard_config(n_rows=300))
    config = LogisticConfig(epochs=100)
    plain = fit_logistic(data, config)
    zero = fit_prejudice_remover(data, PrejudiceConfig(eta=0.0), config)
    assert plain.losses == zero.losses
    assert np.array_equal(plain.weights, zero.weights)


def test_group_independent_features_give_zero_index() -> None:
    # every (feature, label) row appears once in each group
    x1 = [0.0, 1.0, 2.0, 3.0, 0.5, 2.5] * 2
    x2 = [1.0, 0.0, 1.0, 0.0, 0.3, 0.7] * 2
    y = [0, 0, 1, 1, 0, 1] * 2
    z = [0] * 6 + [1] * 6
    data = _toy(x1, x2, y, z)
    model = fit_prejudice_remover(data, PrejudiceConfig(eta=1.0), LogisticConfig(epochs=100))
    assert prejudice_index(predict(model, data), data.groups()) < 1e-6


def test_prejudice_index_falls_with_eta() -> None:
    data = generate_synthetic(standard_config())
    values = []
    for eta in (0.0, 1.0, 10.0):
        model = fit_prejudice_remover(data, PrejudiceConfig(eta=eta))
        values.append(prejudice_index(predict(model, data), data.groups()))
    assert values[2] <= values[1] <= values[0] + 1e-6


def _proxy_data() -> Dataset:
    return generate_synthetic(GeneratorConfig(n_rows=600, base_positive_rate=0.6, bias_strength=0.3,
                                              proxy_correlation=1.0, noise_features=0, numeric_features=1,
                                              seed=3))


def test_adversary_reads_group_without_penalty() -> None:
    data = _proxy_data()
    z = data.groups()
    baseline = max(z.mean(), 1 - z.mean())
    model = fit_adversarial(data, AdversarialConfig(adversary_weight=0.0, adversary_steps=5))
    assert adversary_accuracy(model, data) >= baseline + 0.2


def test_adversary_near_baseline_with_penalty() -> None:
    data = _proxy_data()
    z = data.groups()
    baseline = max(z.mean(), 1 - z.mean())
    model = fit_adversarial(data, AdversarialConfig(adversary_weight=1.0, adversary_steps=5))
    assert abs(adversary_accuracy(model, data) - baseline) <= 0.05


def test_zero_lambda_decouples_adversary() -> None:
    data = _proxy_data()
    a = fit_adversarial(data, AdversarialConfig(adversary_weight=0.0, epochs=50, adversary_steps=1))
    b = fit_adversarial(data, AdversarialConfig(adversary_weight=0.0, epochs=50, adversary_steps=3,
                                                adversary_learning_rate=0.1))
    for name in MAIN_PARAMS:
        assert np.array_equal(a.params[name], b.params[name])
    assert [l[0] for l in a.losses] == [l[0] for l in b.losses]


def test_train_model_dispatch_and_export() -> None:
    data = generate_synthetic(standard_config(n_rows=200))
    for kind in ("logistic", "prejudice_remover", "adversarial"):
        config = TrainerConfig(kind=kind, logistic=LogisticConfig(epochs=20),
                               adversarial=AdversarialConfig(epochs=20))
        model = train_model(data, config)
        assert model.kind == kind
        scores = predict(model, data)
        assert ((scores >= 0) & (scores <= 1)).all()
        d = json.loads(model_to_json(model, data))
        assert d["kind"] == kind
        assert d["train_prejudice_index"] >= -1e-8
    with pytest.raises(InvalidConfig):
        TrainerConfig(kind="forest")
