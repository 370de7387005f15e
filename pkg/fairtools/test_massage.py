from __future__ import annotations

import itertools
import json

import numpy as np
import pandas as pd
import pytest

from fairtools.data_model import CATEGORICAL, FEATURE, LABEL, PROTECTED, Column, Dataset, Schema, generate_synthetic, standard_config
from fairtools.errors import EmptyGroup, SingleClassDataset
from fairtools.massage import compute_m, flip_candidates, massage, rank_samples, required_flips
from fairtools.metrics import disparate_impact


def _data(rows) -> Dataset:
    """rows of (z, f, y) with "1" privileged / favorable."""
    schema = Schema(
        (Column("z", CATEGORICAL, PROTECTED), Column("f", CATEGORICAL, FEATURE), Column("y", CATEGORICAL, LABEL)),
        favorable_label="1", privileged_value="1", unfavorable_label="0", unprivileged_value="0",
    )
    return Dataset(schema, pd.DataFrame(rows, columns=["z", "f", "y"]))


def _groups(pos_priv: int, n_priv: int, pos_unpriv: int, n_unpriv: int) -> Dataset:
    rows = []
    for i in range(n_priv):
        rows.append(("1", "abc"[i % 3], "1" if i < pos_priv else "0"))
    for i in range(n_unpriv):
        rows.append(("0", "abc"[i % 3], "1" if i < pos_unpriv else "0"))
    return _data(rows)


def test_required_flips() -> None:
    assert required_flips(6, 10, 2, 10) == 2
    assert required_flips(5, 10, 4, 10) == 1
    assert required_flips(5, 10, 4, 10, rounding="nearest") == 1
    assert required_flips(5, 10, 5, 10) == 0
    assert required_flips(2, 10, 6, 10) == 0


def test_rank_samples_closed_form() -> None:
    data = _data([("1", "a", "1"), ("0", "a", "1"), ("1", "b", "0"), ("0", "b", "0")])
    scores = rank_samples(data)
    # P(a|+) = 3/4, P(a|-) = 1/4 with alpha = 1 over two levels
    assert scores.tolist() == pytest.approx([0.75, 0.75, 0.25, 0.25], abs=1e-12)


def test_rank_samples_hand_table() -> None:
    rows = [("1", "a", "1"), ("1", "a", "1"), ("0", "b", "1"),
            ("0", "a", "0"), ("1", "b", "0"), ("0", "c", "0")]
    scores = rank_samples(_data(rows))
    # three levels, three positives, three negatives
    p_a = (3 / 6) / (3 / 6 + 2 / 6)
    p_b = (2 / 6) / (2 / 6 + 2 / 6)
    p_c = (1 / 6) / (1 / 6 + 2 / 6)
    assert scores.tolist() == pytest.approx([p_a, p_a, p_b, p_a, p_b, p_c], abs=1e-12)


def test_rank_samples_ignores_protected_column() -> None:
    rows = [("1", "a", "1"), ("0", "a", "1"), ("1", "a", "0"), ("0", "a", "0")]
    scores = rank_samples(_data(rows))
    assert scores.tolist() == pytest.approx([0.5] * 4, abs=1e-12)


def test_rank_samples_single_class() -> None:
    with pytest.raises(SingleClassDataset):
        rank_samples(_data([("1", "a", "1"), ("0", "b", "1")]))


def test_compute_m_examples() -> None:
    assert compute_m(_groups(5, 10, 5, 10)) == 0
    assert compute_m(_groups(6, 10, 2, 10)) == 2
    assert compute_m(_groups(5, 10, 4, 10)) == 1
    with pytest.raises(EmptyGroup):
        compute_m(_data([("1", "a", "1"), ("1", "b", "0")]))


def test_massage_equalizes_rates() -> None:
    data = _groups(6, 10, 2, 10)
    repaired, plan = massage(data)
    assert plan.m == 2
    parity = disparate_impact(repaired.labels(), repaired.groups())
    assert parity.ratio == 1.0
    assert parity.rates == (0.4, 0.4)


def test_massage_overshoots_by_integrality() -> None:
    repaired, plan = massage(_groups(5, 10, 4, 10))
    assert plan.m == 1
    parity = disparate_impact(repaired.labels(), repaired.groups())
    assert parity.rates == (0.5, 0.4)


def test_massage_fair_data_is_untouched() -> None:
    data = _groups(5, 10, 5, 10)
    repaired, plan = massage(data)
    assert repaired.equals(data)
    assert plan.to_dict() == {"m": 0, "promotions": [], "demotions": []}


def test_plan_invariants_on_standard_data() -> None:
    data = generate_synthetic(standard_config())
    repaired, plan = massage(data)
    promo, demo = flip_candidates(data)
    assert len(plan.promotions) == len(plan.demotions) == plan.m > 0
    assert set(plan.promotions) <= set(promo)
    assert set(plan.demotions) <= set(demo)
    promo_scores = [plan.scores[r] for r in plan.promotions]
    demo_scores = [plan.scores[r] for r in plan.demotions]
    assert all(a >= b for a, b in zip(promo_scores, promo_scores[1:]))
    assert all(a <= b for a, b in zip(demo_scores, demo_scores[1:]))

    # only labels change, only at planned rows
    features = data.schema.feature_names + [data.schema.protected]
    pd.testing.assert_frame_equal(repaired.frame[features], data.frame[features])
    changed = set(data.row_ids[data.labels() != repaired.labels()].tolist())
    assert changed == set(plan.promotions) | set(plan.demotions)
    up = int(((data.labels() == 0) & (repaired.labels() == 1)).sum())
    down = int(((data.labels() == 1) & (repaired.labels() == 0)).sum())
    assert up == down == plan.m
    assert repaired.labels().sum() == data.labels().sum()

    assert json.loads(plan.to_json())["m"] == plan.m


def test_parity_bound_per_rounding_mode() -> None:
    data = generate_synthetic(standard_config())
    g = data.groups()
    n_priv, n_unpriv = int(g.sum()), int((g == 0).sum())

    nearest, _ = massage(data, rounding="nearest")
    d = disparate_impact(nearest.labels(), nearest.groups()).difference
    assert abs(d) <= 1.0 / min(n_priv, n_unpriv)

    ceil, _ = massage(data)
    d = disparate_impact(ceil.labels(), ceil.groups()).difference
    assert 0.0 <= d < 1.0 / n_unpriv + 1.0 / n_priv


@pytest.mark.parametrize("seed", range(30))
def test_nearest_rounding_meets_parity_bound(seed: int) -> None:
    data = generate_synthetic(standard_config(seed=seed))
    g = data.groups()
    repaired, plan = massage(data, rounding="nearest")
    assert not plan.clamped
    d = disparate_impact(repaired.labels(), repaired.groups()).difference
    assert abs(d) <= 1.0 / min(int(g.sum()), int((g == 0).sum()))


def test_plan_depends_only_on_ranking() -> None:
    data = generate_synthetic(standard_config(n_rows=300))
    scores = rank_samples(data)
    _, plan = massage(data, scores=scores)
    _, transformed = massage(data, scores=np.log(scores) * 3.0 - 7.0)
    assert plan.promotions == transformed.promotions
    assert plan.demotions == transformed.demotions


def test_score_ties_go_to_lower_row_id() -> None:
    data = _groups(6, 10, 2, 10)
    _, plan = massage(data, scores=np.full(len(data), 0.5))
    promo, demo = flip_candidates(data)
    assert list(plan.promotions) == sorted(promo)[:2]
    assert list(plan.demotions) == sorted(demo)[:2]


def _min_balanced_flips(data: Dataset) -> int:
    """Smallest M such that some M promotions + M demotions give unprivileged rate >= privileged rate."""
    y = data.labels()
    g = data.groups()
    promo, demo = flip_candidates(data)
    n_priv, n_unpriv = int(g.sum()), int((g == 0).sum())
    for m in range(0, min(len(promo), len(demo)) + 1):
        for ups in itertools.combinations(promo, m):
            for downs in itertools.combinations(demo, m):
                labels = y.copy()
                labels[list(ups)] = 1
                labels[list(downs)] = 0
                if labels[g == 0].sum() * n_priv >= labels[g == 1].sum() * n_unpriv:
                    return m
    return -1


def test_m_matches_exhaustive_search() -> None:
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(40):
        n = int(rng.integers(4, 13))
        z = rng.integers(0, 2, n)
        y = rng.integers(0, 2, n)
        if z.min() == z.max() or y.min() == y.max():
            continue
        data = _data([(str(zi), "ab"[i % 2], str(yi)) for i, (zi, yi) in enumerate(zip(z, y))])
        repaired, plan = massage(data)
        assert plan.m == _min_balanced_flips(data)
        assert len(set(plan.promotions) | set(plan.demotions)) == 2 * plan.m
        checked += 1
    assert checked > 20
