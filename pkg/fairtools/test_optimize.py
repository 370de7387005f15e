from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import pytest
from scipy.optimize import linprog

from fairtools.data_model import (
    CATEGORICAL,
    FEATURE,
    LABEL,
    PROTECTED,
    Cell,
    Column,
    Dataset,
    JointDistribution,
    Schema,
    empirical_joint,
)
from fairtools.errors import Infeasible, InvalidConfig, NotConverged, UnmappedCell
from fairtools.optimize import (
    OptimizeConfig,
    RepairMap,
    apply_repair,
    check_repair_map,
    project_simplex,
    relaxation_probe,
    solve_repair_map,
)

SCHEMA = Schema(
    (Column("z", CATEGORICAL, PROTECTED), Column("x", CATEGORICAL, FEATURE), Column("y", CATEGORICAL, LABEL)),
    favorable_label="1", privileged_value="1", unfavorable_label="0", unprivileged_value="0",
)


def _from_counts(counts: Dict[Tuple[str, int, int], int]) -> Dataset:
    """counts keyed by (x, y, z)."""
    rows = []
    for (x, y, z), n in sorted(counts.items()):
        rows += [(str(z), x, str(y))] * n
    return Dataset(SCHEMA, pd.DataFrame(rows, columns=["z", "x", "y"]))


# Five fixed binary x / y / z instances, all eight cells populated.
INSTANCES: List[Tuple[Dict[Tuple[str, int, int], int], float, float]] = [
    ({("a", 1, 1): 30, ("b", 1, 1): 20, ("a", 0, 1): 10, ("b", 0, 1): 15,
      ("a", 1, 0): 8, ("b", 1, 0): 12, ("a", 0, 0): 25, ("b", 0, 0): 30}, 0.05, 0.4),
    ({("a", 1, 1): 12, ("b", 1, 1): 9, ("a", 0, 1): 3, ("b", 0, 1): 6,
      ("a", 1, 0): 4, ("b", 1, 0): 5, ("a", 0, 0): 10, ("b", 0, 0): 11}, 0.02, 0.5),
    ({("a", 1, 1): 40, ("b", 1, 1): 10, ("a", 0, 1): 10, ("b", 0, 1): 10,
      ("a", 1, 0): 10, ("b", 1, 0): 10, ("a", 0, 0): 10, ("b", 0, 0): 40}, 0.1, 0.3),
    ({("a", 1, 1): 5, ("b", 1, 1): 5, ("a", 0, 1): 5, ("b", 0, 1): 5,
      ("a", 1, 0): 2, ("b", 1, 0): 3, ("a", 0, 0): 8, ("b", 0, 0): 7}, 0.0, 1.0),
    ({("a", 1, 1): 7, ("b", 1, 1): 14, ("a", 0, 1): 6, ("b", 0, 1): 3,
      ("a", 1, 0): 9, ("b", 1, 0): 2, ("a", 0, 0): 5, ("b", 0, 0): 12}, 0.05, 0.25),
]


def _random_instances(n: int, seed: int) -> List[Tuple[Dict[Tuple[str, int, int], int], float, float]]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        counts = {(x, y, z): int(rng.integers(1, 41)) for x in "ab" for y in (0, 1) for z in (0, 1)}
        out.append((counts, float(rng.choice([0.03, 0.05, 0.1])), float(rng.choice([0.2, 0.25, 0.5, 1.0]))))
    return out


# one near-empty cell next to heavy ones
SKEWED = ({("a", 0, 0): 19, ("a", 0, 1): 1, ("a", 1, 0): 35, ("a", 1, 1): 30,
           ("b", 0, 0): 38, ("b", 0, 1): 4, ("b", 1, 0): 7, ("b", 1, 1): 20}, 0.1, 0.25)
RANDOM_INSTANCES = _random_instances(40, seed=123) + [SKEWED]


def _lp_optimum(joint: JointDistribution, config: OptimizeConfig) -> Optional[float]:
    """Same problem as a linear program: variables are the table entries plus one TV slack per target.
    None when the program is infeasible."""
    sources = list(joint.cells)
    targets = [(x, y) for x in joint.x_domain() for y in (0, 1)]
    ns, nt = len(sources), len(targets)
    nv = ns * nt + nt
    pi = joint.probs
    xy = joint.xy_marginal()
    r = np.array([xy.get(t, 0.0) for t in targets])
    p_target = joint.label_marginal()

    def var(i: int, j: int) -> int:
        return i * nt + j

    a_ub, b_ub = [], []
    for j in range(nt):
        row = np.zeros(nv)
        for i in range(ns):
            row[var(i, j)] = pi[i]
        slack = np.zeros(nv)
        slack[ns * nt + j] = 1.0
        a_ub.append(row - slack)
        b_ub.append(r[j])
        a_ub.append(-row - slack)
        b_ub.append(-r[j])
    for z in (0, 1):
        mass = sum(pi[i] for i, c in enumerate(sources) if c[2] == z)
        for y in (0, 1):
            row = np.zeros(nv)
            for i, c in enumerate(sources):
                if c[2] != z:
                    continue
                for j, t in enumerate(targets):
                    if t[1] == y:
                        row[var(i, j)] = pi[i] / mass
            eps = config.epsilon_for(y, z)
            a_ub.append(row)
            b_ub.append(p_target[y] + eps)
            a_ub.append(-row)
            b_ub.append(eps - p_target[y])
    for i, (x, y, z) in enumerate(sources):
        row = np.zeros(nv)
        for j, t in enumerate(targets):
            row[var(i, j)] = config.cost((x, y), t)
        a_ub.append(row)
        b_ub.append(config.budget_for((x, y, z)))
    a_eq = np.zeros((ns, nv))
    for i in range(ns):
        a_eq[i, i * nt:(i + 1) * nt] = 1.0
    cost = np.zeros(nv)
    cost[ns * nt:] = 0.5
    res = linprog(cost, A_ub=np.array(a_ub), b_ub=np.array(b_ub), A_eq=a_eq, b_eq=np.ones(ns),
                  bounds=[(0, None)] * nv, method="highs")
    if res.status == 2:
        return None
    assert res.status == 0
    return float(res.fun)


def test_project_simplex_keeps_points_on_simplex() -> None:
    v = np.array([0.2, 0.3, 0.5])
    assert project_simplex(v) is not v
    assert project_simplex(v).tolist() == v.tolist()
    assert project_simplex(np.array([1.0, 0.0])).tolist() == [1.0, 0.0]


def test_project_simplex_lands_on_simplex() -> None:
    assert project_simplex(np.array([1.0, 1.0])).tolist() == pytest.approx([0.5, 0.5])
    assert project_simplex(np.array([2.0, 0.0])).tolist() == pytest.approx([1.0, 0.0])
    assert project_simplex(np.array([0.5, 0.5, 0.5])).tolist() == pytest.approx([1 / 3] * 3)
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = project_simplex(rng.normal(size=6) * 3)
        assert p.min() >= 0.0
        assert abs(p.sum() - 1.0) <= 1e-12


def test_unconstrained_problem_keeps_identity() -> None:
    joint = empirical_joint(_from_counts(INSTANCES[0][0]), ["x"])
    config = OptimizeConfig(distortion_budget=math.inf, epsilon=math.inf)
    result = solve_repair_map(joint, config)
    assert result.objective <= 1e-6
    assert result.converged
    assert np.array_equal(result.repair_map.table, RepairMap.identity(joint).table)


def test_zero_budget_on_biased_data_is_infeasible() -> None:
    joint = empirical_joint(_from_counts(INSTANCES[0][0]), ["x"])
    with pytest.raises(Infeasible) as e:
        solve_repair_map(joint, OptimizeConfig(distortion_budget=0.0, epsilon=0.0))
    assert "epsilon" in e.value.worst


@pytest.mark.parametrize("index", range(len(INSTANCES)))
def test_solver_matches_linear_program(index: int) -> None:
    counts, eps, budget = INSTANCES[index]
    joint = empirical_joint(_from_counts(counts), ["x"])
    config = OptimizeConfig(distortion_budget=budget, epsilon=eps)
    result = solve_repair_map(joint, config)

    report = check_repair_map(joint, result.repair_map, config)
    assert report.ok, report
    assert report.row_sum_error <= 1e-9
    assert result.objective == pytest.approx(_lp_optimum(joint, config), abs=1e-3)


@pytest.mark.parametrize("index", range(len(RANDOM_INSTANCES)))
def test_solver_brackets_linear_program_optimum(index: int) -> None:
    counts, eps, budget = RANDOM_INSTANCES[index]
    joint = empirical_joint(_from_counts(counts), ["x"])
    config = OptimizeConfig(distortion_budget=budget, epsilon=eps)
    best = _lp_optimum(joint, config)
    if best is None:
        with pytest.raises(Infeasible):
            solve_repair_map(joint, config)
        return

    result = solve_repair_map(joint, config)
    assert check_repair_map(joint, result.repair_map, config).ok
    assert result.lower_bound <= best + 1e-7
    assert result.lower_bound <= result.objective
    assert result.objective == pytest.approx(best, abs=1e-3)


def test_short_run_reports_open_bracket(caplog: pytest.LogCaptureFixture) -> None:
    counts, eps, budget = SKEWED
    joint = empirical_joint(_from_counts(counts), ["x"])
    config = OptimizeConfig(distortion_budget=budget, epsilon=eps)
    full = solve_repair_map(joint, config)
    best = _lp_optimum(joint, config)

    # fewer iterations than one checkpoint: no lower bound beyond 0 is certified
    short = replace(config, max_iter=50)
    with caplog.at_level(logging.WARNING, logger="fairtools"):
        result = solve_repair_map(joint, short, initial=full.repair_map)
    assert not result.converged
    assert "did not close the gap" in caplog.text
    assert result.lower_bound == 0.0 <= best <= result.objective + 1e-5
    with pytest.raises(NotConverged):
        solve_repair_map(joint, replace(short, strict=True), initial=full.repair_map)


def test_solver_matches_grid_search() -> None:
    # no feature columns: three source cells, targets are the two labels
    data = _from_counts({("a", 1, 1): 6, ("a", 0, 1): 2, ("a", 0, 0): 5})
    joint = empirical_joint(data, [])
    assert len(joint.cells) == 3
    config = OptimizeConfig(distortion_budget=0.6, epsilon=0.1)
    result = solve_repair_map(joint, config)

    pi = joint.probs
    labels = np.array([c[1] for c in joint.cells])
    groups = np.array([c[2] for c in joint.cells])
    p_target = joint.label_marginal()
    # q[:, i] = probability that cell i ends up favorable
    q = np.array(list(itertools.product(np.linspace(0.0, 1.0, 51), repeat=3)))
    ok = np.ones(len(q), dtype=bool)
    for z in (0, 1):
        favorable = q[:, groups == z] @ pi[groups == z] / pi[groups == z].sum()
        ok &= np.abs(favorable - p_target[1]) <= 0.1
    ok &= (np.where(labels == 1, 1.0 - q, q) <= 0.6).all(axis=1)
    q1 = q @ pi
    objective = 0.5 * (np.abs((1.0 - q1) - p_target[0]) + np.abs(q1 - p_target[1]))
    assert ok.any()
    best = float(objective[ok].min())
    assert result.objective <= best + 1e-3
    assert result.objective == pytest.approx(_lp_optimum(joint, config), abs=1e-3)


def test_relaxing_budgets_never_hurts() -> None:
    joint = empirical_joint(_from_counts(INSTANCES[4][0]), ["x"])
    config = OptimizeConfig(distortion_budget=0.22, epsilon=0.05)
    tight, relaxed = relaxation_probe(joint, config, factor=10.0)
    assert relaxed.objective <= tight.objective + 2 * config.tolerance

    _, cold = relaxation_probe(joint, config, factor=10.0, warm_start=False)
    assert cold.objective <= tight.objective + 2 * config.tolerance + config.gap_tolerance
    assert cold.lower_bound <= tight.objective + 2 * config.tolerance


@pytest.mark.parametrize("index", [0, 2, 4])
def test_relaxed_cold_solve_never_hurts(index: int) -> None:
    counts, eps, budget = INSTANCES[index]
    joint = empirical_joint(_from_counts(counts), ["x"])
    config = OptimizeConfig(distortion_budget=budget, epsilon=eps)
    tight = solve_repair_map(joint, config)
    cold = solve_repair_map(joint, OptimizeConfig(distortion_budget=budget * 10, epsilon=eps))
    assert cold.objective <= tight.objective + 2 * config.tolerance + config.gap_tolerance


def test_per_cell_budgets_and_epsilons() -> None:
    joint = empirical_joint(_from_counts(INSTANCES[0][0]), ["x"])
    # privileged rows pinned; the target is their own favorable rate of 2/3
    budgets: Dict[Cell, float] = {cell: (0.0 if cell[2] == 1 else 0.6) for cell in joint.cells}
    epsilon = {(y, z): 0.05 for y in (0, 1) for z in (0, 1)}
    config = OptimizeConfig(distortion_budget=budgets, epsilon=epsilon, target_marginal=(1 / 3, 2 / 3))
    result = solve_repair_map(joint, config)
    assert check_repair_map(joint, result.repair_map, config).ok
    identity = RepairMap.identity(joint)
    for i, cell in enumerate(joint.cells):
        if cell[2] == 1:
            assert result.repair_map.table[i] == pytest.approx(identity.table[i], abs=1e-5)


def test_config_validation() -> None:
    with pytest.raises(InvalidConfig):
        OptimizeConfig(distortion_budget=1.0, measure="kl")
    with pytest.raises(InvalidConfig):
        OptimizeConfig(distortion_budget=-1.0)
    with pytest.raises(InvalidConfig):
        OptimizeConfig(distortion_budget=1.0, target_marginal=(0.3, 0.3))
    joint = empirical_joint(_from_counts(INSTANCES[0][0]), ["x"])
    with pytest.raises(InvalidConfig):
        solve_repair_map(joint, OptimizeConfig(distortion_budget=1.0, distortion=lambda s, t: 1.0))


def test_checker_flags_violations() -> None:
    joint = empirical_joint(_from_counts(INSTANCES[0][0]), ["x"])
    identity = RepairMap.identity(joint)
    report = check_repair_map(joint, identity, OptimizeConfig(distortion_budget=0.0, epsilon=0.0))
    assert not report.ok
    assert max(report.epsilon_excess.values()) > 0
    assert max(report.distortion_excess.values()) == 0.0


def test_apply_identity_map_is_exact() -> None:
    data = _from_counts(INSTANCES[1][0])
    joint = empirical_joint(data, ["x"])
    assert apply_repair(data, RepairMap.identity(joint), seed=5).equals(data)


def test_apply_point_mass_map() -> None:
    data = _from_counts(INSTANCES[1][0])
    joint = empirical_joint(data, ["x"])
    identity = RepairMap.identity(joint)
    target = identity.target_cells.index((("b",), 1))
    table = np.zeros_like(identity.table)
    table[:, target] = 1.0
    repaired = apply_repair(data, RepairMap(identity.feature_names, identity.source_cells,
                                            identity.target_cells, table), seed=1)
    assert set(repaired.frame["x"]) == {"b"}
    assert set(repaired.frame["y"]) == {"1"}
    assert repaired.frame["z"].equals(data.frame["z"])
    assert list(repaired.row_ids) == list(data.row_ids)


def test_apply_repair_frequencies() -> None:
    n = 100000
    data = _from_counts({("a", 0, 0): n // 2, ("a", 0, 1): n // 2})
    joint = empirical_joint(data, [])
    identity = RepairMap.identity(joint)
    table = np.array([[0.3, 0.7], [0.3, 0.7]])
    repaired = apply_repair(data, RepairMap((), identity.source_cells, identity.target_cells, table), seed=42)
    assert repaired.labels().mean() == pytest.approx(0.7, abs=0.01)
    again = apply_repair(data, RepairMap((), identity.source_cells, identity.target_cells, table), seed=42)
    assert again.equals(repaired)


def test_apply_repair_unmapped_cell() -> None:
    data = _from_counts(INSTANCES[1][0])
    partial = _from_counts({("a", 1, 1): 3, ("a", 0, 0): 2})
    repair_map = RepairMap.identity(empirical_joint(partial, ["x"]))
    with pytest.raises(UnmappedCell):
        apply_repair(data, repair_map, seed=0)


def test_repair_map_json() -> None:
    joint = empirical_joint(_from_counts(INSTANCES[2][0]), ["x"])
    result = solve_repair_map(joint, OptimizeConfig(distortion_budget=0.3, epsilon=0.1))
    d = json.loads(result.repair_map.to_json())
    assert len(d["probabilities"]) == len(d["source_cells"]) == 8
    assert len(d["target_cells"]) == 4
    back = RepairMap.from_dict(d)
    assert back.source_cells == result.repair_map.source_cells
    assert np.array_equal(back.table, result.repair_map.table)
