"""Optimized pre-processing over finite domains.

Finds a randomized map p(x~, y~ | x, y, z), one probability row per source cell,
that keeps the repaired (x~, y~) distribution close to the empirical p(x, y)
in total variation while

* every label conditional p(y~ = y | z) stays within epsilon[y, z] of the
  target label marginal, and
* the expected distortion of every source cell stays within its budget c.

The problem is convex. It is solved on the product of per-row probability
simplices (Euclidean projection per row). A feasibility phase first drives the
total constraint violation to zero with Polyak-step projected subgradient
descent. The objective phase then runs projected primal-dual steps on the
Lagrangian: the TV objective is linearized by one multiplier per target cell
and every constraint gets a non-negative multiplier. The multipliers give a
certified lower bound on the optimum, and each primal candidate is pushed back
to feasibility with the first phase's method before it may become the answer.
The solver stops once the best feasible objective is within ``gap_tolerance``
of the lower bound.

Labels and groups are binary here: y = 1 is the favorable label, z = 1 the
privileged group.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .data_model import Cell, Dataset, JointDistribution
from .errors import EmptyGroup, Infeasible, InvalidConfig, NotConverged, UnmappedCell

logger = logging.getLogger(__name__)

XY = Tuple[Tuple[str, ...], int]
DistortionFn = Callable[[XY, XY], float]

MEASURES = ("tv",)
C_TUNING_NOTE = ("distortion_budget (c) is a free knob: there is no principled default and no "
                 "published guidance on how to tune it; every value used is recorded in the report.")


@dataclass(frozen=True)
class OptimizeConfig:
    """Knobs of the repair problem. ``distortion_budget`` has no default on purpose."""

    distortion_budget: Union[float, Mapping[Cell, float]]
    epsilon: Union[float, Mapping[Tuple[int, int], float]] = 0.05
    target_marginal: Optional[Tuple[float, float]] = None
    distortion: Optional[DistortionFn] = None
    label_cost: float = 1.0
    feature_cost: float = 1.0
    measure: str = "tv"
    tolerance: float = 1e-6
    max_iter: int = 20000
    gap_tolerance: float = 1e-5
    checkpoint: int = 100
    seed: int = 0
    strict: bool = False

    def __post_init__(self) -> None:
        if self.measure not in MEASURES:
            raise InvalidConfig(f"measure must be one of {MEASURES}, got {self.measure!r}")
        for name, value in _knob_values(self.distortion_budget) + _knob_values(self.epsilon):
            if math.isnan(value) or value < 0:
                raise InvalidConfig(f"{name} must be >= 0, got {value}")
        if self.target_marginal is not None:
            p = self.target_marginal
            if len(p) != 2 or min(p) < 0 or abs(sum(p) - 1.0) > 1e-9:
                raise InvalidConfig(f"target_marginal must be a distribution over (0, 1), got {p}")
        if self.tolerance <= 0 or self.gap_tolerance <= 0 or self.max_iter < 1 or self.checkpoint < 1:
            raise InvalidConfig("tolerances must be > 0 and iteration limits positive")
        if self.label_cost < 0 or self.feature_cost < 0:
            raise InvalidConfig("distortion costs must be >= 0")

    def budget_for(self, cell: Cell) -> float:
        if isinstance(self.distortion_budget, Mapping):
            if cell not in self.distortion_budget:
                raise InvalidConfig(f"no distortion budget for cell {cell!r}")
            return float(self.distortion_budget[cell])
        return float(self.distortion_budget)

    def epsilon_for(self, y: int, z: int) -> float:
        if isinstance(self.epsilon, Mapping):
            if (y, z) not in self.epsilon:
                raise InvalidConfig(f"no epsilon for (y={y}, z={z})")
            return float(self.epsilon[(y, z)])
        return float(self.epsilon)

    def cost(self, source: XY, target: XY) -> float:
        if self.distortion is not None:
            return float(self.distortion(source, target))
        changed = sum(1 for a, b in zip(source[0], target[0]) if a != b)
        return self.feature_cost * changed + self.label_cost * (source[1] != target[1])

    def knobs(self) -> Dict[str, object]:
        def encode(v: object) -> object:
            if isinstance(v, Mapping):
                return {repr(k): _json_float(float(x)) for k, x in sorted(v.items(), key=lambda kv: repr(kv[0]))}
            return _json_float(float(v))  # type: ignore[arg-type]

        return {
            "distortion_budget": encode(self.distortion_budget),
            "epsilon": encode(self.epsilon),
            "target_marginal": list(self.target_marginal) if self.target_marginal else None,
            "label_cost": self.label_cost,
            "feature_cost": self.feature_cost,
            "measure": self.measure,
            "tolerance": self.tolerance,
            "gap_tolerance": self.gap_tolerance,
        }


def _knob_values(v: object) -> List[Tuple[str, float]]:
    if isinstance(v, Mapping):
        return [(repr(k), float(x)) for k, x in v.items()]
    return [("value", float(v))]  # type: ignore[arg-type]


def _json_float(v: float) -> object:
    return "inf" if math.isinf(v) else v


@dataclass(frozen=True, eq=False)
class RepairMap:
    feature_names: Tuple[str, ...]
    source_cells: Tuple[Cell, ...]
    target_cells: Tuple[XY, ...]
    table: np.ndarray

    def __post_init__(self) -> None:
        if self.table.shape != (len(self.source_cells), len(self.target_cells)):
            raise InvalidConfig("repair table shape does not match its cells")

    def source_index(self) -> Dict[Cell, int]:
        return {c: i for i, c in enumerate(self.source_cells)}

    def row(self, cell: Cell) -> np.ndarray:
        i = self.source_index().get(cell)
        if i is None:
            raise KeyError(cell)
        return self.table[i]

    @classmethod
    def identity(cls, joint: JointDistribution) -> "RepairMap":
        targets = _target_cells(joint)
        t_index = {t: j for j, t in enumerate(targets)}
        table = np.zeros((len(joint.cells), len(targets)))
        for i, (x, y, z) in enumerate(joint.cells):
            table[i, t_index[(x, y)]] = 1.0
        return cls(joint.feature_names, joint.cells, tuple(targets), table)

    def to_dict(self) -> Dict[str, object]:
        return {
            "feature_names": list(self.feature_names),
            "source_cells": [{"x": list(x), "y": y, "z": z} for x, y, z in self.source_cells],
            "target_cells": [{"x": list(x), "y": y} for x, y in self.target_cells],
            "probabilities": self.table.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, object]) -> "RepairMap":
        sources = tuple((tuple(c["x"]), int(c["y"]), int(c["z"])) for c in d["source_cells"])  # type: ignore[index,union-attr]
        targets = tuple((tuple(c["x"]), int(c["y"])) for c in d["target_cells"])  # type: ignore[index,union-attr]
        return cls(tuple(d["feature_names"]), sources, targets, np.asarray(d["probabilities"], dtype=np.float64))  # type: ignore[arg-type]


@dataclass(frozen=True)
class SolveResult:
    repair_map: RepairMap
    objective: float
    max_violation: float
    converged: bool
    iterations: int
    # certified: no feasible map scores below this
    lower_bound: float = 0.0


# ──────────────── simplex projection ────────────────

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex (sort-based)."""

    return project_rows(np.asarray(v, dtype=np.float64)[None, :])[0]


def project_rows(m: np.ndarray) -> np.ndarray:
    """Project every row of ``m`` onto the probability simplex."""

    m = np.asarray(m, dtype=np.float64)
    on_simplex = (m >= 0).all(axis=1) & (np.abs(m.sum(axis=1) - 1.0) <= 1e-12)
    if on_simplex.all():
        return m.copy()
    n = m.shape[1]
    u = -np.sort(-m, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ks = np.arange(1, n + 1)
    rho = (u - css / ks > 0).sum(axis=1)
    theta = css[np.arange(m.shape[0]), rho - 1] / rho
    out = np.maximum(m - theta[:, None], 0.0)
    out[on_simplex] = m[on_simplex]
    return out


def _assert_simplex_rows(p: np.ndarray) -> None:
    assert (p >= 0).all(), "repair table has negative entries"
    assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-9, "repair table rows do not sum to 1"


# ──────────────── problem ────────────────

def _target_cells(joint: JointDistribution) -> List[XY]:
    return [(x, y) for x in joint.x_domain() for y in (0, 1)]


class _Problem:
    """Dense matrix form of one repair problem."""

    def __init__(self, joint: JointDistribution, config: OptimizeConfig) -> None:
        self.joint = joint
        self.config = config
        self.sources = list(joint.cells)
        self.targets = _target_cells(joint)
        self.pi = joint.probs.astype(np.float64)

        xy = joint.xy_marginal()
        self.r = np.array([xy.get(t, 0.0) for t in self.targets])

        self.delta = np.array([[config.cost((x, y), t) for t in self.targets] for x, y, z in self.sources])
        for i, (x, y, z) in enumerate(self.sources):
            if self.delta[i, self.targets.index((x, y))] != 0.0:
                raise InvalidConfig(f"distortion of an unchanged cell must be 0, cell {(x, y)!r}")
        if (self.delta < 0).any():
            raise InvalidConfig("distortion costs must be >= 0")
        self.c = np.array([config.budget_for(cell) for cell in self.sources])

        self.z_of = np.array([z for x, y, z in self.sources])
        self.y_of_target = np.array([y for x, y in self.targets])
        self.group_mass = np.array([self.pi[self.z_of == z].sum() for z in (0, 1)])
        for z, name in ((0, "unprivileged"), (1, "privileged")):
            if self.group_mass[z] <= 0:
                raise EmptyGroup(name)
        p_t = config.target_marginal if config.target_marginal is not None else joint.label_marginal()
        self.p_target = np.asarray(p_t, dtype=np.float64)
        self.eps = np.array([[config.epsilon_for(y, z) for z in (0, 1)] for y in (0, 1)])

        # multipliers stay at 0 for constraints that can never bind
        self.eps_on = np.isfinite(self.eps)
        self.eps0 = np.where(self.eps_on, self.eps, 0.0)
        self.c_on = np.isfinite(self.c) & (self.delta.sum(axis=1) > 0)
        self.c0 = np.where(self.c_on, self.c, 0.0)
        self.cond_weight = self.pi / self.group_mass[self.z_of]

        # diagonally preconditioned step sizes: 1 / column sums for the primal
        # (uniform within a row, so the per-row Euclidean projection stays exact),
        # 1 / row sums for the multipliers
        cols = (self.pi[:, None]
                + 2.0 * self.cond_weight[:, None] * self.eps_on[self.y_of_target[None, :], self.z_of[:, None]]
                + self.c_on[:, None] * self.delta)
        self.tau = 1.0 / np.maximum(cols.max(axis=1), 1e-12)
        self.sigma_mu = 1.0 / float(self.pi.sum())
        n_targets_by_y = np.array([(self.y_of_target == y).sum() for y in (0, 1)], dtype=np.float64)
        self.sigma_lam = (1.0 / np.maximum(n_targets_by_y, 1.0))[:, None]
        self.sigma_nu = np.where(self.c_on, 1.0 / np.maximum(self.delta.sum(axis=1), 1e-12), 0.0)

    # objective: total variation between induced p(x~, y~) and empirical p(x, y)
    def objective(self, p: np.ndarray) -> float:
        return 0.5 * float(np.abs(self.pi @ p - self.r).sum())

    def conditionals(self, p: np.ndarray) -> np.ndarray:
        """cond[y, z] = p(y~ = y | z)."""
        cond = np.zeros((2, 2))
        for z in (0, 1):
            rows = self.z_of == z
            weighted = self.pi[rows] @ p[rows]
            for y in (0, 1):
                cond[y, z] = weighted[self.y_of_target == y].sum() / self.group_mass[z]
        return cond

    def violations(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        cond = self.conditionals(p)
        dev = cond - self.p_target[:, None]
        eps_viol = np.maximum(0.0, np.abs(dev) - self.eps)
        dist_viol = np.maximum(0.0, (p * self.delta).sum(axis=1) - self.c)
        return eps_viol, dist_viol, dev

    def violation(self, p: np.ndarray) -> float:
        eps_viol, dist_viol, _ = self.violations(p)
        return float(eps_viol.sum() + dist_viol.sum())

    def violation_grad(self, p: np.ndarray) -> np.ndarray:
        eps_viol, dist_viol, dev = self.violations(p)
        g = np.zeros_like(p)
        for y in (0, 1):
            for z in (0, 1):
                if eps_viol[y, z] > 0:
                    rows = np.flatnonzero(self.z_of == z)
                    cols = np.flatnonzero(self.y_of_target == y)
                    g[np.ix_(rows, cols)] += np.sign(dev[y, z]) * (self.pi[rows] / self.group_mass[z])[:, None]
        active = dist_viol > 0
        g[active] += self.delta[active]
        return g

    def worst_constraint(self, p: np.ndarray) -> str:
        eps_viol, dist_viol, _ = self.violations(p)
        y, z = np.unravel_index(int(np.argmax(eps_viol)), eps_viol.shape)
        i = int(np.argmax(dist_viol)) if dist_viol.size else -1
        if i >= 0 and dist_viol[i] > eps_viol[y, z]:
            x, cy, cz = self.sources[i]
            return f"distortion[x={x!r}, y={cy}, z={cz}] over budget by {dist_viol[i]:.3g}"
        return f"epsilon[y={y}, z={z}] exceeded by {eps_viol[y, z]:.3g}"

    # ── Lagrangian pieces for the objective phase ──

    def lagrangian_grad(self, d: "_Duals") -> np.ndarray:
        lam = d.lam_hi - d.lam_lo
        g = self.pi[:, None] * d.mu[None, :]
        g = g + self.cond_weight[:, None] * lam[self.y_of_target[None, :], self.z_of[:, None]]
        return g + d.nu[:, None] * self.delta

    def dual_bound(self, d: "_Duals") -> float:
        """Minimum of the Lagrangian over the simplex product: a lower bound on the optimum."""
        value = float(self.lagrangian_grad(d).min(axis=1).sum()) - float(d.mu @ self.r)
        pt = self.p_target[:, None]
        value -= float((d.lam_hi * (pt + self.eps0)).sum() + (d.lam_lo * (self.eps0 - pt)).sum())
        return value - float(d.nu @ self.c0)

    def dual_step(self, d: "_Duals", p: np.ndarray) -> "_Duals":
        cond = self.conditionals(p)
        pt = self.p_target[:, None]
        return _Duals(
            mu=np.clip(d.mu + self.sigma_mu * (self.pi @ p - self.r), -0.5, 0.5),
            lam_hi=np.where(self.eps_on, np.maximum(0.0, d.lam_hi + self.sigma_lam * (cond - pt - self.eps0)), 0.0),
            lam_lo=np.where(self.eps_on, np.maximum(0.0, d.lam_lo + self.sigma_lam * (pt - self.eps0 - cond)), 0.0),
            nu=np.where(self.c_on,
                        np.maximum(0.0, d.nu + self.sigma_nu * ((p * self.delta).sum(axis=1) - self.c0)), 0.0),
        )

    def gap_estimate(self, p: np.ndarray, d: "_Duals") -> float:
        return max(0.0, self.objective(p) - self.dual_bound(d)) + self.violation(p)

    def identity(self) -> np.ndarray:
        return RepairMap.identity(self.joint).table.copy()


@dataclass
class _RunResult:
    table: np.ndarray
    value: float
    iterations: int
    stalled: bool


def _polyak(start: np.ndarray, fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
            tol: float, max_iter: int) -> _RunResult:
    """Projected subgradient descent with Polyak steps toward a zero optimum.

    Stops as soon as the value drops to ``tol``, or when the best value has not
    improved by 0.1% over a window of iterations (``stalled``).
    """

    p = start.copy()
    best_p, best_f = p, math.inf
    window = max(200, max_iter // 10)
    mark_f, mark_it = math.inf, 0
    it = 0
    for it in range(1, max_iter + 1):
        f, g = fn(p)
        if f < best_f:
            best_p, best_f = p, f
        if f <= tol:
            return _RunResult(p, f, it, stalled=False)
        if it - mark_it >= window:
            if best_f > 0.999 * mark_f:
                return _RunResult(best_p, best_f, it, stalled=True)
            mark_f, mark_it = best_f, it
        gn = float((g * g).sum())
        if gn == 0.0:
            return _RunResult(best_p, best_f, it, stalled=True)
        p = project_rows(p - ((f + tol) / gn) * g)
        _assert_simplex_rows(p)
    return _RunResult(best_p, best_f, it, stalled=False)


@dataclass(frozen=True)
class _Duals:
    """Lagrange multipliers: ``mu`` per target cell (in [-1/2, 1/2]) for the TV
    objective, ``lam_hi``/``lam_lo`` per (y, z) for the two sides of the epsilon
    constraint, ``nu`` per source cell for its distortion budget."""

    mu: np.ndarray
    lam_hi: np.ndarray
    lam_lo: np.ndarray
    nu: np.ndarray

    @classmethod
    def zeros(cls, n_sources: int, n_targets: int) -> "_Duals":
        return cls(np.zeros(n_targets), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(n_sources))

    def plus(self, other: "_Duals") -> "_Duals":
        return _Duals(self.mu + other.mu, self.lam_hi + other.lam_hi, self.lam_lo + other.lam_lo,
                      self.nu + other.nu)

    def scaled(self, w: float) -> "_Duals":
        return _Duals(self.mu * w, self.lam_hi * w, self.lam_lo * w, self.nu * w)


@dataclass
class _Bracket:
    best: np.ndarray
    hi: float
    lo: float
    iterations: int


def _feasible(prob: _Problem, start: np.ndarray, tol: float, max_iter: int) -> _RunResult:
    return _polyak(start, lambda p: (prob.violation(p), prob.violation_grad(p)), tol, max_iter)


def _primal_dual(prob: _Problem, start: np.ndarray, config: OptimizeConfig) -> _Bracket:
    """Objective phase. ``start`` must be feasible; the bracket [lo, hi] always holds the optimum."""

    tol = config.tolerance
    out = _Bracket(start, prob.objective(start), 0.0, 0)
    if out.hi - out.lo <= config.gap_tolerance:
        return out

    polish_iter = max(200, 2 * config.checkpoint)
    p = start.copy()
    d = _Duals.zeros(*p.shape)
    p_sum, d_sum, count = np.zeros_like(p), _Duals.zeros(*p.shape), 0
    for it in range(1, config.max_iter + 1):
        p_next = project_rows(p - prob.tau[:, None] * prob.lagrangian_grad(d))
        _assert_simplex_rows(p_next)
        d = prob.dual_step(d, 2.0 * p_next - p)
        p = p_next
        p_sum, d_sum, count = p_sum + p, d_sum.plus(d), count + 1
        out.iterations += 1
        if it % config.checkpoint:
            continue

        p_avg, d_avg = p_sum / count, d_sum.scaled(1.0 / count)
        out.lo = max(out.lo, prob.dual_bound(d), prob.dual_bound(d_avg))
        if prob.gap_estimate(p_avg, d_avg) < prob.gap_estimate(p, d):
            # restart from the running average
            p, d = p_avg, d_avg
            p_sum, d_sum, count = np.zeros_like(p), _Duals.zeros(*p.shape), 0

        if prob.objective(p) < out.hi:
            run = _feasible(prob, p, tol, polish_iter)
            out.iterations += run.iterations
            if run.value <= tol:
                value = prob.objective(run.table)
                if value < out.hi:
                    out.best, out.hi = run.table, value
        if out.hi - out.lo <= config.gap_tolerance:
            break
    return out


def solve_repair_map(joint: JointDistribution, config: OptimizeConfig,
                     initial: Optional[RepairMap] = None) -> SolveResult:
    prob = _Problem(joint, config)
    tol = config.tolerance

    start = prob.identity()
    if initial is not None and initial.source_cells == tuple(prob.sources) \
            and initial.target_cells == tuple(prob.targets):
        start = initial.table.copy()

    iterations = 0
    if prob.violation(start) > tol:
        run = _feasible(prob, start, tol, config.max_iter)
        iterations += run.iterations
        if prob.violation(run.table) > tol:
            raise Infeasible(prob.violation(run.table), prob.worst_constraint(run.table))
        start = run.table

    bracket = _primal_dual(prob, start, config)
    iterations += bracket.iterations
    lo = min(bracket.lo, bracket.hi)
    converged = bracket.hi - lo <= config.gap_tolerance
    if not converged:
        msg = (f"repair solver did not close the gap: optimum lies in [{lo:.6g}, {bracket.hi:.6g}] "
               f"after {iterations} iterations; returning the best feasible map")
        if config.strict:
            raise NotConverged(msg)
        logger.warning(msg)

    result_map = RepairMap(joint.feature_names, tuple(prob.sources), tuple(prob.targets), bracket.best)
    logger.debug("repair solver: objective=%.6g lower_bound=%.6g iterations=%d", bracket.hi, lo, iterations)
    return SolveResult(result_map, bracket.hi, prob.violation(bracket.best), converged, iterations, lo)


def relaxation_probe(joint: JointDistribution, config: OptimizeConfig, factor: float = 10.0,
                     warm_start: bool = True) -> Tuple[SolveResult, SolveResult]:
    """Solve, then re-solve with every distortion budget multiplied by ``factor``.

    With ``warm_start`` the relaxed solve starts from the tight solution, which
    stays feasible, so it can only match or improve it. Without it the relaxed
    problem is solved from scratch.
    """

    tight = solve_repair_map(joint, config)
    budget = config.distortion_budget
    if isinstance(budget, Mapping):
        relaxed_budget: Union[float, Dict[Cell, float]] = {k: v * factor for k, v in budget.items()}
    else:
        relaxed_budget = float(budget) * factor
    relaxed = solve_repair_map(joint, replace(config, distortion_budget=relaxed_budget),
                               initial=tight.repair_map if warm_start else None)
    return tight, relaxed


# ──────────────── certification ────────────────

@dataclass(frozen=True)
class ConstraintReport:
    row_sum_error: float
    min_entry: float
    epsilon_excess: Dict[Tuple[int, int], float]
    distortion_excess: Dict[Cell, float]
    tolerance: float

    @property
    def worst_excess(self) -> float:
        values = list(self.epsilon_excess.values()) + list(self.distortion_excess.values())
        return max(values) if values else 0.0

    @property
    def ok(self) -> bool:
        return (self.row_sum_error <= 1e-9 and self.min_entry >= 0.0
                and self.worst_excess <= self.tolerance)


def check_repair_map(joint: JointDistribution, repair_map: RepairMap, config: OptimizeConfig,
                     tolerance: Optional[float] = None) -> ConstraintReport:
    """Re-verify a map against the epsilon and distortion constraints, from the raw cells."""

    tol = config.tolerance if tolerance is None else tolerance
    table = repair_map.table
    row_err = float(np.abs(table.sum(axis=1) - 1.0).max()) if table.size else 0.0
    min_entry = float(table.min()) if table.size else 0.0

    mass = {cell: float(q) for cell, q in zip(joint.cells, joint.probs)}
    group: Dict[int, float] = {0: 0.0, 1: 0.0}
    favorable: Dict[int, float] = {0: 0.0, 1: 0.0}
    distortion_excess: Dict[Cell, float] = {}
    for i, cell in enumerate(repair_map.source_cells):
        x, y, z = cell
        w = mass.get(cell, 0.0)
        group[z] += w
        expected = 0.0
        for j, target in enumerate(repair_map.target_cells):
            prob = float(table[i, j])
            if target[1] == 1:
                favorable[z] += w * prob
            expected += prob * config.cost((x, y), target)
        distortion_excess[cell] = expected - config.budget_for(cell)

    p_t = config.target_marginal if config.target_marginal is not None else tuple(joint.label_marginal())
    epsilon_excess: Dict[Tuple[int, int], float] = {}
    for z in (0, 1):
        if group[z] == 0.0:
            continue
        p_fav = favorable[z] / group[z]
        for y, p_y in ((1, p_fav), (0, 1.0 - p_fav)):
            epsilon_excess[(y, z)] = abs(p_y - p_t[y]) - config.epsilon_for(y, z)
    return ConstraintReport(row_err, min_entry, epsilon_excess, distortion_excess, tol)


# ──────────────── sampling ────────────────

def _row_uniforms(seed: int, row_ids: np.ndarray) -> np.ndarray:
    """One uniform per row, indexed by row_id so row order never changes a draw."""
    if len(row_ids) == 0:
        return np.zeros(0)
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.random(int(row_ids.max()) + 1)[row_ids]


def apply_repair(data: Dataset, repair_map: RepairMap, seed: int) -> Dataset:
    """Redraw (x, y) of every row from its source-cell row; the protected column is kept."""

    names = list(repair_map.feature_names)
    index = repair_map.source_index()
    y = data.labels()
    z = data.groups()
    xs = data.frame[names].itertuples(index=False, name=None) if names else iter([()] * len(data))
    rows: List[int] = []
    for row_id, x, yi, zi in zip(data.row_ids, xs, y, z):
        cell = (tuple(x), int(yi), int(zi))
        i = index.get(cell)
        if i is None:
            raise UnmappedCell(int(row_id), cell)
        rows.append(i)

    cum = np.cumsum(repair_map.table, axis=1)
    cum[:, -1] = 1.0
    u = _row_uniforms(seed, data.row_ids)
    choice = (cum[rows] <= u[:, None]).sum(axis=1)

    frame = data.frame.copy()
    targets = repair_map.target_cells
    if names:
        new_x = [targets[t][0] for t in choice]
        for j, name in enumerate(names):
            frame[name] = [x[j] for x in new_x]
    frame[data.schema.label] = [data.label_value(targets[t][1]) for t in choice]
    return data.with_frame(frame)


def knobs_summary(config: OptimizeConfig) -> Dict[str, object]:
    out = config.knobs()
    out["note"] = C_TUNING_NOTE
    return out
