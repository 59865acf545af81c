"""The waste LP over item-to-level flow rates, and a configuration LP used to cross-check it."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import simplex
from .model import PackingInstance

LINEAR_WASTE_THRESHOLD = 1e-7
MAX_CONFIGS = 10**6


class ExplosionGuard(RuntimeError):
    pass


class WasteClass(enum.Enum):
    LINEAR_WASTE = "LW"
    PERFECTLY_PACKABLE = "PP"


@dataclass
class WasteLp:
    capacity: int
    sizes: tuple[int, ...]
    probs: tuple[float, ...]
    variables: list[tuple[int, int]]  # (type index j, level h), only those with s_j <= B - h
    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray

    @property
    def n_total_variables(self) -> int:
        return len(self.sizes) * self.capacity

    def fixed_zero(self) -> list[tuple[int, int]]:
        """(j, h) pairs whose flow is forced to zero because the item cannot fit."""
        B = self.capacity
        return [(j, h) for j, s in enumerate(self.sizes) for h in range(B) if s > B - h]

    def objective(self, flows: dict[tuple[int, int], float]) -> float:
        """Waste per item from the level-balance form of the objective."""
        B = self.capacity
        total = 0.0
        for h in range(1, B):
            created = sum(flows.get((j, h - s), 0.0) for j, s in enumerate(self.sizes) if h - s >= 0)
            destroyed = sum(flows.get((j, h), 0.0) for j in range(len(self.sizes)))
            total += (B - h) * (created - destroyed)
        return total


@dataclass
class WasteLpSolution:
    waste_rate: float
    flows: dict[tuple[int, int], float]
    status: str
    iterations: int = 0

    def nonzero_flows(self, sizes, tol: float = 1e-12):
        return [(sizes[j], h, v) for (j, h), v in sorted(self.flows.items()) if v > tol]


def build_waste_lp(instance: PackingInstance) -> WasteLp:
    B = instance.capacity
    sizes = instance.workload.sizes
    probs = instance.workload.probs
    J = len(sizes)
    variables = [(j, h) for j in range(J) for h in range(B) if sizes[j] <= B - h]
    col = {v: k for k, v in enumerate(variables)}
    n = len(variables)

    c = np.zeros(n)
    for k, (j, h) in enumerate(variables):
        top = h + sizes[j]
        if top <= B - 1:
            c[k] += B - top  # creates a bin at level top
        if h >= 1:
            c[k] -= B - h  # destroys a bin at level h

    # level balance: sum_j v(j,h) - sum_j v(j,h-s_j) <= 0 for h in 1..B-1;
    # flows out of negative levels do not exist
    A_ub = np.zeros((B - 1, n))
    for h in range(1, B):
        for j, s in enumerate(sizes):
            if (j, h) in col:
                A_ub[h - 1, col[(j, h)]] += 1.0
            if h - s >= 0:
                A_ub[h - 1, col[(j, h - s)]] -= 1.0
    b_ub = np.zeros(B - 1)

    A_eq = np.zeros((J, n))
    for k, (j, _) in enumerate(variables):
        A_eq[j, k] = 1.0
    b_eq = np.asarray(probs, dtype=float)
    return WasteLp(B, sizes, probs, variables, c, A_ub, b_ub, A_eq, b_eq)


def solve_lp(lp: WasteLp) -> WasteLpSolution:
    res = simplex.solve(lp.c, lp.A_ub, lp.b_ub, lp.A_eq, lp.b_eq)
    flows = {v: float(x) for v, x in zip(lp.variables, res.x)}
    waste = max(0.0, lp.objective(flows))
    if waste < 1e-12:
        waste = 0.0
    return WasteLpSolution(waste, flows, "optimal", res.iterations)


def waste_rate(instance: PackingInstance) -> float:
    return solve_lp(build_waste_lp(instance)).waste_rate


def classify(instance: PackingInstance) -> WasteClass:
    if waste_rate(instance) > LINEAR_WASTE_THRESHOLD:
        return WasteClass.LINEAR_WASTE
    return WasteClass.PERFECTLY_PACKABLE


# -- configuration LP -------------------------------------------------------


@dataclass(frozen=True)
class BinConfiguration:
    counts: tuple[int, ...]
    level: int
    maximal: bool

    @property
    def item_count(self) -> int:
        return sum(self.counts)


def enumerate_maximal_configs(instance_or_capacity, sizes=None, limit: int = MAX_CONFIGS) -> list[BinConfiguration]:
    """All count vectors that fit in a bin and admit no further item."""
    if sizes is None:
        B = instance_or_capacity.capacity
        sizes = instance_or_capacity.workload.sizes
    else:
        B = instance_or_capacity
    sizes = tuple(sizes)
    smallest = min(sizes)
    out: list[BinConfiguration] = []
    counts = [0] * len(sizes)

    def rec(j: int, level: int) -> None:
        if j == len(sizes):
            if B - level < smallest:
                if len(out) >= limit:
                    raise ExplosionGuard(f"more than {limit} maximal configurations")
                out.append(BinConfiguration(tuple(counts), level, True))
            return
        s = sizes[j]
        for k in range((B - level) // s, -1, -1):
            counts[j] = k
            rec(j + 1, level + k * s)
        counts[j] = 0

    rec(0, 0)
    return out


def _config_lp(instance: PackingInstance):
    B = instance.capacity
    sizes = instance.workload.sizes
    probs = np.asarray(instance.workload.probs)
    configs = enumerate_maximal_configs(instance)
    # bins of a maximal configuration may carry fewer items than listed, so
    # coverage is an inequality; waste = B * bins - mean item size
    A = np.array([c.counts for c in configs], dtype=float).T
    res = linprog(
        c=np.full(len(configs), float(B)),
        A_ub=-A,
        b_ub=-probs,
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise simplex.NumericalFailure(f"configuration LP failed: {res.message}")
    waste = float(res.fun) - instance.workload.mean_size
    return max(0.0, waste), configs, res.x


def solve_config_lp(instance: PackingInstance) -> float:
    """Per-item optimal waste from the configuration formulation."""
    waste, _, _ = _config_lp(instance)
    return 0.0 if waste < 1e-12 else waste


def perfect_tiling(instance: PackingInstance) -> list[tuple[BinConfiguration, float]]:
    """Configurations with bins-per-item rates forming a perfect packing.

    Raises ValueError when the distribution is not perfectly packable.
    """
    waste, configs, x = _config_lp(instance)
    if waste > LINEAR_WASTE_THRESHOLD:
        raise ValueError(f"no perfect packing: waste rate {waste:.3g}")
    B = instance.capacity
    out = [(c, float(v)) for c, v in zip(configs, x) if v > 1e-12]
    if any(c.level != B for c, _ in out):
        raise ValueError("optimal configuration mix is not perfect")
    return out


def flows_table(solution: WasteLpSolution, sizes) -> list[dict]:
    return [{"size": s, "level": h, "rate": v} for s, h, v in solution.nonzero_flows(sizes)]
