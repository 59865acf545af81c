"""Ground truth for tests: full-Lagrangian differences, exact offline OPT, LP lower bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

from .model import ExistingAtLevel, IllegalPlacement, LevelProfile, NewBinWithHole, PackingInstance, Placement
from .wastelp import ExplosionGuard, enumerate_maximal_configs, waste_rate

MAX_DP_STATES = 10**7


# -- Lagrangians ---------------------------------------------------------------


def quad_lagrangian(counts: Sequence[int], capacity: int, volume: float, eps: float) -> float:
    """B * (closed bins) - volume + (eps/2) * sum of squared open-level counts."""
    B = capacity
    return B * counts[B] - volume + 0.5 * eps * math.fsum(counts[h] ** 2 for h in range(1, B))


def exp_lagrangian(counts: Sequence[int], capacity: int, eps: float) -> float:
    """Gap waste of open bins + (B/eps) * sum of exp(-eps * N_h)."""
    B = capacity
    primal = sum((B - h) * counts[h] for h in range(1, B))
    return primal + (B / eps) * math.fsum(math.exp(-eps * counts[h]) for h in range(1, B))


def apply_to_counts(counts: Sequence[int], capacity: int, placement: Placement, size: int) -> list[int]:
    out = list(counts)
    if isinstance(placement, ExistingAtLevel):
        h = placement.level
        if h < 1 or out[h] <= 0:
            raise IllegalPlacement(f"no bin at level {h}")
    else:
        h = placement.hole
    if h + size > capacity or h < 0:
        raise IllegalPlacement(f"level {h} + size {size} exceeds capacity {capacity}")
    if isinstance(placement, ExistingAtLevel):
        out[h] -= 1
    out[h + size] += 1
    return out


def lagrangian_delta(profile: LevelProfile, placement: Placement, size: int, eps: float, kind: str) -> float:
    """Full Lagrangian after minus before the placement (includes the ``-s`` term)."""
    B = profile.capacity
    before = profile.counts
    after = apply_to_counts(before, B, placement, size)
    if kind == "quad":
        return quad_lagrangian(after, B, size, eps) - quad_lagrangian(before, B, 0, eps)
    if kind == "exp":
        if isinstance(placement, NewBinWithHole) and placement.hole:
            raise IllegalPlacement("the exponential rule never opens a bin with a hole")
        return exp_lagrangian(after, B, eps) - exp_lagrangian(before, B, eps)
    raise ValueError(f"kind must be 'quad' or 'exp', got {kind!r}")


# -- exact offline OPT ---------------------------------------------------------


@dataclass(frozen=True)
class OptResult:
    min_bins: int
    waste: int


def exact_offline_opt(counts: Sequence[int], sizes: Sequence[int], capacity: int) -> OptResult:
    """Minimum number of bins for ``counts[j]`` items of size ``sizes[j]``.

    Dynamic program over remaining-count vectors; each bin takes a maximal
    configuration truncated to what remains.
    """
    counts = tuple(int(c) for c in counts)
    sizes = tuple(int(s) for s in sizes)
    if any(s > capacity for s in sizes):
        raise ValueError("item larger than the bin")
    keep = [j for j, c in enumerate(counts) if c > 0]
    counts = tuple(counts[j] for j in keep)
    sizes = tuple(sizes[j] for j in keep)
    volume = sum(c * s for c, s in zip(counts, sizes))
    if not counts:
        return OptResult(0, 0)
    states = reduce(lambda a, c: a * (c + 1), counts, 1)
    if states > MAX_DP_STATES:
        raise ExplosionGuard(f"DP state space {states} exceeds {MAX_DP_STATES}")
    configs = [c.counts for c in enumerate_maximal_configs(capacity, sizes)]

    # memo keyed by count vector; states visited in lexicographic order
    dims = [c + 1 for c in counts]
    strides = [1] * len(dims)
    for j in range(len(dims) - 2, -1, -1):
        strides[j] = strides[j + 1] * dims[j + 1]
    best = [0] * states
    J = len(counts)
    for idx in range(1, states):
        r = []
        rem = idx
        for j in range(J):
            q, rem = divmod(rem, strides[j])
            r.append(q)
        m = states
        for c in configs:
            nxt = idx
            for j in range(J):
                take = c[j] if c[j] < r[j] else r[j]
                nxt -= take * strides[j]
            if nxt != idx:
                v = best[nxt]
                if v < m:
                    m = v
        best[idx] = m + 1
    bins = best[states - 1]
    return OptResult(bins, bins * capacity - volume)


def branch_and_bound_opt(items: Sequence[int], capacity: int) -> int:
    """Exhaustive minimum bin count over explicit item lists (small inputs only)."""
    items = sorted(items, reverse=True)
    if not items:
        return 0
    lower = -(-sum(items) // capacity)
    best = [len(items)]
    loads: list[int] = []

    def rec(i: int) -> None:
        if len(loads) >= best[0]:
            return
        if i == len(items):
            best[0] = len(loads)
            return
        s = items[i]
        seen = set()
        for k in range(len(loads)):
            if loads[k] + s <= capacity and loads[k] not in seen:
                seen.add(loads[k])
                loads[k] += s
                rec(i + 1)
                loads[k] -= s
                if best[0] == lower:
                    return
        loads.append(s)
        rec(i + 1)
        loads.pop()

    rec(0)
    return best[0]


def lp_lower_bound(instance: PackingInstance, n: int) -> float:
    """Expected optimal waste for n items to first order: n times the LP waste rate."""
    if n <= 0:
        return 0.0
    return n * waste_rate(instance)
