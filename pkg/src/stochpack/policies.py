"""Placement rules: PD-quad, PD-exp, Sum-of-Squares and Best Fit.

Option scores are Lagrangian increments with the common ``-s`` term
dropped. Ties (within ``TIE_TOL``) prefer an existing bin over a new one,
a fuller existing bin, and then the smallest hole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .model import ExistingAtLevel, LevelProfile, NewBinWithHole, Placement

TIE_TOL = 1e-9


class InvalidHorizon(ValueError):
    pass


# -- epsilon schedules -------------------------------------------------------

QUAD_FIXED = "quad-fixed"
QUAD_ANYTIME = "quad-anytime"
EXP_FIXED = "exp-fixed"
EXP_ANYTIME = "exp-anytime"
_FAMILY = {QUAD_FIXED: "quad", QUAD_ANYTIME: "quad", EXP_FIXED: "exp", EXP_ANYTIME: "exp"}


@dataclass(frozen=True)
class EpsilonSchedule:
    """Step-size rule.

    ``departures_aware`` replaces the arrival index by the number of items in
    the system, which only makes sense for the anytime rules.
    """

    variant: str
    capacity: int
    horizon: int | None = None
    departures_aware: bool = False

    def __post_init__(self):
        if self.variant not in _FAMILY:
            raise ValueError(f"unknown schedule {self.variant!r}")
        if self.variant in (QUAD_FIXED, EXP_FIXED):
            if self.horizon is None or self.horizon < 1:
                raise InvalidHorizon(f"{self.variant} needs a positive horizon")
            if self.departures_aware:
                raise ValueError("departure-aware epsilon requires an anytime schedule")
        if self.variant == EXP_FIXED and self.horizon <= self.capacity:
            raise InvalidHorizon(f"exp-fixed needs horizon > B, got n={self.horizon}, B={self.capacity}")

    @property
    def family(self) -> str:
        return _FAMILY[self.variant]

    @property
    def fixed(self) -> bool:
        return self.variant in (QUAD_FIXED, EXP_FIXED)

    def __call__(self, t: int) -> float:
        return epsilon(self, t)


def epsilon(schedule: EpsilonSchedule, t: int) -> float:
    """Step size for the t-th arrival (or t items in system); t is clamped to >= 1."""
    B = schedule.capacity
    t = max(1, t)
    v = schedule.variant
    if v == QUAD_FIXED:
        return B * B / math.sqrt(2 * schedule.horizon)
    if v == QUAD_ANYTIME:
        return B * B / math.sqrt(4 * t)
    if v == EXP_FIXED:
        return math.sqrt(B / schedule.horizon)
    return math.sqrt(B / (2 * (B + t)))


# -- policy kinds ------------------------------------------------------------


@dataclass(frozen=True)
class PdQuad:
    schedule: EpsilonSchedule
    name = "pd-quad"


@dataclass(frozen=True)
class PdExp:
    schedule: EpsilonSchedule
    name = "pd-exp"


@dataclass(frozen=True)
class SumOfSquares:
    name = "ss"


@dataclass(frozen=True)
class BestFit:
    name = "bf"


PolicyKind = PdQuad | PdExp | SumOfSquares | BestFit


def make_policy(name: str, capacity: int, schedule: str = "anytime", horizon: int | None = None,
                departures: bool = False) -> PolicyKind:
    """Build a policy from CLI-style names: ``pd-quad``, ``pd-exp``, ``ss``, ``bf``."""
    name = name.lower()
    if name in ("ss", "sum-of-squares"):
        return SumOfSquares()
    if name in ("bf", "best-fit"):
        return BestFit()
    if schedule not in ("fixed", "anytime"):
        raise ValueError(f"schedule must be 'fixed' or 'anytime', got {schedule!r}")
    if name == "pd-quad":
        variant = QUAD_FIXED if schedule == "fixed" else QUAD_ANYTIME
        return PdQuad(EpsilonSchedule(variant, capacity, horizon if schedule == "fixed" else None, departures))
    if name == "pd-exp":
        variant = EXP_FIXED if schedule == "fixed" else EXP_ANYTIME
        return PdExp(EpsilonSchedule(variant, capacity, horizon if schedule == "fixed" else None, departures))
    raise ValueError(f"unknown policy {name!r}")


def policy_label(policy: PolicyKind) -> str:
    if isinstance(policy, (PdQuad, PdExp)):
        kind = "fixed" if policy.schedule.fixed else "anytime"
        return f"{policy.name}-{kind}"
    return policy.name


# -- scored options ----------------------------------------------------------


@dataclass(frozen=True)
class ScoredOption:
    placement: Placement
    delta_lagrangian: float


def pdquad_options(profile: LevelProfile, size: int, eps: float) -> list[ScoredOption]:
    B = profile.capacity
    N = profile.counts
    s = size
    out = []
    for h in range(0, B - s + 1):
        top = h + s
        n_h = N[h] if h >= 1 else 0
        if n_h > 0:
            if top < B:
                score = eps * (N[top] - n_h + 1)
            else:
                score = B + eps * (0.5 - n_h)
            out.append(ScoredOption(ExistingAtLevel(h), score))
        else:
            score = eps * (N[top] + 0.5) if top < B else float(B)
            out.append(ScoredOption(NewBinWithHole(h), score))
    return out


def pdexp_options(profile: LevelProfile, size: int, eps: float) -> list[ScoredOption]:
    B = profile.capacity
    N = profile.counts
    s = size
    k = B / eps
    exp = math.exp
    out = [ScoredOption(NewBinWithHole(0), B + k * (exp(-eps * (N[s] + 1)) - exp(-eps * N[s])))]
    for h in range(1, B - s + 1):
        n_h = N[h]
        if n_h <= 0:
            continue
        top = h + s
        destroy = exp(-eps * (n_h - 1)) - exp(-eps * n_h)
        if top < B:
            score = k * (exp(-eps * (N[top] + 1)) - exp(-eps * N[top]) + destroy)
        else:
            score = k * destroy
        out.append(ScoredOption(ExistingAtLevel(h), score))
    return out


def ss_options(profile: LevelProfile, size: int) -> list[ScoredOption]:
    """Sum of squares of open-level counts after each feasible placement."""
    B = profile.capacity
    N = profile.counts
    s = size
    base = sum(N[h] * N[h] for h in range(1, B))
    out = []

    def bump(h: int, d: int) -> int:
        if h <= 0 or h >= B:
            return 0
        return (N[h] + d) ** 2 - N[h] ** 2

    out.append(ScoredOption(NewBinWithHole(0), float(base + bump(s, 1))))
    for h in range(1, B - s + 1):
        if N[h] > 0:
            out.append(ScoredOption(ExistingAtLevel(h), float(base + bump(h, -1) + bump(h + s, 1))))
    return out


def _preference(p: Placement) -> tuple[int, int]:
    if isinstance(p, ExistingAtLevel):
        return (0, -p.level)
    return (1, p.hole)


def argmin(options: Sequence[ScoredOption], tol: float = TIE_TOL) -> Placement:
    best = min(o.delta_lagrangian for o in options)
    near = [o.placement for o in options if o.delta_lagrangian <= best + tol]
    return min(near, key=_preference)


def ss_choose(profile: LevelProfile, size: int) -> Placement:
    return argmin(ss_options(profile, size))


def bf_choose(profile: LevelProfile, size: int) -> Placement:
    N = profile.counts
    for h in range(profile.capacity - size, 0, -1):
        if N[h] > 0:
            return ExistingAtLevel(h)
    return NewBinWithHole(0)


def options(policy: PolicyKind, profile: LevelProfile, size: int, t: int) -> list[ScoredOption]:
    if isinstance(policy, PdQuad):
        return pdquad_options(profile, size, epsilon(policy.schedule, t))
    if isinstance(policy, PdExp):
        return pdexp_options(profile, size, epsilon(policy.schedule, t))
    if isinstance(policy, SumOfSquares):
        return ss_options(profile, size)
    raise TypeError(f"{policy!r} has no scored options")


def choose(policy: PolicyKind, profile: LevelProfile, size: int, t: int) -> Placement:
    """Placement for an item of ``size``; ``t`` feeds the epsilon schedule."""
    if not 1 <= size < profile.capacity:
        raise ValueError(f"item size {size} outside 1..{profile.capacity - 1}")
    if isinstance(policy, BestFit):
        return bf_choose(profile, size)
    return argmin(options(policy, profile, size, t))
