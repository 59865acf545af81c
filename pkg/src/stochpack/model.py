"""Core domain types: workloads, bins, the level profile and waste accounting."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

MAX_CAPACITY = 1 << 16
PROB_TOL = 1e-9


class IllegalPlacement(ValueError):
    pass


class UnknownBin(KeyError):
    pass


class UnknownItem(KeyError):
    pass


class InvalidDistribution(ValueError):
    pass


@dataclass(frozen=True)
class ItemClass:
    size: int
    prob: float
    mean_residence: float | None = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise InvalidDistribution(f"item size must be a positive integer, got {self.size!r}")
        if not (0.0 < self.prob <= 1.0):
            raise InvalidDistribution(f"probability must lie in (0, 1], got {self.prob!r}")
        if self.mean_residence is not None and not self.mean_residence > 0:
            raise InvalidDistribution(f"mean residence must be positive, got {self.mean_residence!r}")


@dataclass(frozen=True)
class Workload:
    """Discrete item-size distribution, sizes strictly increasing."""

    classes: tuple[ItemClass, ...]

    def __post_init__(self):
        if not self.classes:
            raise InvalidDistribution("workload needs at least one item class")
        sizes = [c.size for c in self.classes]
        if any(a >= b for a, b in zip(sizes, sizes[1:])):
            raise InvalidDistribution(f"sizes must be strictly increasing, got {sizes}")
        total = math.fsum(c.prob for c in self.classes)
        if abs(total - 1.0) > 1e-12:
            raise InvalidDistribution(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_lists(
        cls,
        sizes: Sequence[int],
        probs: Sequence[float],
        mean_residences: Sequence[float] | None = None,
    ) -> "Workload":
        """Build a workload from parallel lists.

        Probabilities summing to 1 within 1e-9 are renormalised; anything
        further off raises InvalidDistribution. Classes are sorted by size.
        """
        if len(sizes) != len(probs):
            raise InvalidDistribution("sizes and probs differ in length")
        if mean_residences is not None and len(mean_residences) != len(sizes):
            raise InvalidDistribution("sizes and mean residences differ in length")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_TOL:
            raise InvalidDistribution(f"probabilities sum to {total!r}, not 1")
        rows = sorted(
            zip(sizes, probs, mean_residences if mean_residences is not None else [None] * len(sizes)),
            key=lambda r: r[0],
        )
        return cls(tuple(ItemClass(int(s), p / total, m) for s, p, m in rows))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(c.size for c in self.classes)

    @property
    def probs(self) -> tuple[float, ...]:
        return tuple(c.prob for c in self.classes)

    @property
    def mean_size(self) -> float:
        return math.fsum(c.size * c.prob for c in self.classes)

    def class_of_size(self, size: int) -> ItemClass:
        for c in self.classes:
            if c.size == size:
                return c
        raise KeyError(size)


@dataclass(frozen=True)
class PackingInstance:
    capacity: int
    workload: Workload

    def __post_init__(self):
        if int(self.capacity) != self.capacity or self.capacity < 2:
            raise InvalidDistribution(f"capacity must be an integer >= 2, got {self.capacity!r}")
        if self.capacity >= MAX_CAPACITY:
            raise InvalidDistribution(f"capacity {self.capacity} exceeds the {MAX_CAPACITY - 1} ceiling")
        if self.workload.sizes[-1] >= self.capacity:
            raise InvalidDistribution("largest item size must be smaller than the capacity")

    @classmethod
    def of(cls, capacity: int, sizes: Sequence[int], probs: Sequence[float]) -> "PackingInstance":
        return cls(int(capacity), Workload.from_lists(sizes, probs))


class LevelProfile:
    """Counts N_h of bins at each level h = 1..B.

    Index ``B`` holds closed (full) bins; policies never read it except
    through the closing penalty.
    """

    __slots__ = ("capacity", "counts")

    def __init__(self, capacity: int, counts: Iterable[int] | None = None):
        self.capacity = capacity
        if counts is None:
            self.counts = [0] * (capacity + 1)
        else:
            self.counts = list(counts)
            if len(self.counts) != capacity + 1:
                raise ValueError("counts must have length capacity + 1 (index 0 unused)")
            if any(c < 0 for c in self.counts):
                raise ValueError("level counts must be nonnegative")

    @classmethod
    def from_open_levels(cls, capacity: int, open_counts: Sequence[int], closed: int = 0) -> "LevelProfile":
        """Profile from (N_1, ..., N_{B-1}) plus a count of level-B bins."""
        if len(open_counts) != capacity - 1:
            raise ValueError(f"expected {capacity - 1} open-level counts")
        return cls(capacity, [0, *open_counts, closed])

    def __getitem__(self, h: int) -> int:
        if h <= 0 or h > self.capacity:
            return 0
        return self.counts[h]

    def open_counts(self) -> tuple[int, ...]:
        return tuple(self.counts[1 : self.capacity])

    def copy(self) -> "LevelProfile":
        return LevelProfile(self.capacity, self.counts)

    def __eq__(self, other):
        return isinstance(other, LevelProfile) and self.capacity == other.capacity and self.counts == other.counts

    def __repr__(self):
        return f"LevelProfile(B={self.capacity}, open={self.open_counts()}, closed={self.counts[self.capacity]})"


@dataclass(frozen=True)
class ExistingAtLevel:
    level: int


@dataclass(frozen=True)
class NewBinWithHole:
    hole: int = 0


Placement = ExistingAtLevel | NewBinWithHole


def placement_base(placement: Placement) -> int:
    """Level the item is placed on top of."""
    return placement.level if isinstance(placement, ExistingAtLevel) else placement.hole


@dataclass
class Bin:
    id: int
    hole: int = 0
    items: dict[int, int] = field(default_factory=dict)
    level: int = 0

    @property
    def sizes(self) -> list[int]:
        return list(self.items.values())


def config_key(bin: Bin) -> str:
    """Canonical configuration string, e.g. ``"h1+2+2"`` or ``"7+7+3+3"``."""
    return format_config(bin.hole, bin.items.values())


def format_config(hole: int, sizes: Iterable[int]) -> str:
    parts = [str(s) for s in sorted(sizes, reverse=True)]
    if hole:
        parts.insert(0, f"h{hole}")
    return "+".join(parts)


def _config_tuple(bin: Bin) -> tuple:
    return (bin.hole, tuple(sorted(bin.items.values(), reverse=True)))


@dataclass(frozen=True)
class WasteReport:
    gap_waste: int
    true_waste: int
    hole_volume: int


BinSelector = Callable[[int], int]
"""Maps a population size k >= 1 to an index in [0, k)."""


def first_bin(k: int) -> int:
    return 0


class SystemState:
    """Bins, per-level bin index and running totals for one simulation run.

    Bins at each level are kept in a list with a position map so that a
    uniformly random bin of a given level can be drawn and removed in O(1).
    Bins that lose their last item are deleted.
    """

    def __init__(self, capacity: int, track_configs: bool = True):
        self.capacity = capacity
        self.bins: dict[int, Bin] = {}
        self.level_index: list[list[int]] = [[] for _ in range(capacity + 1)]
        self._pos: dict[int, int] = {}
        self.profile = LevelProfile(capacity)
        self.total_item_volume = 0
        self.item_count = 0
        self.hole_volume = 0
        self.item_bin: dict[int, int] = {}
        self.track_configs = track_configs
        self.config_counts: Counter = Counter()
        self._next_bin_id = 0

    # -- index maintenance -------------------------------------------------

    def _index_add(self, bin: Bin) -> None:
        lst = self.level_index[bin.level]
        self._pos[bin.id] = len(lst)
        lst.append(bin.id)
        self.profile.counts[bin.level] += 1

    def _index_remove(self, bin: Bin) -> None:
        lst = self.level_index[bin.level]
        i = self._pos.pop(bin.id)
        last = lst.pop()
        if last != bin.id:
            lst[i] = last
            self._pos[last] = i
        self.profile.counts[bin.level] -= 1

    def _config_remove(self, bin: Bin) -> None:
        key = _config_tuple(bin)
        c = self.config_counts[key] - 1
        if c:
            self.config_counts[key] = c
        else:
            del self.config_counts[key]

    # -- mutation ----------------------------------------------------------

    def new_bin(self, hole: int = 0) -> Bin:
        bin = Bin(self._next_bin_id, hole, {}, hole)
        self._next_bin_id += 1
        return bin

    def apply_placement(
        self,
        placement: Placement,
        item: tuple[int, int],
        pick: BinSelector = first_bin,
    ) -> int:
        """Put ``item = (item_id, size)`` where ``placement`` says; return the bin id."""
        item_id, size = item
        B = self.capacity
        if item_id in self.item_bin:
            raise IllegalPlacement(f"item {item_id} is already packed")
        if isinstance(placement, ExistingAtLevel):
            h = placement.level
            if not 1 <= h < B or h + size > B:
                raise IllegalPlacement(f"level {h} + size {size} exceeds capacity {B}")
            candidates = self.level_index[h]
            if not candidates:
                raise IllegalPlacement(f"no bin at level {h}")
            bin = self.bins[candidates[pick(len(candidates))]]
            self._index_remove(bin)
            if self.track_configs:
                self._config_remove(bin)
        elif isinstance(placement, NewBinWithHole):
            h = placement.hole
            if not 0 <= h < B or h + size > B:
                raise IllegalPlacement(f"hole {h} + size {size} exceeds capacity {B}")
            bin = self.new_bin(h)
            self.bins[bin.id] = bin
            self.hole_volume += h
        else:
            raise IllegalPlacement(f"not a placement: {placement!r}")
        bin.items[item_id] = size
        bin.level += size
        self._index_add(bin)
        if self.track_configs:
            self.config_counts[_config_tuple(bin)] += 1
        self.item_bin[item_id] = bin.id
        self.total_item_volume += size
        self.item_count += 1
        return bin.id

    def apply_departure(self, bin_id: int, item_id: int) -> None:
        """Remove an item; a bin left with no items is deleted together with its hole."""
        bin = self.bins.get(bin_id)
        if bin is None:
            raise UnknownBin(bin_id)
        size = bin.items.get(item_id)
        if size is None:
            raise UnknownItem(item_id)
        self._index_remove(bin)
        if self.track_configs:
            self._config_remove(bin)
        del bin.items[item_id]
        del self.item_bin[item_id]
        bin.level -= size
        self.total_item_volume -= size
        self.item_count -= 1
        if bin.items:
            self._index_add(bin)
            if self.track_configs:
                self.config_counts[_config_tuple(bin)] += 1
        else:
            self.hole_volume -= bin.hole
            del self.bins[bin_id]

    def depart_item(self, item_id: int) -> None:
        bin_id = self.item_bin.get(item_id)
        if bin_id is None:
            raise UnknownItem(item_id)
        self.apply_departure(bin_id, item_id)

    def add_bin(self, hole: int, items: Sequence[tuple[int, int]]) -> int:
        """Materialise a pre-filled bin (initial states)."""
        if not items:
            raise IllegalPlacement("cannot add an empty bin")
        level = hole + sum(s for _, s in items)
        if level > self.capacity or hole < 0:
            raise IllegalPlacement(f"bin level {level} exceeds capacity {self.capacity}")
        bin = self.new_bin(hole)
        for item_id, size in items:
            if item_id in self.item_bin:
                raise IllegalPlacement(f"item {item_id} is already packed")
            bin.items[item_id] = size
            self.item_bin[item_id] = bin.id
            self.total_item_volume += size
            self.item_count += 1
        bin.level = level
        self.bins[bin.id] = bin
        self.hole_volume += hole
        self._index_add(bin)
        if self.track_configs:
            self.config_counts[_config_tuple(bin)] += 1
        return bin.id

    # -- queries -----------------------------------------------------------

    @property
    def bin_count(self) -> int:
        return len(self.bins)

    def configs(self) -> dict[str, int]:
        """Configuration string -> number of bins."""
        if self.track_configs:
            return {format_config(h, sizes): n for (h, sizes), n in self.config_counts.items()}
        return dict(Counter(config_key(b) for b in self.bins.values()))

    def check(self) -> None:
        """Assert every structural invariant; raises AssertionError on failure."""
        B = self.capacity
        assert self.profile.counts[0] == 0
        for h in range(B + 1):
            assert self.profile.counts[h] == len(self.level_index[h]), f"level {h} index mismatch"
            for bid in self.level_index[h]:
                assert self.bins[bid].level == h
        volume = count = holes = 0
        for b in self.bins.values():
            assert b.items, "empty bin retained"
            assert b.level == b.hole + sum(b.items.values()) <= B
            assert b.level > b.hole
            volume += sum(b.items.values())
            count += len(b.items)
            holes += b.hole
        assert volume == self.total_item_volume
        assert count == self.item_count == len(self.item_bin)
        assert holes == self.hole_volume
        assert sum(self.profile.counts) == len(self.bins)
        if self.track_configs:
            assert sum(self.config_counts.values()) == len(self.bins)


def gap_waste(profile: LevelProfile) -> int:
    B = profile.capacity
    return sum(profile.counts[h] * (B - h) for h in range(1, B))


def compute_waste(state: SystemState) -> WasteReport:
    gap = gap_waste(state.profile)
    true = state.capacity * len(state.bins) - state.total_item_volume
    return WasteReport(gap, true, state.hole_volume)
