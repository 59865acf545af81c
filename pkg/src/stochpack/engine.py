"""Simulation drivers.

``run_stream`` packs an i.i.d. arrival stream with no departures and samples
every ``snapshot_every`` items. ``run_timed`` is an event-driven simulator
with Poisson arrivals, exponential residence times and piecewise-constant
workloads.
"""

from __future__ import annotations

import bisect
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernel, policies
from .model import (
    ExistingAtLevel,
    IllegalPlacement,
    InvalidDistribution,
    ItemClass,
    NewBinWithHole,
    PackingInstance,
    SystemState,
    Workload,
    compute_waste,
)
from .policies import BestFit, PdExp, PdQuad, PolicyKind, SumOfSquares
from .wastelp import perfect_tiling


class EmptyPhaseList(ValueError):
    pass


class InfeasibleInitial(ValueError):
    pass


class ScenarioError(ValueError):
    """Schema or validation problem in a scenario document; ``path`` locates it."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvariantFailure(RuntimeError):
    pass


# -- random streams ------------------------------------------------------------

STREAMS = ("arrivals", "types", "lifetimes", "selection", "initial")


class UniformStream:
    """Buffered uniform draws in [0, 1) from one PCG64 sub-stream."""

    __slots__ = ("gen", "_buf", "_i", "_block")

    def __init__(self, seed_seq: np.random.SeedSequence, block: int = 4096):
        self.gen = np.random.Generator(np.random.PCG64(seed_seq))
        self._buf: list[float] = []
        self._i = 0
        self._block = block

    def random(self) -> float:
        i = self._i
        if i >= len(self._buf):
            self._buf = self.gen.random(self._block).tolist()
            i = 0
        self._i = i + 1
        return self._buf[i]

    def index(self, k: int) -> int:
        return int(self.random() * k)


def spawn_streams(seed: int) -> dict[str, UniformStream]:
    """Independent sub-streams so that the policy cannot perturb the arrival process."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: UniformStream(ss) for name, ss in zip(STREAMS, children)}


def sample_exponential(mean: float, u: float) -> float:
    """Inverse-CDF draw ``-mean * ln(U)`` for ``U`` in (0, 1]."""
    if not mean > 0:
        raise ValueError("mean must be positive")
    return -mean * math.log(u)


def exponential(stream: UniformStream, mean: float) -> float:
    return -mean * math.log(1.0 - stream.random())


# -- traces ----------------------------------------------------------------------


@dataclass
class TraceSample:
    time: float
    item_count: int
    bin_count: int
    gap_waste: int
    true_waste: int
    hole_volume: int
    levels: tuple[int, ...]  # N_1 .. N_{B-1}
    closed: int  # N_B
    configs: dict[str, int] = field(default_factory=dict)

    def top_configs(self, k: int = 12) -> list[tuple[str, int]]:
        return sorted(self.configs.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def snapshot(state: SystemState, time: float, configs: bool = True) -> TraceSample:
    w = compute_waste(state)
    counts = state.profile.counts
    B = state.capacity
    return TraceSample(
        time=time,
        item_count=state.item_count,
        bin_count=state.bin_count,
        gap_waste=w.gap_waste,
        true_waste=w.true_waste,
        hole_volume=w.hole_volume,
        levels=tuple(counts[1:B]),
        closed=counts[B],
        configs=state.configs() if configs else {},
    )


# -- arrival-only stream -----------------------------------------------------------


@dataclass(frozen=True)
class StreamRun:
    instance: PackingInstance
    policy: PolicyKind
    n: int
    seed: int = 0
    snapshot_every: int = 1000

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


@dataclass
class StreamResult:
    samples: list[TraceSample]
    bound_violations: int = 0


def draw_types(workload: Workload, n: int, stream: UniformStream) -> np.ndarray:
    cum = np.cumsum(workload.probs)
    cum[-1] = 1.0
    u = stream.gen.random(n)
    return np.searchsorted(cum, u, side="right").astype(np.int64)


def snapshot_points(n: int, every: int) -> list[int]:
    pts = list(range(every, n + 1, every))
    if not pts or pts[-1] != n:
        pts.append(n)
    return pts


def _schedule_code(policy: PolicyKind) -> tuple[int, int]:
    if isinstance(policy, (PdQuad, PdExp)):
        sch = policy.schedule
        return _kernel.SCHEDULE_CODES[sch.variant], sch.horizon or 0
    return 1, 0


def run_stream(run: StreamRun, fast: bool = True, check_bound: bool = False) -> StreamResult:
    """Pack ``run.n`` i.i.d. items; deterministic per seed.

    ``fast`` uses the compiled level-count loop; otherwise every item goes
    through ``policies.choose`` and ``SystemState.apply_placement``. Both
    consume the same type draws and yield identical traces (no configuration
    counts on the fast path). ``check_bound`` counts steps at which the
    PD-quad level bound N_h <= (B+1) h / eps fails.
    """
    inst = run.instance
    B = inst.capacity
    streams = spawn_streams(run.seed)
    types = draw_types(inst.workload, run.n, streams["types"])
    points = snapshot_points(run.n, run.snapshot_every)
    if check_bound and not isinstance(run.policy, PdQuad):
        raise ValueError("the level bound only applies to PD-quad")
    if fast:
        return _run_stream_fast(run, types, points, check_bound)

    sizes = inst.workload.sizes
    state = SystemState(B)
    select = streams["selection"]
    samples = []
    violations = 0
    j = 0
    for i in range(run.n):
        t = i + 1
        size = sizes[types[i]]
        placement = policies.choose(run.policy, state.profile, size, t)
        state.apply_placement(placement, (i, size), select.index)
        if check_bound:
            eps = policies.epsilon(run.policy.schedule, t)
            N = state.profile.counts
            if any(N[h] > (B + 1) * h / eps for h in range(1, B)):
                violations += 1
        if points[j] == t:
            samples.append(snapshot(state, t))
            j += 1
    return StreamResult(samples, violations)


def _run_stream_fast(run: StreamRun, types: np.ndarray, points: list[int], check_bound: bool) -> StreamResult:
    B = run.instance.capacity
    code, horizon = _schedule_code(run.policy)
    counts, volume, holes, violations = _kernel.stream_kernel(
        B,
        np.asarray(run.instance.workload.sizes, dtype=np.int64),
        types,
        _kernel.POLICY_CODES[run.policy.name],
        code,
        horizon,
        np.asarray(points, dtype=np.int64),
        check_bound,
    )
    samples = []
    for k, t in enumerate(points):
        N = counts[k].tolist()
        bins = sum(N[1:])
        vol = int(volume[k])
        samples.append(
            TraceSample(
                time=t,
                item_count=t,
                bin_count=bins,
                gap_waste=sum(N[h] * (B - h) for h in range(1, B)),
                true_waste=B * bins - vol,
                hole_volume=int(holes[k]),
                levels=tuple(N[1:B]),
                closed=N[B],
            )
        )
    return StreamResult(samples, int(violations))


# -- scenarios -------------------------------------------------------------------


@dataclass(frozen=True)
class Phase:
    until: float
    arrival_rate: float
    workload: Workload


@dataclass(frozen=True)
class ExplicitBin:
    hole: int
    items: tuple[int, ...]
    count: int = 1
    mean_residences: tuple[float, ...] | None = None


@dataclass(frozen=True)
class InitialState:
    kind: str = "empty"  # empty | explicit | perfect
    bins: tuple[ExplicitBin, ...] = ()
    expected_items: float = 0.0


@dataclass(frozen=True)
class Scenario:
    capacity: int
    phases: tuple[Phase, ...]
    horizon: float
    sample_interval: float
    initial: InitialState = InitialState()
    seed: int = 0

    def __post_init__(self):
        if not self.phases:
            raise EmptyPhaseList("scenario has no phases")
        prev = -math.inf
        for k, ph in enumerate(self.phases):
            if not ph.until > prev:
                raise ScenarioError(f"phases[{k}].until", "phase boundaries must be strictly increasing")
            prev = ph.until
            if not ph.arrival_rate > 0:
                raise ScenarioError(f"phases[{k}].arrival_rate", "must be positive")
            for c in ph.workload.classes:
                if c.mean_residence is None:
                    raise ScenarioError(f"phases[{k}].classes", "every class needs a mean_residence")
            if ph.workload.sizes[-1] >= self.capacity:
                raise ScenarioError(f"phases[{k}].classes", "item size must be below capacity")
        if self.horizon < 0:
            raise ScenarioError("horizon", "must be nonnegative")
        if self.phases[-1].until < self.horizon:
            raise ScenarioError("phases", "last phase must extend to the horizon")
        if not self.sample_interval > 0:
            raise ScenarioError("sample_interval", "must be positive")

    def with_rate(self, rate: float, scale_initial: bool = True) -> "Scenario":
        """Same scenario at a different arrival rate (initial sizes scaled alike)."""
        base = self.phases[0].arrival_rate
        phases = tuple(Phase(p.until, p.arrival_rate * rate / base, p.workload) for p in self.phases)
        init = self.initial
        if scale_initial and init.kind == "perfect":
            init = InitialState("perfect", (), init.expected_items * rate / base)
        elif scale_initial and init.kind == "explicit":
            init = InitialState(
                "explicit",
                tuple(ExplicitBin(b.hole, b.items, round(b.count * rate / base), b.mean_residences) for b in init.bins),
            )
        return Scenario(self.capacity, phases, self.horizon, self.sample_interval, init, self.seed)

    def with_seed(self, seed: int) -> "Scenario":
        return Scenario(self.capacity, self.phases, self.horizon, self.sample_interval, self.initial, seed)


def _require(doc: dict, key: str, path: str):
    if not isinstance(doc, dict):
        raise ScenarioError(path, "expected an object")
    if key not in doc:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _number(v, path: str, integer: bool = False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ScenarioError(path, f"expected an integer, got {v!r}")
    return int(v) if integer else float(v)


def scenario_from_dict(doc: dict) -> Scenario:
    capacity = _number(_require(doc, "capacity", ""), "capacity", integer=True)
    raw_phases = _require(doc, "phases", "")
    if not isinstance(raw_phases, list):
        raise ScenarioError("phases", "expected a list")
    if not raw_phases:
        raise EmptyPhaseList("scenario has no phases")
    phases = []
    for k, p in enumerate(raw_phases):
        path = f"phases[{k}]"
        classes = _require(p, "classes", path)
        if not isinstance(classes, list) or not classes:
            raise ScenarioError(f"{path}.classes", "expected a nonempty list")
        sizes, probs, means = [], [], []
        for i, c in enumerate(classes):
            cp = f"{path}.classes[{i}]"
            sizes.append(_number(_require(c, "size", cp), f"{cp}.size", integer=True))
            probs.append(_number(_require(c, "prob", cp), f"{cp}.prob"))
            means.append(_number(_require(c, "mean_residence", cp), f"{cp}.mean_residence"))
        try:
            workload = Workload.from_lists(sizes, probs, means)
        except InvalidDistribution as exc:
            raise ScenarioError(f"{path}.classes", str(exc)) from exc
        phases.append(
            Phase(
                _number(_require(p, "until", path), f"{path}.until"),
                _number(_require(p, "arrival_rate", path), f"{path}.arrival_rate"),
                workload,
            )
        )
    initial = _initial_from_dict(doc.get("initial", {"kind": "empty"}))
    return Scenario(
        capacity=capacity,
        phases=tuple(phases),
        horizon=_number(_require(doc, "horizon", ""), "horizon"),
        sample_interval=_number(_require(doc, "sample_interval", ""), "sample_interval"),
        initial=initial,
        seed=_number(doc.get("seed", 0), "seed", integer=True),
    )


def _initial_from_dict(doc) -> InitialState:
    if isinstance(doc, str):
        doc = {"kind": doc}
    kind = _require(doc, "kind", "initial")
    if kind == "empty":
        return InitialState()
    if kind == "explicit":
        raw = _require(doc, "bins", "initial")
        if not isinstance(raw, list):
            raise ScenarioError("initial.bins", "expected a list")
        bins = []
        for k, b in enumerate(raw):
            path = f"initial.bins[{k}]"
            items = _require(b, "items", path)
            if not isinstance(items, list) or not items:
                raise ScenarioError(f"{path}.items", "expected a nonempty list of sizes")
            means = b.get("mean_residences")
            bins.append(
                ExplicitBin(
                    hole=_number(b.get("hole", 0), f"{path}.hole", integer=True),
                    items=tuple(_number(s, f"{path}.items", integer=True) for s in items),
                    count=_number(b.get("count", 1), f"{path}.count", integer=True),
                    mean_residences=None if means is None else tuple(_number(m, f"{path}.mean_residences") for m in means),
                )
            )
        return InitialState("explicit", tuple(bins))
    if kind == "perfect":
        return InitialState("perfect", (), _number(_require(doc, "expected_items", "initial"), "initial.expected_items"))
    raise ScenarioError("initial.kind", f"unknown initial state {kind!r}")


def scenario_to_dict(sc: Scenario) -> dict:
    init: dict = {"kind": sc.initial.kind}
    if sc.initial.kind == "explicit":
        init["bins"] = [
            {"hole": b.hole, "items": list(b.items), "count": b.count}
            | ({"mean_residences": list(b.mean_residences)} if b.mean_residences else {})
            for b in sc.initial.bins
        ]
    elif sc.initial.kind == "perfect":
        init["expected_items"] = sc.initial.expected_items
    return {
        "capacity": sc.capacity,
        "phases": [
            {
                "until": p.until,
                "arrival_rate": p.arrival_rate,
                "classes": [{"size": c.size, "prob": c.prob, "mean_residence": c.mean_residence} for c in p.workload.classes],
            }
            for p in sc.phases
        ],
        "horizon": sc.horizon,
        "sample_interval": sc.sample_interval,
        "initial": init,
        "seed": sc.seed,
    }


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {exc.lineno}", exc.msg) from exc
    return scenario_from_dict(doc)


# -- initial states --------------------------------------------------------------


def load_initial(
    initial: InitialState,
    capacity: int,
    workload: Workload,
    streams: dict[str, UniformStream],
    track_configs: bool = True,
) -> tuple[SystemState, list[tuple[int, float]]]:
    """Materialise an initial state.

    Returns the state and ``(item_id, mean_residence)`` for every resident
    item; callers draw full exponential lifetimes, which is exact for
    residual lives by memorylessness.
    """
    state = SystemState(capacity, track_configs)
    residents: list[tuple[int, float]] = []
    next_id = 0
    if initial.kind == "empty":
        return state, residents
    if initial.kind == "explicit":
        for k, entry in enumerate(initial.bins):
            level = entry.hole + sum(entry.items)
            if level > capacity or entry.hole < 0 or entry.count < 0:
                raise InfeasibleInitial(f"initial bin {k} has level {level} > {capacity}")
            if entry.mean_residences is not None:
                if len(entry.mean_residences) != len(entry.items):
                    raise InfeasibleInitial(f"initial bin {k}: one mean residence per item required")
                means = entry.mean_residences
            else:
                try:
                    means = tuple(workload.class_of_size(s).mean_residence for s in entry.items)
                except KeyError as exc:
                    raise InfeasibleInitial(f"initial bin {k}: size {exc.args[0]} not in the first phase") from exc
            for _ in range(entry.count):
                items = []
                for s, m in zip(entry.items, means):
                    items.append((next_id, s))
                    residents.append((next_id, m))
                    next_id += 1
                try:
                    state.add_bin(entry.hole, items)
                except IllegalPlacement as exc:
                    raise InfeasibleInitial(str(exc)) from exc
        return state, residents
    if initial.kind == "perfect":
        inst = PackingInstance(capacity, Workload(tuple(ItemClass(c.size, c.prob) for c in workload.classes)))
        try:
            tiling = perfect_tiling(inst)
        except ValueError as exc:
            raise InfeasibleInitial(str(exc)) from exc
        gen = streams["initial"].gen
        total = int(gen.poisson(initial.expected_items))
        weights = np.array([rate * cfg.item_count for cfg, rate in tiling])
        per_config = gen.multinomial(total, weights / weights.sum())
        sizes = workload.sizes
        for (cfg, _), n_items in zip(tiling, per_config):
            n_bins = int(round(n_items / cfg.item_count))
            for _ in range(n_bins):
                items = []
                for j, cnt in enumerate(cfg.counts):
                    for _ in range(cnt):
                        items.append((next_id, sizes[j]))
                        residents.append((next_id, workload.classes[j].mean_residence))
                        next_id += 1
                state.add_bin(0, items)
        return state, residents
    raise InfeasibleInitial(f"unknown initial state {initial.kind!r}")


# -- event-driven simulation -----------------------------------------------------

_ARRIVAL, _DEPARTURE, _SWITCH = 0, 1, 2


def sample_times(horizon: float, interval: float) -> list[float]:
    k_max = int(math.floor(horizon / interval + 1e-9))
    times = [float(k * interval) for k in range(k_max + 1)]
    if times[-1] < horizon - 1e-12:
        times.append(horizon)
    return times


def _make_chooser(policy: PolicyKind, capacity: int):
    """Placement function ``(profile, size, t) -> Placement`` reusing shared placement objects."""
    existing = [ExistingAtLevel(h) for h in range(capacity + 1)]
    new = [NewBinWithHole(h) for h in range(capacity + 1)]
    B = capacity

    if isinstance(policy, BestFit):
        def choose_bf(profile, s, t):
            counts = profile.counts
            for h in range(B - s, 0, -1):
                if counts[h]:
                    return existing[h]
            return new[0]
        return choose_bf

    def choose_generic(profile, s, t):
        p = policies.choose(policy, profile, s, t)
        return existing[p.level] if isinstance(p, ExistingAtLevel) else new[p.hole]

    return choose_generic


def run_timed(
    scenario: Scenario,
    policy: PolicyKind,
    track_configs: bool = True,
    stop_when: Callable[[TraceSample], bool] | None = None,
    check_every: int = 0,
    fast: bool | None = None,
) -> list[TraceSample]:
    """Simulate arrivals and departures up to the horizon; deterministic per seed.

    PD policies use the in-system item count (including the arriving item)
    in place of the arrival index. ``stop_when`` ends the run after the
    first sample for which it returns True. ``check_every > 0`` verifies all
    state invariants every that many events.

    Without configuration tracking or periodic checks the compiled loop is
    used (``fast=None``); it produces the same trace as the reference loop.
    """
    if isinstance(policy, (PdQuad, PdExp)) and policy.schedule.fixed:
        raise ValueError("timed simulations need an anytime epsilon schedule")
    if fast is None:
        fast = not track_configs and not check_every
    if fast:
        return _run_timed_fast(scenario, policy, stop_when)
    B = scenario.capacity
    streams = spawn_streams(scenario.seed)
    arrivals, types, lifetimes, select = (streams[k] for k in ("arrivals", "types", "lifetimes", "selection"))
    phases = scenario.phases
    state, residents = load_initial(scenario.initial, B, phases[0].workload, streams, track_configs)
    profile = state.profile
    choose = _make_chooser(policy, B)

    heap: list[tuple[float, int, int]] = []  # (time, sequence, item id)
    seq = 0
    for item_id, mean in residents:
        heap.append((exponential(lifetimes, mean), seq, item_id))
        seq += 1
    heapq.heapify(heap)
    next_item = max((i for i, _ in residents), default=-1) + 1

    phase_idx = 0
    phase = phases[0]
    cum = list(np.cumsum(phase.workload.probs))
    cum[-1] = 1.0
    sizes = phase.workload.sizes
    means = [c.mean_residence for c in phase.workload.classes]
    mean_gap = 1.0 / phase.arrival_rate
    next_arrival = exponential(arrivals, mean_gap)

    times = sample_times(scenario.horizon, scenario.sample_interval)
    samples: list[TraceSample] = []
    si = 0
    events = 0
    inf = math.inf
    heappush, heappop = heapq.heappush, heapq.heappop
    place = state.apply_placement
    depart = state.depart_item
    pick = select.index
    draw = types.random

    while si < len(times):
        td = heap[0][0] if heap else inf
        t_sw = phase.until if phase_idx + 1 < len(phases) else inf
        # arrivals win ties against departures
        if t_sw < next_arrival and t_sw <= td:
            t_ev, kind = t_sw, _SWITCH
        elif next_arrival <= td:
            t_ev, kind = next_arrival, _ARRIVAL
        else:
            t_ev, kind = td, _DEPARTURE
        while si < len(times) and times[si] < t_ev:
            smp = snapshot(state, times[si], track_configs)
            samples.append(smp)
            si += 1
            if stop_when is not None and stop_when(smp):
                return samples
        if si >= len(times):
            break
        if kind == _ARRIVAL:
            u = draw()
            j = bisect.bisect_right(cum, u)
            s = sizes[j]
            item_id = next_item
            next_item += 1
            placement = choose(profile, s, state.item_count + 1)
            place(placement, (item_id, s), pick)
            heappush(heap, (t_ev + exponential(lifetimes, means[j]), seq, item_id))
            seq += 1
            next_arrival = t_ev + exponential(arrivals, mean_gap)
        elif kind == _DEPARTURE:
            _, _, item_id = heappop(heap)
            depart(item_id)
        else:
            # memoryless arrivals: redraw from the boundary under the new rate
            phase_idx += 1
            phase = phases[phase_idx]
            cum = list(np.cumsum(phase.workload.probs))
            cum[-1] = 1.0
            sizes = phase.workload.sizes
            means = [c.mean_residence for c in phase.workload.classes]
            mean_gap = 1.0 / phase.arrival_rate
            next_arrival = t_ev + exponential(arrivals, mean_gap)
        events += 1
        if check_every and events % check_every == 0:
            try:
                state.check()
            except AssertionError as exc:
                raise InvariantFailure(f"after {events} events at t={t_ev}: {exc}") from exc
    return samples


_RANDOM_BLOCK = 1 << 16


class _Buffer:
    """Uniform draws of one stream handed to the compiled loop in blocks."""

    def __init__(self, stream: UniformStream):
        self.gen = stream.gen
        # continue exactly where the Python-side stream stopped
        self.data = np.concatenate([np.asarray(stream._buf[stream._i:], dtype=float), self.gen.random(_RANDOM_BLOCK)])
        stream._buf, stream._i = [], 0

    def refill(self, used: int) -> None:
        self.data = np.concatenate([self.data[used:], self.gen.random(_RANDOM_BLOCK)])


def _grown(a: np.ndarray, size: int, fill=0) -> np.ndarray:
    out = np.full(size, fill, dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


def _run_timed_fast(scenario: Scenario, policy: PolicyKind, stop_when) -> list[TraceSample]:
    K = _kernel
    B = scenario.capacity
    streams = spawn_streams(scenario.seed)
    phases = scenario.phases
    state, residents = load_initial(scenario.initial, B, phases[0].workload, streams, False)
    policy_code = _kernel.POLICY_CODES[policy.name]
    sched, _ = _schedule_code(policy)

    # bins: slots assigned in per-level list order so selection indices match
    n_bins = state.bin_count
    bin_cap = max(1024, 2 * n_bins)
    bin_level = np.zeros(bin_cap, dtype=np.int64)
    bin_hole = np.zeros(bin_cap, dtype=np.int64)
    bin_items = np.zeros(bin_cap, dtype=np.int64)
    bin_pos = np.zeros(bin_cap, dtype=np.int64)
    N = np.zeros(B + 1, dtype=np.int64)
    room = max(1024, 2 * max(state.profile.counts))
    lvl = np.zeros((B + 1, room), dtype=np.int64)
    slot_of: dict[int, int] = {}
    for h in range(B + 1):
        for i, bid in enumerate(state.level_index[h]):
            b = len(slot_of)
            slot_of[bid] = b
            bin_level[b] = h
            bin_hole[b] = state.bins[bid].hole
            bin_items[b] = len(state.bins[bid].items)
            bin_pos[b] = i
            lvl[h, i] = b
        N[h] = len(state.level_index[h])
    free_bins = np.arange(bin_cap - 1, n_bins - 1, -1, dtype=np.int64)
    free_bins = _grown(free_bins, bin_cap)

    # items: slot k holds the k-th resident, whose sequence number is also k
    lifetimes = streams["lifetimes"]
    n_items = len(residents)
    item_cap = max(1024, 2 * n_items)
    item_bin = np.zeros(item_cap, dtype=np.int64)
    item_size = np.zeros(item_cap, dtype=np.int64)
    ht = np.zeros(item_cap)
    hs = np.zeros(item_cap, dtype=np.int64)
    hslot = np.zeros(item_cap, dtype=np.int64)
    for k, (item_id, mean) in enumerate(residents):
        bid = state.item_bin[item_id]
        item_bin[k] = slot_of[bid]
        item_size[k] = state.bins[bid].items[item_id]
        ht[k] = exponential(lifetimes, mean)
        hs[k] = k
        hslot[k] = k
    order = np.lexsort((hs[:n_items], ht[:n_items]))  # a sorted array is a valid heap
    ht[:n_items], hs[:n_items], hslot[:n_items] = ht[order], hs[order], hslot[order]
    free_items = _grown(np.arange(item_cap - 1, n_items - 1, -1, dtype=np.int64), item_cap)

    J = max(len(ph.workload.sizes) for ph in phases)
    P = len(phases)
    ph_until = np.array([ph.until for ph in phases])
    ph_rate = np.array([ph.arrival_rate for ph in phases])
    ph_cum = np.full((P, J), 2.0)
    ph_sizes = np.zeros((P, J), dtype=np.int64)
    ph_means = np.zeros((P, J))
    for p, ph in enumerate(phases):
        jn = len(ph.workload.sizes)
        cum = np.cumsum(ph.workload.probs)
        cum[-1] = 1.0
        ph_cum[p, :jn] = cum
        ph_sizes[p, :jn] = ph.workload.sizes
        ph_means[p, :jn] = [c.mean_residence for c in ph.workload.classes]

    ints = np.zeros(14, dtype=np.int64)
    ints[K.I_ITEMS] = n_items
    ints[K.I_BINS] = n_bins
    ints[K.I_VOLUME] = state.total_item_volume
    ints[K.I_HOLES] = state.hole_volume
    ints[K.I_SEQ] = n_items
    ints[K.I_HEAP] = n_items
    ints[K.I_FREE_ITEMS] = item_cap - n_items
    ints[K.I_FREE_BINS] = bin_cap - n_bins
    floats = np.zeros(2)
    floats[K.F_NEXT] = exponential(streams["arrivals"], 1.0 / phases[0].arrival_rate)
    bufs = [_Buffer(streams[k]) for k in ("arrivals", "types", "lifetimes", "selection")]
    ptrs = (K.I_ARR, K.I_TYP, K.I_LIFE, K.I_SEL)

    samples: list[TraceSample] = []
    for t_sample in sample_times(scenario.horizon, scenario.sample_interval):
        while True:
            status = K.timed_advance(
                B, policy_code, sched, N, lvl, bin_level, bin_hole, bin_items, bin_pos, free_bins,
                item_bin, item_size, free_items, ht, hs, hslot,
                ph_until, ph_rate, ph_cum, ph_sizes, ph_means,
                ints, floats, bufs[0].data, bufs[1].data, bufs[2].data, bufs[3].data, t_sample,
            )
            if status == K.REACHED:
                break
            if status == K.NEED_RANDOM:
                for buf, ptr in zip(bufs, ptrs):
                    if ints[ptr] >= buf.data.shape[0] // 2:
                        buf.refill(int(ints[ptr]))
                        ints[ptr] = 0
                continue
            if ints[K.I_FREE_ITEMS] == 0 or ints[K.I_HEAP] >= ht.shape[0]:
                old, new = item_cap, 2 * item_cap
                item_bin, item_size = _grown(item_bin, new), _grown(item_size, new)
                ht, hs, hslot = _grown(ht, new), _grown(hs, new), _grown(hslot, new)
                free_items = _grown(free_items, new)
                added = np.arange(new - 1, old - 1, -1, dtype=np.int64)
                f = int(ints[K.I_FREE_ITEMS])
                free_items[f:f + added.shape[0]] = added
                ints[K.I_FREE_ITEMS] = f + added.shape[0]
                item_cap = new
            if ints[K.I_FREE_BINS] == 0:
                old, new = bin_cap, 2 * bin_cap
                bin_level, bin_hole = _grown(bin_level, new), _grown(bin_hole, new)
                bin_items, bin_pos = _grown(bin_items, new), _grown(bin_pos, new)
                free_bins = _grown(free_bins, new)
                added = np.arange(new - 1, old - 1, -1, dtype=np.int64)
                f = int(ints[K.I_FREE_BINS])
                free_bins[f:f + added.shape[0]] = added
                ints[K.I_FREE_BINS] = f + added.shape[0]
                bin_cap = new
            if N.max() >= lvl.shape[1]:
                wider = np.zeros((B + 1, 2 * lvl.shape[1]), dtype=np.int64)
                wider[:, : lvl.shape[1]] = lvl
                lvl = wider
        smp = _fast_sample(N, ints, B, t_sample)
        samples.append(smp)
        if stop_when is not None and stop_when(smp):
            break
    return samples


def _fast_sample(N: np.ndarray, ints: np.ndarray, B: int, time: float) -> TraceSample:
    K = _kernel
    counts = N.tolist()
    items, bins = int(ints[K.I_ITEMS]), int(ints[K.I_BINS])
    volume, holes = int(ints[K.I_VOLUME]), int(ints[K.I_HOLES])
    if sum(counts) != bins or counts[0] != 0 or items != ints[K.I_HEAP]:
        raise InvariantFailure(f"t={time}: bin or item bookkeeping out of sync")
    if sum(h * c for h, c in enumerate(counts)) != volume + holes:
        raise InvariantFailure(f"t={time}: level total differs from volume plus holes")
    return TraceSample(
        time=time,
        item_count=items,
        bin_count=bins,
        gap_waste=sum(counts[h] * (B - h) for h in range(1, B)),
        true_waste=B * bins - volume,
        hole_volume=holes,
        levels=tuple(counts[1:B]),
        closed=counts[B],
    )


# -- helpers for experiments -----------------------------------------------------


def first_time_below(samples: Sequence[TraceSample], threshold: float, after: float = 0.0) -> float | None:
    for s in samples:
        if s.time >= after and s.true_waste < threshold:
            return s.time
    return None


def mean_waste(samples: Sequence[TraceSample], start: float, end: float) -> float:
    vals = [s.true_waste for s in samples if start <= s.time <= end]
    return float(np.mean(vals)) if vals else math.nan
