import json
import math

import numpy as np
import pytest

from stochpack import engine as E
from stochpack import policies as P
from stochpack.model import PackingInstance, Workload

LW = PackingInstance.of(9, [2, 3], [0.8, 0.2])


def key(samples):
    return [(s.time, s.item_count, s.bin_count, s.gap_waste, s.true_waste, s.hole_volume, s.levels, s.closed)
            for s in samples]


def wl(sizes, probs, means=None):
    return Workload.from_lists(sizes, probs, means or [1.0] * len(sizes))


# -- random draws ---------------------------------------------------------------------


def test_sample_exponential_inverse_cdf():
    assert E.sample_exponential(1.0, 1.0) == 0.0
    assert E.sample_exponential(2.0, math.exp(-1.0)) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        E.sample_exponential(0.0, 0.5)


def test_exponential_mean():
    stream = E.spawn_streams(0)["lifetimes"]
    draws = [E.exponential(stream, 1.0) for _ in range(10**6)]
    assert 0.997 <= np.mean(draws) <= 1.003


def test_streams_are_independent_and_reproducible():
    a, b = E.spawn_streams(5), E.spawn_streams(5)
    xa = [a["types"].random() for _ in range(10)]
    assert xa == [b["types"].random() for _ in range(10)]
    assert xa != [a["arrivals"].random() for _ in range(10)]


# -- stream mode ------------------------------------------------------------------------


def test_single_item_stream():
    for name in ("pd-quad", "pd-exp", "ss", "bf"):
        res = E.run_stream(E.StreamRun(LW, P.make_policy(name, 9), 1, seed=4))
        (s,) = res.samples
        size = 9 - s.true_waste
        assert s.bin_count == 1 and size in (2, 3) and s.hole_volume == 0 or name == "pd-quad"


def _pp_run(seed):
    inst = PackingInstance.of(9, [2, 3], [0.75, 0.25])
    n = 10**5
    res = E.run_stream(E.StreamRun(inst, P.make_policy("pd-exp", 9), n, seed=seed, snapshot_every=n // 4))
    return n, {s.time: s.true_waste for s in res.samples}


def test_stream_sublinear_waste_on_pp_instance():
    n, w = _pp_run(1)
    assert w[n] <= math.sqrt(8 * 9**3 * (n + 9))
    assert w[n] / w[n // 4] < 3
    # frozen from this implementation: about 9.3 * sqrt(n)
    assert (w[n // 4], w[n]) == (1422, 2942)


@pytest.mark.xfail(strict=True, reason="waste grows like 9.3*sqrt(n); at n=1e5 that is 0.029n, above 0.02n")
def test_stream_waste_fraction_below_two_percent():
    n, w = _pp_run(1)
    assert w[n] / n < 0.02


@pytest.mark.parametrize("name", ["pd-quad", "pd-exp", "ss", "bf"])
@pytest.mark.parametrize("schedule", ["fixed", "anytime"])
def test_compiled_stream_matches_reference(name, schedule):
    pol = P.make_policy(name, 9, schedule, horizon=4000)
    run = E.StreamRun(LW, pol, 4000, seed=2, snapshot_every=250)
    fast = E.run_stream(run, fast=True).samples
    ref = E.run_stream(run, fast=False).samples
    assert key(fast) == key(ref)


def test_stream_is_deterministic():
    run = E.StreamRun(LW, P.make_policy("pd-quad", 9), 5000, seed=8, snapshot_every=100)
    assert key(E.run_stream(run).samples) == key(E.run_stream(run).samples)


def test_level_bound_counter():
    inst = PackingInstance.of(6, [2, 3], [0.5, 0.5])
    pol = P.make_policy("pd-quad", 6, "fixed", 20000)
    res = E.run_stream(E.StreamRun(inst, pol, 20000, seed=0), check_bound=True)
    assert res.bound_violations == 0
    with pytest.raises(ValueError):
        E.run_stream(E.StreamRun(inst, P.BestFit(), 10), check_bound=True)


# -- scenarios and initial states --------------------------------------------------------------


def scenario(**kw):
    base = dict(capacity=9, phases=(E.Phase(5, 200, wl([2, 3], [0.75, 0.25])),), horizon=5, sample_interval=0.5)
    base.update(kw)
    return E.Scenario(**base)


def test_scenario_validation():
    w = wl([2, 3], [0.5, 0.5])
    with pytest.raises(E.EmptyPhaseList):
        scenario(phases=())
    with pytest.raises(E.ScenarioError):
        scenario(phases=(E.Phase(5, 1, w), E.Phase(5, 1, w)))
    with pytest.raises(E.ScenarioError):
        scenario(phases=(E.Phase(4, 1, w),))
    with pytest.raises(E.ScenarioError):
        scenario(phases=(E.Phase(5, 0, w),))
    with pytest.raises(E.ScenarioError):
        scenario(phases=(E.Phase(5, 1, Workload.from_lists([2, 3], [0.5, 0.5])),))


def test_scenario_dict_round_trip(tmp_path):
    sc = scenario(initial=E.InitialState("explicit", (E.ExplicitBin(1, (2, 2), count=3),)), seed=4)
    doc = E.scenario_to_dict(sc)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert E.load_scenario(path) == sc


def test_scenario_errors_name_the_field(tmp_path):
    doc = E.scenario_to_dict(scenario())
    del doc["phases"][0]["classes"][1]["mean_residence"]
    with pytest.raises(E.ScenarioError) as info:
        E.scenario_from_dict(doc)
    assert info.value.path == "phases[0].classes[1].mean_residence"
    bad = tmp_path / "bad.json"
    bad.write_text('{"capacity": 9,\n "phases": [}')
    with pytest.raises(E.ScenarioError) as info:
        E.load_scenario(bad)
    assert "line 2" in str(info.value)


def test_explicit_initial_state():
    init = E.InitialState("explicit", (E.ExplicitBin(1, (1, 1, 1, 1), count=3),))
    state, residents = E.load_initial(init, 5, wl([1], [1.0]), E.spawn_streams(0))
    assert state.profile[5] == 3 and state.item_count == 12 and len(residents) == 12
    assert state.configs() == {"h1+1+1+1+1": 3}
    too_big = E.InitialState("explicit", (E.ExplicitBin(2, (2, 2)),))
    with pytest.raises(E.InfeasibleInitial):
        E.load_initial(too_big, 5, wl([2], [1.0]), E.spawn_streams(0))


def test_perfect_initial_state():
    init = E.InitialState("perfect", (), 5000)
    state, _ = E.load_initial(init, 21, wl([3, 7], [0.5, 0.5]), E.spawn_streams(0))
    assert set(state.configs()) == {"7+7+7", "3+3+3+3+3+3+3"}
    assert state.profile.open_counts() == (0,) * 20
    with pytest.raises(E.InfeasibleInitial):
        E.load_initial(init, 9, wl([2, 3], [0.8, 0.2]), E.spawn_streams(0))


# -- timed mode -----------------------------------------------------------------------------


def test_zero_horizon_gives_initial_sample():
    init = E.InitialState("explicit", (E.ExplicitBin(0, (3, 2), count=10),))
    sc = E.Scenario(6, (E.Phase(0, 100, wl([2, 3], [0.5, 0.5])),), 0, 1, init)
    (s,) = E.run_timed(sc, P.BestFit())
    assert s.time == 0 and s.bin_count == 10 and s.configs == {"3+2": 10}


def test_fixed_schedule_rejected_with_departures():
    with pytest.raises(ValueError):
        E.run_timed(scenario(), P.make_policy("pd-quad", 9, "fixed", 100))


THREE_PHASE = E.Scenario(
    9,
    (
        E.Phase(3, 300, wl([2, 3], [0.75, 0.25])),
        E.Phase(6, 500, wl([2, 3], [0.8, 0.2], [1.0, 2.0])),
        E.Phase(9, 200, wl([2, 3], [0.5, 0.5])),
    ),
    9,
    0.25,
    E.InitialState("explicit", (E.ExplicitBin(1, (2, 2, 2), count=40), E.ExplicitBin(0, (3, 3), count=7))),
    5,
)


@pytest.mark.parametrize("name", ["pd-quad", "pd-exp", "ss", "bf"])
def test_compiled_timed_loop_matches_reference(name):
    pol = P.make_policy(name, 9, departures=True)
    fast = E.run_timed(THREE_PHASE, pol, track_configs=False, fast=True)
    ref = E.run_timed(THREE_PHASE, pol, track_configs=True, check_every=500)
    assert key(fast) == key(ref)
    assert [s.time for s in fast] == sorted(s.time for s in fast)


def test_compiled_loop_grows_its_arrays():
    sc = E.Scenario(5, (E.Phase(3, 3000, wl([1], [1.0])),), 3, 0.5,
                    E.InitialState("explicit", (E.ExplicitBin(1, (1, 1, 1, 1), count=10),)), 1)
    pol = P.make_policy("pd-exp", 5, departures=True)
    assert key(E.run_timed(sc, pol, track_configs=False)) == key(E.run_timed(sc, pol, fast=False))


def test_conservation_and_configs_consistent():
    samples = E.run_timed(THREE_PHASE, P.make_policy("pd-quad", 9, departures=True), check_every=200)
    for s in samples:
        assert sum(s.configs.values()) == s.bin_count
        assert s.true_waste == s.gap_waste + s.hole_volume
        assert sum(s.levels) + s.closed == s.bin_count


def test_type_fractions_follow_probabilities():
    # residences far beyond the horizon: every arrival is still in the system
    w = wl([2, 3], [0.3, 0.7], [1e9, 1e9])
    sc = E.Scenario(9, (E.Phase(10, 800, w),), 10, 10, seed=3)
    last = E.run_timed(sc, P.BestFit())[-1]
    twos = sum(n * key.split("+").count("2") for key, n in last.configs.items())
    total = last.item_count
    se = math.sqrt(0.3 * 0.7 / total)
    assert abs(twos / total - 0.3) < 3 * se


def test_initial_items_get_full_exponential_lifetimes():
    init = E.InitialState("explicit", (E.ExplicitBin(0, (1,), count=4000, mean_residences=(2.0,)),))
    sc = E.Scenario(5, (E.Phase(2, 1e-9, wl([1], [1.0])),), 2, 2, init, 6)
    last = E.run_timed(sc, P.BestFit(), track_configs=False)[-1]
    p = math.exp(-1.0)
    assert abs(last.item_count - 4000 * p) < 3 * math.sqrt(4000 * p * (1 - p))


def test_pdquad_keeps_holes_for_a_long_time():
    lam = 2500
    horizon = 2 * math.sqrt(lam / math.log(lam))
    sc = E.Scenario(5, (E.Phase(horizon, lam, wl([1], [1.0])),), horizon, 0.5,
                    E.InitialState("explicit", (E.ExplicitBin(1, (1, 1, 1, 1), count=lam // 4),)), 0)
    samples = E.run_timed(sc, P.make_policy("pd-quad", 5, departures=True), track_configs=False)
    assert min(s.true_waste for s in samples) >= 0.1 * lam


def test_rate_scaling_and_helpers():
    sc = scenario(initial=E.InitialState("explicit", (E.ExplicitBin(0, (3, 3), count=10),)))
    scaled = sc.with_rate(2000)
    assert scaled.phases[0].arrival_rate == 2000 and scaled.initial.bins[0].count == 100
    samples = E.run_timed(scaled.with_seed(1), P.BestFit(), track_configs=False)
    assert E.first_time_below(samples, 1e9) == 0.0
    assert E.first_time_below(samples, -1) is None
    assert math.isnan(E.mean_waste(samples, 100, 200))
