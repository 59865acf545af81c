import math
import random

import pytest

from stochpack import oracle
from stochpack.model import ExistingAtLevel, LevelProfile, NewBinWithHole
from stochpack.policies import (
    BestFit,
    EXP_ANYTIME,
    EXP_FIXED,
    EpsilonSchedule,
    InvalidHorizon,
    PdExp,
    PdQuad,
    QUAD_ANYTIME,
    QUAD_FIXED,
    SumOfSquares,
    argmin,
    bf_choose,
    choose,
    epsilon,
    make_policy,
    pdexp_options,
    pdquad_options,
    ss_choose,
    ss_options,
)


def profile(B, **levels):
    counts = [0] * (B + 1)
    for k, v in levels.items():
        counts[int(k[1:])] = v
    return LevelProfile(B, counts)


def scores(opts):
    out = {}
    for o in opts:
        p = o.placement
        out[p.level if isinstance(p, ExistingAtLevel) else p.hole] = o.delta_lagrangian
    return out


# -- epsilon schedules ------------------------------------------------------------


def test_schedule_formulas():
    assert epsilon(EpsilonSchedule(EXP_FIXED, 9, 1000), 5) == pytest.approx(0.0948683, abs=1e-6)
    assert epsilon(EpsilonSchedule(QUAD_ANYTIME, 2), 25) == pytest.approx(0.4)
    assert epsilon(EpsilonSchedule(EXP_ANYTIME, 8), 0) == pytest.approx(2 / 3, abs=1e-4)
    assert epsilon(EpsilonSchedule(QUAD_FIXED, 9, 200), 7) == pytest.approx(81 / 20)


def test_schedule_validation():
    with pytest.raises(InvalidHorizon):
        EpsilonSchedule(EXP_FIXED, 9, 9)
    with pytest.raises(InvalidHorizon):
        EpsilonSchedule(QUAD_FIXED, 9)
    with pytest.raises(ValueError):
        EpsilonSchedule(QUAD_FIXED, 9, 100, departures_aware=True)


def test_exp_epsilon_below_one():
    sch = EpsilonSchedule(EXP_ANYTIME, 30)
    assert all(0 < sch(t) < 1 for t in range(0, 5000, 7))


# -- PD-quad --------------------------------------------------------------------------


def test_pdquad_empty_profile():
    sc = scores(pdquad_options(profile(5), 2, 0.5))
    assert sc == pytest.approx({0: 0.25, 1: 0.25, 2: 0.25, 3: 5.0})
    # fixed schedule with B^2 / sqrt(2n) = 0.5
    pol = make_policy("pd-quad", 5, "fixed", 1250)
    assert epsilon(pol.schedule, 1) == pytest.approx(0.5)
    assert choose(pol, profile(5), 2, 1) == NewBinWithHole(0)
    assert argmin(pdquad_options(profile(5), 2, 0.5)) == NewBinWithHole(0)


def test_pdquad_mixed_profile():
    opts = pdquad_options(profile(5, N2=2, N4=1), 2, 0.5)
    assert scores(opts) == pytest.approx({0: 1.25, 1: 0.25, 2: 0.0, 3: 5.0})
    assert argmin(opts) == ExistingAtLevel(2)
    assert isinstance(opts[1].placement, NewBinWithHole) and opts[1].placement.hole == 1


def test_pdquad_closing_penalty():
    eps = 0.1
    sc = scores(pdquad_options(profile(5, N3=7), 2, eps))
    assert sc[3] == pytest.approx(5 + eps * (0.5 - 7))


# -- PD-exp ------------------------------------------------------------------------------


def test_pdexp_empty_profile_opens_bin():
    opts = pdexp_options(profile(6), 3, 0.3)
    assert [o.placement for o in opts] == [NewBinWithHole(0)]


def test_pdquad_large_epsilon_closes_new_bin():
    # at t = 1 the anytime step is 12.5, so half of it exceeds the closing penalty B
    assert choose(make_policy("pd-quad", 5), profile(5), 2, 1) == NewBinWithHole(3)


def test_pdexp_mixed_profile():
    opts = pdexp_options(profile(5, N2=2, N4=1), 2, 0.5)
    sc = scores(opts)
    assert sc[0] == pytest.approx(5 + 10 * (math.exp(-1.5) - math.exp(-1.0)))
    assert sc[0] == pytest.approx(3.5525, abs=1e-4)
    assert sc[2] == pytest.approx(0.0, abs=1e-12)
    assert argmin(opts) == ExistingAtLevel(2)
    pol = PdExp(EpsilonSchedule(EXP_FIXED, 5, 20))
    assert choose(pol, profile(5, N2=2, N4=1), 2, 1) == ExistingAtLevel(2)


def test_pdexp_closing_option_matches_oracle():
    p = profile(5, N3=1)
    for eps in (0.05, 0.3, 0.9):
        opts = pdexp_options(p, 2, eps)
        for o in opts:
            assert o.delta_lagrangian - 2 == pytest.approx(oracle.lagrangian_delta(p, o.placement, 2, eps, "exp"), abs=1e-9)


def test_pdexp_never_makes_holes():
    rng = random.Random(2)
    for _ in range(500):
        B = rng.randint(3, 12)
        p = LevelProfile(B, [0] + [rng.randint(0, 6) for _ in range(B - 1)] + [0])
        s = rng.randint(1, B - 1)
        for o in pdexp_options(p, s, rng.uniform(0.01, 0.99)):
            assert not (isinstance(o.placement, NewBinWithHole) and o.placement.hole > 0)


# -- SS and BF ----------------------------------------------------------------------------


def test_ss_examples():
    assert ss_choose(profile(4, N2=1), 2) == ExistingAtLevel(2)
    assert ss_choose(profile(6), 3) == NewBinWithHole(0)
    opts = ss_options(profile(9, N2=5, N4=5), 2)
    assert scores(opts) == {0: 61.0, 2: 52.0, 4: 42.0}
    assert ss_choose(profile(9, N2=5, N4=5), 2) == ExistingAtLevel(4)


def test_ss_tie_goes_to_larger_level():
    # both existing options lower the sum by the same amount
    p = profile(8, N2=1, N4=1)
    assert ss_choose(p, 1) == ExistingAtLevel(4)


def test_bf_examples():
    assert bf_choose(profile(10, N3=1, N5=1), 4) == ExistingAtLevel(5)
    assert bf_choose(profile(10, N7=3), 4) == NewBinWithHole(0)
    assert bf_choose(profile(6, N3=1), 3) == ExistingAtLevel(3)


def test_bf_dispatch_matches_direct_call():
    rng = random.Random(7)
    for _ in range(1000):
        B = rng.randint(2, 15)
        p = LevelProfile(B, [0] + [rng.choice([0, 0, 1, 3]) for _ in range(B - 1)] + [rng.randint(0, 3)])
        s = rng.randint(1, B - 1)
        assert choose(BestFit(), p, s, 1) == bf_choose(p, s)


# -- oracle agreement and determinism ---------------------------------------------------------


def random_case(rng):
    B = rng.randint(2, 14)
    counts = [0] + [rng.choice([0, 0, 1, 2, rng.randint(0, 40)]) for _ in range(B - 1)] + [rng.randint(0, 5)]
    s = rng.randint(1, B - 1)
    eps = rng.uniform(0.01, 0.99)
    return LevelProfile(B, counts), s, eps


def test_scores_match_full_lagrangian():
    rng = random.Random(123)
    for _ in range(2000):
        p, s, eps = random_case(rng)
        for kind, fn in (("quad", pdquad_options), ("exp", pdexp_options)):
            opts = fn(p, s, eps)
            for o in opts:
                full = oracle.lagrangian_delta(p, o.placement, s, eps, kind)
                assert o.delta_lagrangian - s == pytest.approx(full, abs=1e-9, rel=1e-12)


def test_choose_is_deterministic():
    rng = random.Random(9)
    for _ in range(200):
        p, s, _ = random_case(rng)
        for pol in (make_policy("pd-quad", p.capacity), make_policy("pd-exp", p.capacity), SumOfSquares()):
            assert choose(pol, p.copy(), s, 17) == choose(pol, p.copy(), s, 17)


def test_make_policy_names():
    assert isinstance(make_policy("pd-quad", 9, "fixed", 100), PdQuad)
    assert isinstance(make_policy("pd-exp", 9), PdExp)
    assert isinstance(make_policy("ss", 9), SumOfSquares)
    with pytest.raises(ValueError):
        make_policy("first-fit", 9)
