import math

import pytest
from hypothesis import given, settings, strategies as st

from polprune import gridworld
from polprune.gridworld import Action, Label, Outcome, State, TerminalReason, generate_batch, parse_map
from polprune.policy import key_position
from polprune.rollout import StepRecord, TestSuite, Trajectory, generate_test_suite
from polprune.ranking import (
    SBFL_METHODS,
    RankMethod,
    Score,
    SpectrumVector,
    build_ranking,
    causal_scores,
    dump_ranking,
    load_ranking,
    rank_states,
    sbfl_score,
    spectrum_from_suite,
)
from polprune.training import train

from . import maps
from .oracles import brute_force_causal

PASS = Outcome(Label.PASS, TerminalReason.GOAL_REACHED, 0.5)
FAIL = Outcome(Label.FAIL, TerminalReason.LAVA_DEATH, 0.0)


def traj(visits, outcome, seed=0):
    """visits: list of (key, mutated)"""
    steps = []
    for i, (key, mutated) in enumerate(visits):
        reward = outcome.final_reward if i == len(visits) - 1 else 0.0
        steps.append(StepRecord(State(key_position(key), i), key, Action.EAST, mutated, reward))
    return Trajectory(tuple(steps), outcome, seed)


def suite_of(*trajs):
    return TestSuite(tuple(trajs), 0.1, 0)


def test_single_passing_unmutated_visit():
    spectrum = spectrum_from_suite(suite_of(traj([("1,1", False)], PASS)))
    assert spectrum == {"1,1": SpectrumVector(1, 0, 0, 0)}


def test_direct_count_example():
    trajs = (
        [traj([("2,2", True)], FAIL)] * 3
        + [traj([("2,2", True)], PASS)]
        + [traj([("2,2", False)], PASS)] * 6
    )
    assert spectrum_from_suite(suite_of(*trajs))["2,2"] == SpectrumVector(6, 0, 1, 3)


def test_revisits_count_once_and_unvisited_states_are_absent():
    t = traj([("1,1", False), ("2,1", True), ("1,1", False), ("2,1", True)], FAIL)
    spectrum = spectrum_from_suite(suite_of(t, traj([("1,1", False)], PASS)))
    assert spectrum == {"1,1": SpectrumVector(1, 1, 0, 0), "2,1": SpectrumVector(0, 0, 0, 1)}
    assert "3,3" not in spectrum


def test_empty_suite_rejected():
    with pytest.raises(ValueError):
        spectrum_from_suite(suite_of())


WORLDS = generate_batch(3, 7, 5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2), st.integers(0, 10_000), st.floats(0.05, 0.6))
def test_spectrum_conservation(i, seed, rate):
    world = WORLDS[i]
    suite = generate_test_suite(world, train(world), 30, rate, seed)
    spectrum = spectrum_from_suite(suite)
    assert set(spectrum) == suite.visited
    for key, v in spectrum.items():
        assert v.total == sum(key in t.mutation_flags() for t in suite.trajectories)


# -- SBFL ------------------------------------------------------------------


def test_worked_examples():
    assert sbfl_score(SpectrumVector(4, 0, 0, 6), "ochiai") == 1.0
    assert sbfl_score(SpectrumVector(5, 5, 5, 5), "tarantula") == 0.5
    assert sbfl_score(SpectrumVector(6, 2, 1, 1), "wong2") == 4.0


@pytest.mark.parametrize("counts", [(6, 0, 0, 0), (0, 3, 0, 0), (0, 0, 3, 2), (0, 0, 0, 7)])
def test_tarantula_zero_denominator_zeroes_the_score(counts):
    assert sbfl_score(SpectrumVector(*counts), "tarantula") == 0.0


def test_sbfl_rejects_zero_vector_and_unknown_measure():
    with pytest.raises(ValueError):
        sbfl_score(SpectrumVector(), "ochiai")
    with pytest.raises(ValueError):
        sbfl_score(SpectrumVector(1, 0, 0, 0), "causal")
    with pytest.raises(ValueError):
        sbfl_score(SpectrumVector(1, 0, 0, 0), "dstar")


@given(st.tuples(*[st.integers(0, 500)] * 4).filter(lambda t: sum(t) > 0))
def test_sbfl_scores_are_finite_and_bounded(counts):
    v = SpectrumVector(*counts)
    for m in SBFL_METHODS:
        s = sbfl_score(v, m)
        assert math.isfinite(s)
        if m is not RankMethod.WONG2:
            assert 0.0 <= s <= 1.0


@given(st.integers(1, 100), st.integers(0, 100), st.integers(0, 100))
def test_more_failures_never_raise_ochiai(ep, ef, np_):
    assert sbfl_score(SpectrumVector(ep, ef + 1, np_, 0), "ochiai") <= sbfl_score(
        SpectrumVector(ep, ef, np_, 0), "ochiai"
    )


# -- causal ----------------------------------------------------------------

HAND = {name: parse_map(text) for name, text in maps.HAND_AUTHORED.items()}


@pytest.mark.parametrize("name", sorted(HAND))
def test_exact_causal_matches_brute_force(name):
    world = HAND[name]
    policy = train(world)
    suite = generate_test_suite(world, policy, 200, 0.2, 1)
    table = {k: a.letter for k, a in policy.table.items()}
    for score in causal_scores(world, policy, suite, 4, seed=0):
        assert abs(score.value - brute_force_causal(world, table, score.state)) <= 1e-12
        assert score.std_error == 0.0


def test_critical_and_indifferent_effects():
    world = HAND["critical_6x6"]
    policy = train(world)
    suite = generate_test_suite(world, policy, 300, 0.1, 2)
    scores = {s.state: s for s in causal_scores(world, policy, suite, 4, 0)}
    factual = world.discount**3 * gridworld.goal_reward(4, world.max_steps)
    assert scores[maps.CRITICAL_STATE].value == pytest.approx(0.75 * factual, abs=1e-15)
    # every alternative at the indifferent state still reaches the goal, just later
    assert 0.0 < scores[maps.INDIFFERENT_STATE].value < 0.05 * factual
    # states off the policy's own path are never reached by it: zero effect
    assert scores["3,1"].value == 0.0
    assert set(scores) == suite.visited


def test_sampled_causal_reports_std_error():
    world = HAND["lava_river_6x6"]
    policy = train(world)
    suite = generate_test_suite(world, policy, 100, 0.2, 3)
    scores = causal_scores(world, policy, suite, 64, seed=5, exact=False)
    assert any(s.std_error > 0 for s in scores)
    assert scores == causal_scores(world, policy, suite, 64, seed=5, exact=False, jobs=2)


def test_exact_mode_needs_deterministic_policy():
    from polprune.policy import uniform_random_policy

    world = HAND["open_4x4"]
    suite = generate_test_suite(world, train(world), 10, 0.2, 3)
    with pytest.raises(ValueError):
        causal_scores(world, uniform_random_policy(), suite, 4, 0)


def test_causal_ranking_is_invariant_to_reward_scale(monkeypatch):
    world = WORLDS[0]
    policy = train(world)
    suite = generate_test_suite(world, policy, 200, 0.1, 4)
    base = causal_scores(world, policy, suite, 4, 0)
    original = gridworld.goal_reward
    monkeypatch.setattr(gridworld, "goal_reward", lambda s, m: 3.5 * original(s, m))
    scaled = causal_scores(world, policy, suite, 4, 0)
    for a, b in zip(base, scaled):
        assert b.value == pytest.approx(3.5 * a.value, rel=1e-12, abs=1e-15)
    assert build_ranking(base, "causal").state_keys() == build_ranking(scaled, "causal").state_keys()


# -- rankings --------------------------------------------------------------


def test_tie_rule():
    scores = [Score("a", 0.9, 10), Score("b", 0.1, 5), Score("c", 0.9, 3)]
    assert build_ranking(scores, "ochiai").state_keys() == ["a", "c", "b"]


def test_all_equal_values_order_by_visits_then_key():
    scores = [Score("2,1", 1.0, 4), Score("1,1", 1.0, 4), Score("3,1", 1.0, 9)]
    assert build_ranking(scores, "wong2").state_keys() == ["3,1", "1,1", "2,1"]
    assert build_ranking(list(reversed(scores)), "wong2").state_keys() == ["3,1", "1,1", "2,1"]


def test_random_ranking_is_a_seeded_permutation():
    scores = [Score(f"{i},1", float(i), 1) for i in range(30)]
    a = build_ranking(scores, "random", tie_seed=3)
    assert a.state_keys() == build_ranking(list(reversed(scores)), "random", tie_seed=3).state_keys()
    assert sorted(a.state_keys()) == sorted(s.state for s in scores)
    assert a.state_keys() != build_ranking(scores, "random", tie_seed=4).state_keys()


def test_non_finite_scores_rejected():
    with pytest.raises(ValueError):
        build_ranking([Score("1,1", math.nan, 1)], "ochiai")


def test_unranked_states_rank_last():
    r = build_ranking([Score("1,1", 1.0, 1), Score("2,1", 0.5, 1)], "ochiai")
    assert r.rank_of("1,1") == 1 and r.rank_of("2,1") == 2 and r.rank_of("9,9") == 3


@pytest.mark.parametrize("method", list(RankMethod))
def test_ranking_csv_round_trip(method):
    world = WORLDS[1]
    policy = train(world)
    suite = generate_test_suite(world, policy, 100, 0.1, 9)
    ranking = rank_states(world, policy, suite, method, seed=2, tie_seed=7)
    text = dump_ranking(ranking)
    assert "# orientation=importance" in text
    assert "rank,state_key,score,std_error,visits,method" in text
    loaded = load_ranking(text)
    assert loaded.ordered == ranking.ordered and loaded.method == ranking.method
    assert dump_ranking(loaded) == text


def test_malformed_ranking_rejected():
    with pytest.raises(ValueError):
        load_ranking("rank,state_key,score\n1,x,2\n")
    with pytest.raises(ValueError):
        load_ranking('rank,state_key,score,std_error,visits,method\n2,"1,1",0.5,0.0,3,ochiai\n')
