import statistics

import pytest

from polprune.evaluation import (
    DEFAULT_R_GRID,
    EvaluationError,
    ExperimentConfig,
    aggregate_curves,
    auc,
    batch_experiment,
    dump_aggregate,
    dump_curves,
    episode_seed,
    evaluate_curve,
    load_curves,
    normalize_r_grid,
    render_trace,
)
from polprune.gridworld import Action, generate_batch, parse_map
from polprune.policy import TabularPolicy, prune, uniform_random_policy
from polprune.ranking import rank_states
from polprune.render import RANDOM_FILL, render_recovery_chart
from polprune.rollout import generate_test_suite, run_episode
from polprune.training import train

from . import maps

WORLD = generate_batch(1, 9, 13)[0]
POLICY = train(WORLD)
SUITE = generate_test_suite(WORLD, POLICY, 300, 0.1, 1)
RANKING = rank_states(WORLD, POLICY, SUITE, "ochiai")


def test_default_grid_has_21_points():
    assert len(DEFAULT_R_GRID) == 21
    assert DEFAULT_R_GRID[0] == 0.0 and DEFAULT_R_GRID[-1] == 1.0 and DEFAULT_R_GRID[1] == 0.05


def test_normalize_grid_enforces_endpoints():
    assert normalize_r_grid([0.5]) == (0.0, 0.5, 1.0)
    assert normalize_r_grid([1, 0.25, 0.25, 0]) == (0.0, 0.25, 1.0)
    with pytest.raises(ValueError):
        normalize_r_grid([1.2])


def test_curve_endpoints():
    curve = evaluate_curve(WORLD, POLICY, RANKING, (0.0, 0.5, 1.0), 60, eval_seed=4, world_id="w")
    lo, _, hi = curve.points
    assert hi.reward_fraction == 1.0
    assert hi.original_step_fraction == 1.0
    assert lo.original_step_fraction == 0.0
    seeds = [episode_seed(4, "w", i) for i in range(60)]
    rand_mean = statistics.fmean(run_episode(WORLD, uniform_random_policy(), s).total_reward for s in seeds)
    base_mean = run_episode(WORLD, POLICY, 0).total_reward
    assert lo.reward_fraction == pytest.approx(rand_mean / base_mean, rel=1e-12)
    assert [p.n_episodes for p in curve.points] == [60] * 3


def test_curve_is_job_independent():
    a = evaluate_curve(WORLD, POLICY, RANKING, DEFAULT_R_GRID, 20, 2, "w")
    b = evaluate_curve(WORLD, POLICY, RANKING, DEFAULT_R_GRID, 20, 2, "w", jobs=3)
    assert a == b


def test_curve_preconditions():
    with pytest.raises(ValueError):
        evaluate_curve(WORLD, POLICY, RANKING, (0.0, 0.5), 5)
    with pytest.raises(ValueError):
        evaluate_curve(WORLD, POLICY, RANKING, (0.0, 0.5, 0.5, 1.0), 5)
    with pytest.raises(ValueError):
        evaluate_curve(WORLD, POLICY, RANKING, (0.0, 1.0), 0)


def test_zero_reward_base_policy_is_an_error():
    world = parse_map(maps.CRITICAL_6X6)
    suicidal = TabularPolicy({}, Action.NORTH)  # walks straight into lava
    suite = generate_test_suite(world, train(world), 20, 0.1, 0)
    with pytest.raises(EvaluationError):
        evaluate_curve(world, suicidal, rank_states(world, suicidal, suite, "wong2"), (0.0, 1.0), 5)


def test_auc_trapezoid():
    assert auc([0, 0.5, 1], [0, 1, 1]) == pytest.approx(0.75)
    assert auc([0, 1], [1, 1]) == 1.0


def test_single_curve_aggregate_is_the_curve():
    curve = evaluate_curve(WORLD, POLICY, RANKING, (0.0, 0.5, 1.0), 10, 1, "w")
    agg = aggregate_curves([curve])
    assert [a.mean_reward_fraction for a in agg] == curve.reward_fractions
    assert all(a.std_error == 0.0 and a.n_worlds == 1 for a in agg)


def test_aggregate_refuses_mismatched_grids():
    a = evaluate_curve(WORLD, POLICY, RANKING, (0.0, 0.5, 1.0), 5, 1, "a")
    b = evaluate_curve(WORLD, POLICY, RANKING, (0.0, 1.0), 5, 1, "b")
    with pytest.raises(ValueError, match="b"):
        aggregate_curves([a, b])


def test_curve_csv_round_trip():
    curve = evaluate_curve(WORLD, POLICY, RANKING, (0.0, 0.3, 1.0), 10, 7, "w9")
    text = dump_curves([curve])
    assert text.splitlines()[0] == "method,world_id,r,reward_fraction,original_step_fraction,std_error,n_episodes"
    assert load_curves(text, eval_seed=7) == [curve]


def test_batch_single_world_single_method():
    cfg = ExperimentConfig(suite_episodes=100, n_episodes=10, r_grid=(0.0, 0.5, 1.0))
    report = batch_experiment([WORLD], ["causal"], cfg)
    assert not report.partial
    (curve,) = report.curves["causal"]
    agg = report.aggregate()["causal"]
    assert [a.mean_reward_fraction for a in agg] == curve.reward_fractions
    assert all(a.std_error == 0.0 for a in agg)
    assert report.auc_summary()["causal"] == (curve.auc(), 0.0)


def test_batch_records_failing_worlds():
    broken = parse_map("#####\n#SL.#\n#LLG#\n#####\n")
    cfg = ExperimentConfig(suite_episodes=50, n_episodes=5, r_grid=(0.0, 1.0))
    report = batch_experiment([WORLD, broken], ["ochiai", "random"], cfg)
    assert report.partial
    assert report.failures[0][0] == "world_001"
    assert len(report.curves["ochiai"]) == 1


def test_batch_is_job_independent():
    worlds = generate_batch(2, 7, 3)
    cfg = ExperimentConfig(suite_episodes=60, n_episodes=8, r_grid=(0.0, 0.5, 1.0))
    a = batch_experiment(worlds, ["causal", "random"], cfg)
    b = batch_experiment(worlds, ["causal", "random"], cfg, jobs=2)
    assert a.curves == b.curves


# -- traces ----------------------------------------------------------------


def marked_cells(text):
    return {(x, y) for y, row in enumerate(text.splitlines()) for x, c in enumerate(row) if c == "*"}


def test_trace_of_original_policy_has_no_random_marks():
    t = run_episode(WORLD, POLICY, 0)
    assert marked_cells(render_trace(WORLD, t)) == set()
    assert RANDOM_FILL not in render_trace(WORLD, t, fmt="svg")


def test_trace_at_r_zero_marks_every_visited_cell():
    t = run_episode(WORLD, prune(POLICY, RANKING, 0.0), 3)
    assert marked_cells(render_trace(WORLD, t)) == {s.state.position for s in t.steps}


def test_trace_marks_exactly_the_random_steps():
    pruned = prune(POLICY, RANKING, 0.5)
    for seed in range(10):
        t = run_episode(WORLD, pruned, seed)
        expected = {s.state.position for s in t.steps if s.mutated}
        assert marked_cells(render_trace(WORLD, t, pruned.kept_states)) == expected
        svg = render_trace(WORLD, t, pruned.kept_states, fmt="svg")
        assert svg.count(f'fill="{RANDOM_FILL}"') == len(expected)


def test_chart_has_one_band_and_line_per_method():
    cfg = ExperimentConfig(suite_episodes=60, n_episodes=8, r_grid=(0.0, 0.5, 1.0))
    report = batch_experiment(generate_batch(2, 7, 3), ["causal", "ochiai", "random"], cfg)
    svg = render_recovery_chart(report.aggregate())
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    # two panels
    assert svg.count("<polygon") == 6 and svg.count("<polyline") == 6
    assert "causal" in svg and "ochiai" in svg
    assert dump_aggregate(report.aggregate()).count("\n") == 1 + 3 * 3
