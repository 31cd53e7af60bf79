"""Recovery curves of pruned policies and the multi-world batch experiment."""
from __future__ import annotations

import csv
import io
import math
import statistics
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .gridworld import GridWorld
from .parallel import pmap
from .policy import Policy, prune
from .ranking import RankMethod, Ranking, rank_states
from .render import render_trace_svg, render_trace_text
from .rollout import Trajectory, generate_test_suite, run_episode
from .seeding import derive_seed
from .training import TrainingConfig, train

DEFAULT_R_GRID = tuple(round(i * 0.05, 2) for i in range(21))
CURVE_HEADER = ["method", "world_id", "r", "reward_fraction", "original_step_fraction", "std_error", "n_episodes"]


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CurvePoint:
    r: float
    reward_fraction: float
    original_step_fraction: float
    std_error: float
    n_episodes: int


@dataclass(frozen=True)
class RecoveryCurve:
    points: tuple[CurvePoint, ...]
    ranking_method: str
    world_id: str
    eval_seed: int

    @property
    def rs(self) -> list[float]:
        return [p.r for p in self.points]

    @property
    def reward_fractions(self) -> list[float]:
        return [p.reward_fraction for p in self.points]

    def auc(self) -> float:
        return auc(self.rs, self.reward_fractions)


def auc(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Trapezoidal area under ``ys`` over ``xs``."""
    return float(np.trapezoid(ys, xs))


def normalize_r_grid(values: Sequence[float]) -> tuple[float, ...]:
    """Sorted, deduplicated grid with 0 and 1 added if missing."""
    grid = {float(v) for v in values} | {0.0, 1.0}
    if any(not 0.0 <= v <= 1.0 for v in grid):
        raise ValueError("r values must lie in [0, 1]")
    return tuple(sorted(grid))


def episode_seed(eval_seed: int, world_id: str, index: int) -> int:
    # shared by every method and r: common random numbers across the curve
    return derive_seed("eval", eval_seed, world_id, index)


def _rollouts(world, policy, seeds) -> list[Trajectory]:
    return [run_episode(world, policy, s) for s in seeds]


def _curve_point(world, base, ranking, seeds, base_mean, r) -> CurvePoint:
    trajs = _rollouts(world, prune(base, ranking, r), seeds)
    rewards = [t.total_reward for t in trajs]
    n = len(rewards)
    mean = statistics.fmean(rewards)
    se = statistics.stdev(rewards) / math.sqrt(n) / base_mean if n > 1 else 0.0
    steps = sum(len(t) for t in trajs)
    original = sum(t.original_steps for t in trajs)
    return CurvePoint(r, max(0.0, mean / base_mean), original / steps, se, n)


def evaluate_curve(
    world: GridWorld,
    base: Policy,
    ranking: Ranking,
    r_grid: Sequence[float] = DEFAULT_R_GRID,
    n_episodes: int = 100,
    eval_seed: int = 0,
    world_id: str = "world",
    jobs: int = 1,
) -> RecoveryCurve:
    """Mean reward of each pruned policy relative to the base policy's mean.

    All points use the same episode seeds, so neighbouring r values differ
    only through the states they keep.
    """
    r_grid = [float(r) for r in r_grid]
    if not r_grid or r_grid[0] != 0.0 or r_grid[-1] != 1.0:
        raise ValueError("r_grid must start at 0 and end at 1")
    if any(b <= a for a, b in zip(r_grid, r_grid[1:])):
        raise ValueError("r_grid must be strictly increasing")
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = [episode_seed(eval_seed, world_id, i) for i in range(n_episodes)]
    base_mean = statistics.fmean(t.total_reward for t in _rollouts(world, base, seeds))
    if base_mean <= 0.0:
        raise EvaluationError(f"base policy earns no reward on {world_id}")
    fn = partial(_curve_point, world, base, ranking, seeds, base_mean)
    points = pmap(fn, r_grid, jobs)
    return RecoveryCurve(tuple(points), ranking.method.value, world_id, eval_seed)


def render_trace(world: GridWorld, trajectory: Trajectory, kept_states=(), fmt: str = "text", **kwargs) -> str:
    if fmt == "svg":
        return render_trace_svg(world, trajectory, kept_states, **kwargs)
    return render_trace_text(world, trajectory, kept_states)


# -- aggregation -----------------------------------------------------------


@dataclass(frozen=True)
class AggregatePoint:
    r: float
    mean_reward_fraction: float
    std_error: float
    mean_original_step_fraction: float
    n_worlds: int


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    if len(values) < 2:
        return mean, 0.0
    return mean, statistics.stdev(values) / math.sqrt(len(values))


def aggregate_curves(curves: Sequence[RecoveryCurve]) -> list[AggregatePoint]:
    """Pointwise mean and standard error across curves sharing one r grid."""
    if not curves:
        raise ValueError("nothing to aggregate")
    grid = curves[0].rs
    for c in curves[1:]:
        if c.rs != grid:
            raise ValueError(f"r grid of {c.world_id} differs from {curves[0].world_id}")
    out = []
    for i, r in enumerate(grid):
        mean, se = _mean_se([c.points[i].reward_fraction for c in curves])
        osf = statistics.fmean(c.points[i].original_step_fraction for c in curves)
        out.append(AggregatePoint(r, mean, se, osf, len(curves)))
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    training: TrainingConfig = TrainingConfig()
    suite_episodes: int = 1000
    mutation_rate: float = 0.1
    suite_seed: int = 0
    k_branches: int = 4
    exact_expectation: bool = True
    causal_seed: int = 0
    tie_seed: int = 0
    r_grid: tuple[float, ...] = DEFAULT_R_GRID
    n_episodes: int = 100
    eval_seed: int = 0


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    methods: list[str]
    curves: dict[str, list[RecoveryCurve]]
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def aggregate(self) -> dict[str, list[AggregatePoint]]:
        return {m: aggregate_curves(self.curves[m]) for m in self.methods if self.curves[m]}

    def aucs(self) -> dict[str, dict[str, float]]:
        return {m: {c.world_id: c.auc() for c in self.curves[m]} for m in self.methods}

    def auc_summary(self) -> dict[str, tuple[float, float]]:
        return {m: _mean_se(list(v.values())) for m, v in self.aucs().items() if v}

    def comparison(self) -> dict[str, float | str]:
        """AUC gap between the causal ranking and the best SBFL ranking."""
        summary = self.auc_summary()
        sbfl = [m for m in summary if m not in (RankMethod.CAUSAL.value, RankMethod.RANDOM.value)]
        if RankMethod.CAUSAL.value not in summary or not sbfl:
            return {}
        best = max(sbfl, key=lambda m: summary[m][0])
        causal = summary[RankMethod.CAUSAL.value][0]
        return {
            "best_sbfl": best,
            "auc_causal": causal,
            "auc_best_sbfl": summary[best][0],
            "abs_gap": abs(causal - summary[best][0]),
        }


def world_id_for(index: int) -> str:
    return f"world_{index:03d}"


def _run_world(config: ExperimentConfig, methods: Sequence[str], item):
    world_id, world = item
    try:
        policy = train(world, config.training)
        suite = generate_test_suite(
            world,
            policy,
            config.suite_episodes,
            config.mutation_rate,
            derive_seed("suite", config.suite_seed, world_id),
        )
        curves = {}
        for m in methods:
            ranking = rank_states(
                world,
                policy,
                suite,
                m,
                k_branches=config.k_branches,
                seed=derive_seed("causal", config.causal_seed, world_id),
                exact=config.exact_expectation,
                tie_seed=derive_seed("tie", config.tie_seed, world_id),
            )
            curves[m] = evaluate_curve(
                world, policy, ranking, config.r_grid, config.n_episodes, config.eval_seed, world_id
            )
        return world_id, curves, None
    except Exception as exc:  # reported per world, the batch carries on
        return world_id, None, f"{type(exc).__name__}: {exc}"


def batch_experiment(
    worlds: Sequence[GridWorld],
    methods: Sequence[RankMethod | str],
    config: ExperimentConfig = ExperimentConfig(),
    jobs: int = 1,
    world_ids: Sequence[str] | None = None,
) -> ExperimentReport:
    """Train, rank and evaluate every world with every method.

    A failure in one world is recorded in ``report.failures`` and marks the
    report partial; the remaining worlds are still evaluated.
    """
    if not worlds:
        raise ValueError("need at least one world")
    if not methods:
        raise ValueError("need at least one method")
    methods = [RankMethod(m).value for m in methods]
    ids = list(world_ids) if world_ids is not None else [world_id_for(i) for i in range(len(worlds))]
    results = pmap(partial(_run_world, config, methods), list(zip(ids, worlds)), jobs)
    report = ExperimentReport(config, methods, {m: [] for m in methods})
    for world_id, curves, error in results:
        if error is not None:
            report.failures.append((world_id, error))
            continue
        for m in methods:
            report.curves[m].append(curves[m])
    return report


# -- CSV -------------------------------------------------------------------


def dump_curves(curves: Sequence[RecoveryCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for c in curves:
        for p in c.points:
            w.writerow(
                [c.ranking_method, c.world_id, repr(p.r), repr(p.reward_fraction),
                 repr(p.original_step_fraction), repr(p.std_error), p.n_episodes]
            )
    return buf.getvalue()


def load_curves(text: str, eval_seed: int = 0) -> list[RecoveryCurve]:
    rows = list(csv.DictReader(ln for ln in text.splitlines() if ln and not ln.startswith("#")))
    if rows and list(rows[0].keys()) != CURVE_HEADER:
        raise ValueError(f"curve header must be {','.join(CURVE_HEADER)}")
    grouped: dict[tuple[str, str], list[CurvePoint]] = {}
    for row in rows:
        grouped.setdefault((row["method"], row["world_id"]), []).append(
            CurvePoint(
                float(row["r"]),
                float(row["reward_fraction"]),
                float(row["original_step_fraction"]),
                float(row["std_error"]),
                int(row["n_episodes"]),
            )
        )
    return [RecoveryCurve(tuple(pts), m, wid, eval_seed) for (m, wid), pts in grouped.items()]


def dump_aggregate(aggregate: dict[str, list[AggregatePoint]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "r", "mean_reward_fraction", "std_error", "mean_original_step_fraction", "n_worlds"])
    for m, pts in aggregate.items():
        for p in pts:
            w.writerow([m, repr(p.r), repr(p.mean_reward_fraction), repr(p.std_error),
                        repr(p.mean_original_step_fraction), p.n_worlds])
    return buf.getvalue()


def dump_auc_table(curves_by_method: dict[str, list[RecoveryCurve]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "auc_mean", "auc_std_error", "n_worlds"])
    for m, curves in curves_by_method.items():
        mean, se = _mean_se([c.auc() for c in curves])
        w.writerow([m, repr(mean), repr(se), len(curves)])
    return buf.getvalue()
