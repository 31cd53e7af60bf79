"""Episode execution: plain rollouts, Monte Carlo values, mutant test suites
and counterfactual branches."""
from __future__ import annotations

import math
import random
import re
import statistics
from collections.abc import Sequence
from dataclasses import dataclass
from functools import partial
from typing import NamedTuple

from .gridworld import (
    ACTIONS,
    Action,
    GridWorld,
    Label,
    Outcome,
    State,
    TerminalReason,
    initial_state,
    step,
)
from .parallel import pmap
from .policy import Policy, StateKey, abstraction, key_position
from .seeding import derive_seed


class StepRecord(NamedTuple):
    state: State
    key: StateKey
    action: Action
    mutated: bool
    reward: float


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[StepRecord, ...]
    outcome: Outcome
    episode_seed: int

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def total_reward(self) -> float:
        return sum(s.reward for s in self.steps)

    def discounted_return(self, discount: float) -> float:
        return discounted_return([s.reward for s in self.steps], discount)

    def mutation_flags(self) -> dict[StateKey, bool]:
        """Visited states in first-visit order, with their mutated flag."""
        flags: dict[StateKey, bool] = {}
        for s in self.steps:
            flags.setdefault(s.key, s.mutated)
        return flags

    @property
    def original_steps(self) -> int:
        return sum(not s.mutated for s in self.steps)


def discounted_return(rewards: Sequence[float], discount: float) -> float:
    total, weight = 0.0, 1.0
    for r in rewards:
        total += weight * r
        weight *= discount
    return total


def run_episode(world: GridWorld, policy: Policy, episode_seed: int) -> Trajectory:
    """Play one episode; steps where the policy acted randomly are flagged."""
    rng = random.Random(episode_seed)
    state = initial_state(world)
    records = []
    while True:
        key = abstraction(state)
        action = policy.act(state, rng)
        res = step(world, state, action)
        records.append(StepRecord(state, key, action, policy.is_random(state), res.reward))
        if res.done:
            return Trajectory(tuple(records), res.outcome, episode_seed)
        state = res.state


class ValueEstimate(NamedTuple):
    mean: float
    std_error: float
    n_episodes: int
    std_error_defined: bool


def _episode_return(world, policy, seed):
    return run_episode(world, policy, seed).discounted_return(world.discount)


def estimate_value(
    world: GridWorld, policy: Policy, n_episodes: int, seed: int, jobs: int = 1
) -> ValueEstimate:
    """Monte Carlo estimate of the discounted return from the start state.

    With a single episode the standard error is undefined; it is reported as
    0 and ``std_error_defined`` is False.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = [derive_seed("value", seed, i) for i in range(n_episodes)]
    returns = pmap(partial(_episode_return, world, policy), seeds, jobs)
    mean = statistics.fmean(returns)
    if n_episodes == 1:
        return ValueEstimate(mean, 0.0, 1, False)
    se = statistics.stdev(returns) / math.sqrt(n_episodes)
    return ValueEstimate(mean, se, n_episodes, True)


# -- mutant test suites ----------------------------------------------------


@dataclass(frozen=True)
class TestSuite:
    __test__ = False  # not a pytest class

    trajectories: tuple[Trajectory, ...]
    mutation_rate: float
    suite_seed: int

    @property
    def visited(self) -> frozenset[StateKey]:
        return frozenset(s.key for t in self.trajectories for s in t.steps)

    def __len__(self) -> int:
        return len(self.trajectories)


def run_mutant_episode(
    world: GridWorld, policy: Policy, mutation_rate: float, episode_seed: int
) -> Trajectory:
    """One mutant execution.

    On its first visit in this episode each abstract state is mutated with
    probability ``mutation_rate``; a mutated state takes a uniformly random
    action on every visit for the rest of the episode.
    """
    rng = random.Random(episode_seed)
    decisions: dict[StateKey, bool] = {}
    state = initial_state(world)
    records = []
    while True:
        key = abstraction(state)
        mutated = decisions.get(key)
        if mutated is None:
            mutated = decisions[key] = rng.random() < mutation_rate
        action = ACTIONS[rng.randrange(4)] if mutated else policy.act(state, rng)
        res = step(world, state, action)
        records.append(StepRecord(state, key, action, mutated, res.reward))
        if res.done:
            return Trajectory(tuple(records), res.outcome, episode_seed)
        state = res.state


def generate_test_suite(
    world: GridWorld,
    policy: Policy,
    n_episodes: int,
    mutation_rate: float,
    suite_seed: int,
    jobs: int = 1,
) -> TestSuite:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if not 0.0 < mutation_rate < 1.0:
        raise ValueError("mutation_rate must be in (0, 1)")
    seeds = [derive_seed("suite", suite_seed, i) for i in range(n_episodes)]
    trajs = pmap(partial(run_mutant_episode, world, policy, mutation_rate), seeds, jobs)
    return TestSuite(tuple(trajs), mutation_rate, suite_seed)


# -- counterfactual branches ----------------------------------------------


class Branch(NamedTuple):
    factual_return: float
    counterfactual_return: float
    visited: bool


def _play_from(world, policy, state, rng, first_action=None) -> float:
    """Discounted return from ``state`` (time 0 at ``state``)."""
    total, weight = 0.0, 1.0
    action = first_action
    while True:
        if action is None:
            action = policy.act(state, rng)
        res = step(world, state, action)
        total += weight * res.reward
        if res.done:
            return total
        weight *= world.discount
        state = res.state
        action = None


def counterfactual_branch(
    world: GridWorld,
    policy: Policy,
    target: StateKey,
    episode_seed: int,
    branch_seed: int | None = None,
    forced_action: Action | None = None,
) -> Branch:
    """Factual and counterfactual returns from the start for one intervention.

    The policy plays from the start until its first visit to ``target`` at
    time ``t``. The factual branch keeps the policy's action there; the
    counterfactual branch executes a uniformly drawn action (drawn from
    ``branch_seed``) or ``forced_action`` instead, then hands control back to
    the policy. Both continuations see the same random stream after ``t``.
    If ``target`` is never reached both returns equal the factual one and
    ``visited`` is False.
    """
    if forced_action is None and branch_seed is None:
        raise ValueError("need branch_seed or forced_action")
    rng = random.Random(episode_seed)
    state = initial_state(world)
    prefix, weight = 0.0, 1.0
    while abstraction(state) != target:
        res = step(world, state, policy.act(state, rng))
        prefix += weight * res.reward
        if res.done:
            return Branch(prefix, prefix, False)
        weight *= world.discount
        state = res.state
    saved = rng.getstate()
    factual = prefix + weight * _play_from(world, policy, state, rng)
    if forced_action is None:
        forced_action = ACTIONS[random.Random(branch_seed).randrange(4)]
    rng.setstate(saved)
    policy.act(state, rng)  # discarded, keeps both continuations on the same stream position
    counterfactual = prefix + weight * _play_from(world, policy, state, rng, Action(forced_action))
    return Branch(factual, counterfactual, True)


# -- suite record file -----------------------------------------------------

_TRIPLE_RE = re.compile(r"(-?\d+),(-?\d+):([NESW]):([01])")


def dump_suite(suite: TestSuite) -> str:
    lines = [
        f"# suite_seed={suite.suite_seed}",
        f"# mutation_rate={suite.mutation_rate!r}",
        f"# n_episodes={len(suite)}",
        "# seed\tlabel\treason\tfinal_reward\tsteps(state_key:action:mutflag)",
    ]
    for t in suite.trajectories:
        triples = ",".join(f"{s.key}:{s.action.letter}:{int(s.mutated)}" for s in t.steps)
        o = t.outcome
        lines.append(
            f"{t.episode_seed}\t{o.label.value}\t{o.terminal_reason.value}\t{o.final_reward!r}\t{triples}"
        )
    return "\n".join(lines) + "\n"


def load_suite(text: str) -> TestSuite:
    meta = {}
    trajs = []
    for line in text.splitlines():
        if line.startswith("#"):
            name, eq, value = line[1:].strip().partition("=")
            if eq:
                meta[name] = value
            continue
        if not line.strip():
            continue
        seed, label, reason, final_reward, triples = line.split("\t")
        outcome = Outcome(Label(label), TerminalReason(reason), float(final_reward))
        matches = _TRIPLE_RE.findall(triples)
        steps = []
        for i, (x, y, a, m) in enumerate(matches):
            key = f"{x},{y}"
            reward = outcome.final_reward if i == len(matches) - 1 else 0.0
            steps.append(StepRecord(State(key_position(key), i), key, Action.from_letter(a), m == "1", reward))
        trajs.append(Trajectory(tuple(steps), outcome, int(seed)))
    return TestSuite(tuple(trajs), float(meta["mutation_rate"]), int(meta["suite_seed"]))
