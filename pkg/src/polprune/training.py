"""Produce the tabular policies that the ranking pipeline treats as black boxes."""
from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum

from .gridworld import ACTIONS, GOAL, LAVA, Action, GridWorld, reachable_positions, step, initial_state
from .policy import TabularPolicy, abstraction
from .seeding import derive_seed


class Method(str, Enum):
    VALUE_ITERATION = "value-iteration"
    Q_LEARNING = "q-learning"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    method: Method = Method.VALUE_ITERATION
    train_seed: int = 0
    # value iteration
    convergence_tol: float = 1e-10
    gamma: float | None = None
    tie_slack: float = 0.0
    randomize_ties: bool = False
    # q-learning
    episodes: int = 2000
    learning_rate: float = 0.5
    epsilon: float = 1.0
    epsilon_min: float = 0.05
    max_retries: int = 8

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if not (0.0 <= self.epsilon <= 1.0 and 0.0 <= self.epsilon_min <= 1.0):
            raise ValueError("epsilon must be in [0, 1]")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be > 0")
        if self.tie_slack < 0:
            raise ValueError("tie_slack must be >= 0")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")


def planning_gamma(world: GridWorld, config: TrainingConfig) -> float:
    if config.gamma is not None:
        return config.gamma
    # an undiscounted surrogate has no unique fixed point; fall back to 0.99
    return world.discount if world.discount < 1.0 else 0.99


def value_iteration(world: GridWorld, gamma: float, tol: float) -> dict[tuple[int, int], float]:
    """Fixed point of the position-only surrogate MDP.

    Entering the goal pays 1 and ends the episode, entering lava pays 0 and
    ends it. Because the true goal reward only shrinks with elapsed steps, the
    greedy policy of this surrogate is also optimal for the true reward.
    """
    states = sorted(reachable_positions(world))
    values = {p: 0.0 for p in states}
    while True:
        delta = 0.0
        new = {}
        for p in states:
            best = max(_q_value(world, values, p, a, gamma) for a in ACTIONS)
            delta = max(delta, abs(best - values[p]))
            new[p] = best
        values = new
        if delta < tol:
            return values


def _q_value(world, values, pos, action, gamma):
    nxt = world.move(pos, action)
    cell = world.terrain(nxt)
    if cell == GOAL:
        return 1.0
    if cell == LAVA:
        return 0.0
    return gamma * values.get(nxt, 0.0)


def _greedy_table(world, values, gamma, config, rng):
    table = {}
    for pos in sorted(values):
        qs = [_q_value(world, values, pos, a, gamma) for a in ACTIONS]
        best = max(qs)
        slack = max(config.tie_slack, 1e-12)
        candidates = [a for a, q in zip(ACTIONS, qs) if q >= best - slack]
        choice = rng.choice(candidates) if config.randomize_ties else candidates[0]
        table[f"{pos[0]},{pos[1]}"] = choice
    return table


def greedy_passes(world: GridWorld, policy: TabularPolicy) -> bool:
    state = initial_state(world)
    while True:
        res = step(world, state, policy.act(state, None))
        if res.done:
            return res.outcome.passed
        state = res.state


def _train_value_iteration(world, config):
    gamma = planning_gamma(world, config)
    values = value_iteration(world, gamma, config.convergence_tol)
    for attempt in range(config.max_retries):
        rng = random.Random(derive_seed("vi-ties", config.train_seed, attempt))
        # last attempt drops the suboptimality knob, which always yields a passing policy
        cfg = config if attempt < config.max_retries - 1 else replace(config, tie_slack=0.0, randomize_ties=False)
        policy = TabularPolicy(_greedy_table(world, values, gamma, cfg, rng), Action.NORTH)
        if greedy_passes(world, policy):
            return policy
    raise TrainingError("value iteration produced no passing policy")


def q_learning(world: GridWorld, config: TrainingConfig, episodes: int, seed: int) -> dict:
    rng = random.Random(seed)
    gamma = world.discount
    q: dict[str, list[float]] = {}
    for ep in range(episodes):
        frac = ep / max(1, episodes - 1)
        eps = config.epsilon + (config.epsilon_min - config.epsilon) * frac
        state = initial_state(world)
        done = False
        while not done:
            key = abstraction(state)
            row = q.setdefault(key, [0.0] * 4)
            if rng.random() < eps:
                a = rng.randrange(4)
            else:
                a = max(range(4), key=row.__getitem__)
            res = step(world, state, ACTIONS[a])
            done = res.done
            target = res.reward
            if not done:
                target += gamma * max(q.get(abstraction(res.state), (0.0,) * 4))
            row[a] += config.learning_rate * (target - row[a])
            state = res.state
    return q


def _train_q_learning(world, config):
    episodes = config.episodes
    keys = {f"{x},{y}" for x, y in reachable_positions(world)}
    for attempt in range(config.max_retries):
        q = q_learning(world, config, episodes, derive_seed("q", config.train_seed, attempt))
        table = {}
        for key in sorted(keys):
            row = q.get(key, [0.0] * 4)
            table[key] = ACTIONS[max(range(4), key=row.__getitem__)]
        policy = TabularPolicy(table, Action.NORTH)
        if greedy_passes(world, policy):
            return policy
        episodes *= 2
    raise TrainingError("q-learning produced no passing policy")


def train(world: GridWorld, config: TrainingConfig = TrainingConfig()) -> TabularPolicy:
    """Train a tabular policy that reaches the goal from the start.

    The table covers exactly the cells reachable from the start, so the policy
    has a considered action wherever a perturbed rollout may wander.
    """
    if config.method is Method.VALUE_ITERATION:
        return _train_value_iteration(world, config)
    return _train_q_learning(world, config)
