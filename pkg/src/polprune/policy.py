"""Black-box policies: tabular, uniform random, and rank-pruned.

Every policy takes an explicit ``random.Random`` stream in ``act`` so rollouts
are reproducible and independent of one another.
"""
from __future__ import annotations

import csv
import io
import math
import random
from collections.abc import Iterable, Mapping

from .gridworld import ACTIONS, Action, GridWorld, State

StateKey = str


def abstraction(state: State) -> StateKey:
    """Canonical ranking key: the agent position ``"x,y"``; step count is dropped."""
    x, y = state.position
    return f"{x},{y}"


def key_position(key: StateKey) -> tuple[int, int]:
    x, y = key.split(",")
    return int(x), int(y)


class Policy:
    """Base class. Black-box callers only ever use ``act``."""

    supports_enumeration = False
    deterministic = False

    def act(self, state: State, rng: random.Random) -> Action:
        raise NotImplementedError

    def distribution(self, state: State) -> dict[Action, float]:
        raise NotImplementedError(f"{type(self).__name__} cannot enumerate its actions")

    def is_random(self, state: State) -> bool:
        """Whether the action in ``state`` comes from the uniform fallback."""
        return False


class UniformRandomPolicy(Policy):
    supports_enumeration = True

    def act(self, state: State, rng: random.Random) -> Action:
        return ACTIONS[rng.randrange(4)]

    def distribution(self, state: State) -> dict[Action, float]:
        return {a: 0.25 for a in ACTIONS}

    def is_random(self, state: State) -> bool:
        return True


def uniform_random_policy() -> UniformRandomPolicy:
    return UniformRandomPolicy()


class TabularPolicy(Policy):
    supports_enumeration = True
    deterministic = True

    def __init__(self, table: Mapping[StateKey, Action], default_action: Action = Action.NORTH):
        self.table = {k: Action(v) for k, v in table.items()}
        self.default_action = Action(default_action)

    def action_for(self, key: StateKey) -> Action:
        return self.table.get(key, self.default_action)

    def act(self, state: State, rng: random.Random) -> Action:
        return self.action_for(abstraction(state))

    def distribution(self, state: State) -> dict[Action, float]:
        return {self.act(state, None): 1.0}

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, TabularPolicy)
            and self.table == other.table
            and self.default_action == other.default_action
        )

    def __repr__(self) -> str:
        return f"TabularPolicy({len(self.table)} states, default={self.default_action.letter})"


class PrunedPolicy(Policy):
    """Acts like ``base`` in ``kept_states`` and uniformly at random elsewhere."""

    supports_enumeration = False

    def __init__(self, base: Policy, kept_states: Iterable[StateKey]):
        self.base = base
        self.kept_states = frozenset(kept_states)
        self.fallback = UniformRandomPolicy()

    def is_random(self, state: State) -> bool:
        return abstraction(state) not in self.kept_states

    def act(self, state: State, rng: random.Random) -> Action:
        if self.is_random(state):
            return self.fallback.act(state, rng)
        return self.base.act(state, rng)


def kept_count(r: float, n_ranked: int) -> int:
    # round first so 0.3 * 10 doesn't become 4 through 3.0000000000000004
    return math.ceil(round(r * n_ranked, 9))


def prune(base: Policy, ranking, r: float) -> PrunedPolicy:
    """Keep the top ``ceil(r * n)`` ranked states; everything else is randomised.

    States missing from the ranking are never kept, even at ``r = 1``.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"r must be in [0, 1], got {r}")
    keys = ranking.state_keys()
    return PrunedPolicy(base, keys[: kept_count(r, len(keys))])


# -- policy CSV ------------------------------------------------------------


def dump_policy(policy: TabularPolicy) -> str:
    buf = io.StringIO()
    buf.write(f"# default_action={policy.default_action.letter}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state_key", "action"])
    for key in sorted(policy.table, key=key_position):
        w.writerow([key, policy.table[key].letter])
    return buf.getvalue()


def load_policy(text: str) -> TabularPolicy:
    default = None
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            name, _, value = line[1:].strip().partition("=")
            if name.strip() == "default_action":
                default = Action.from_letter(value)
        elif line.strip():
            body.append(line)
    if default is None:
        raise ValueError("policy file lacks '# default_action=' row")
    rows = list(csv.DictReader(body))
    if not body or body[0].replace(" ", "") != "state_key,action":
        raise ValueError("policy file must have header 'state_key,action'")
    table = {}
    for row in rows:
        key_position(row["state_key"])
        table[row["state_key"]] = Action.from_letter(row["action"])
    return TabularPolicy(table, default)


def check_policy_matches(policy: TabularPolicy, world: GridWorld) -> None:
    """Raise ``ValueError`` if the table names a cell the world cannot host."""
    for key in policy.table:
        pos = key_position(key)
        if not world.in_bounds(pos) or world.terrain(pos) == "#":
            raise ValueError(f"policy state {key} is not an open cell of this world")
