"""Per-state importance scores and the rankings built from them.

SBFL measures are applied in *importance* orientation: the classical
"executed" and "failing" roles are played by "unmutated" and "passing", i.e.
each textbook formula is evaluated with ``a_ef <-> a_ep`` and
``a_nf <-> a_np`` swapped. A high score therefore marks a state whose
original action goes with success.
"""
from __future__ import annotations

import csv
import io
import math
import random
import statistics
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import partial

from .gridworld import ACTIONS, GridWorld
from .parallel import pmap
from .policy import Policy, StateKey
from .rollout import TestSuite, counterfactual_branch
from .seeding import derive_seed

ZOLTAR_K = 10000.0
TIE_RULE = "value desc, visits desc, state_key asc"


class RankMethod(str, Enum):
    CAUSAL = "causal"
    OCHIAI = "ochiai"
    TARANTULA = "tarantula"
    ZOLTAR = "zoltar"
    WONG2 = "wong2"
    RANDOM = "random"


SBFL_METHODS = (RankMethod.OCHIAI, RankMethod.TARANTULA, RankMethod.ZOLTAR, RankMethod.WONG2)


@dataclass(frozen=True)
class SpectrumVector:
    a_ep: int = 0  # unmutated, passing
    a_ef: int = 0  # unmutated, failing
    a_np: int = 0  # mutated, passing
    a_nf: int = 0  # mutated, failing

    @property
    def total(self) -> int:
        return self.a_ep + self.a_ef + self.a_np + self.a_nf


def spectrum_from_suite(suite: TestSuite) -> dict[StateKey, SpectrumVector]:
    """One counter increment per (trajectory, visited state) pair."""
    if not len(suite):
        raise ValueError("empty test suite")
    counts: Counter = Counter()
    for traj in suite.trajectories:
        passed = traj.outcome.passed
        for key, mutated in traj.mutation_flags().items():
            counts[key, mutated, passed] += 1
    keys = sorted({k for k, _, _ in counts})
    return {
        k: SpectrumVector(
            a_ep=counts[k, False, True],
            a_ef=counts[k, False, False],
            a_np=counts[k, True, True],
            a_nf=counts[k, True, False],
        )
        for k in keys
    }


def _div(num: float, den: float) -> float:
    return num / den if den else 0.0


def ochiai(v: SpectrumVector) -> float:
    return _div(v.a_ep, math.sqrt((v.a_ep + v.a_np) * (v.a_ep + v.a_ef)))


def tarantula(v: SpectrumVector) -> float:
    # a zero denominator anywhere zeroes the whole score, so a state never
    # seen in failing (or passing) runs cannot take the top slot by default
    if v.a_ep + v.a_np == 0 or v.a_ef + v.a_nf == 0:
        return 0.0
    p = v.a_ep / (v.a_ep + v.a_np)
    f = v.a_ef / (v.a_ef + v.a_nf)
    return _div(p, p + f)


def zoltar(v: SpectrumVector) -> float:
    if v.a_ep == 0:
        # inner term is a_np*a_ef/0: either +inf or 0/0, both give score 0
        return 0.0
    penalty = ZOLTAR_K * v.a_np * v.a_ef / v.a_ep
    return _div(v.a_ep, v.a_ep + v.a_np + v.a_ef + penalty)


def wong2(v: SpectrumVector) -> float:
    return float(v.a_ep - v.a_ef)


_MEASURES = {
    RankMethod.OCHIAI: ochiai,
    RankMethod.TARANTULA: tarantula,
    RankMethod.ZOLTAR: zoltar,
    RankMethod.WONG2: wong2,
}


def sbfl_score(v: SpectrumVector, measure: RankMethod | str) -> float:
    if v.total == 0:
        raise ValueError("spectrum vector is all zero")
    measure = RankMethod(measure)
    if measure not in _MEASURES:
        raise ValueError(f"{measure.value} is not an SBFL measure")
    return _MEASURES[measure](v)


@dataclass(frozen=True)
class Score:
    state: StateKey
    value: float
    visits: int
    std_error: float = 0.0


def sbfl_scores(suite: TestSuite, measure: RankMethod | str) -> list[Score]:
    return [
        Score(k, sbfl_score(v, measure), v.total, 0.0)
        for k, v in spectrum_from_suite(suite).items()
    ]


def visit_counts(suite: TestSuite) -> dict[StateKey, int]:
    counts: Counter = Counter()
    for traj in suite.trajectories:
        counts.update(traj.mutation_flags().keys())
    return dict(counts)


def _causal_exact(world, policy, episode_seed, key):
    branches = [
        counterfactual_branch(world, policy, key, episode_seed, forced_action=a) for a in ACTIONS
    ]
    factual = branches[0].factual_return
    return factual - statistics.fmean(b.counterfactual_return for b in branches), 0.0


def _causal_sampled(world, policy, seed, k_branches, key):
    diffs = []
    for j in range(k_branches):
        b = counterfactual_branch(
            world,
            policy,
            key,
            derive_seed("causal-episode", seed, j),
            derive_seed("causal-branch", seed, key, j),
        )
        diffs.append(b.factual_return - b.counterfactual_return)
    se = statistics.stdev(diffs) / math.sqrt(k_branches) if k_branches > 1 else 0.0
    return statistics.fmean(diffs), se


def causal_scores(
    world: GridWorld,
    policy: Policy,
    suite: TestSuite,
    k_branches: int,
    seed: int,
    exact: bool = True,
    jobs: int = 1,
) -> list[Score]:
    """Causal effect of the policy's first-visit decision in every suite state.

    The effect is the start-state return with the policy's own action minus
    the expected return when that single decision is replaced by a uniformly
    random action. With ``exact`` (and ``k_branches >= 4``) the expectation
    is an average over the four forced actions, which is exact for a
    deterministic policy in this deterministic world; otherwise it is a mean
    over ``k_branches`` sampled branches and carries a standard error.
    """
    if k_branches < 1:
        raise ValueError("k_branches must be >= 1")
    keys = sorted(suite.visited)
    if exact and k_branches >= 4:
        if not policy.deterministic:
            raise ValueError("exact expectation needs a deterministic policy")
        fn = partial(_causal_exact, world, policy, derive_seed("causal-episode", seed, 0))
    else:
        fn = partial(_causal_sampled, world, policy, seed, k_branches)
    results = pmap(fn, keys, jobs)
    visits = visit_counts(suite)
    return [Score(k, c, visits[k], se) for k, (c, se) in zip(keys, results)]


@dataclass(frozen=True)
class Ranking:
    ordered: tuple[Score, ...]
    method: RankMethod
    tie_rule: str = TIE_RULE
    metadata: dict = field(default_factory=dict, compare=False)

    def state_keys(self) -> list[StateKey]:
        return [s.state for s in self.ordered]

    def rank_of(self, key: StateKey) -> int:
        """1-based rank; states absent from the ranking share the last rank."""
        for i, s in enumerate(self.ordered):
            if s.state == key:
                return i + 1
        return len(self.ordered) + 1

    def __len__(self) -> int:
        return len(self.ordered)


def build_ranking(scores: list[Score], method: RankMethod | str, tie_seed: int = 0) -> Ranking:
    """Sort descending by value, then by visits, then by state key.

    ``RankMethod.RANDOM`` ignores the values and returns a permutation of the
    scored states drawn from ``tie_seed``.
    """
    method = RankMethod(method)
    for s in scores:
        if not math.isfinite(s.value):
            raise ValueError(f"non-finite score for state {s.state}")
    if method is RankMethod.RANDOM:
        ordered = sorted(scores, key=lambda s: s.state)
        random.Random(tie_seed).shuffle(ordered)
        return Ranking(tuple(ordered), method, f"permutation(tie_seed={tie_seed})")
    ordered = sorted(scores, key=lambda s: (-s.value, -s.visits, s.state))
    return Ranking(tuple(ordered), method)


def rank_states(
    world: GridWorld,
    policy: Policy,
    suite: TestSuite,
    method: RankMethod | str,
    *,
    k_branches: int = 4,
    seed: int = 0,
    exact: bool = True,
    tie_seed: int = 0,
    jobs: int = 1,
) -> Ranking:
    method = RankMethod(method)
    if method is RankMethod.CAUSAL:
        scores = causal_scores(world, policy, suite, k_branches, seed, exact, jobs)
    elif method is RankMethod.RANDOM:
        scores = [Score(k, 0.0, n) for k, n in sorted(visit_counts(suite).items())]
    else:
        scores = sbfl_scores(suite, method)
    ranking = build_ranking(scores, method, tie_seed)
    meta = {
        "method": method.value,
        "orientation": "importance",
        "suite_seed": suite.suite_seed,
        "mutation_rate": suite.mutation_rate,
        "suite_episodes": len(suite),
        "k_branches": k_branches,
        "exact_expectation": bool(exact and k_branches >= 4),
        "causal_seed": seed,
        "tie_seed": tie_seed,
        "tie_rule": ranking.tie_rule,
    }
    return Ranking(ranking.ordered, method, ranking.tie_rule, meta)


# -- ranking CSV -----------------------------------------------------------

RANKING_HEADER = ["rank", "state_key", "score", "std_error", "visits", "method"]


def dump_ranking(ranking: Ranking, extra: dict | None = None) -> str:
    buf = io.StringIO()
    meta = {**ranking.metadata, **(extra or {})}
    meta.setdefault("method", ranking.method.value)
    meta.setdefault("orientation", "importance")
    for name, value in meta.items():
        buf.write(f"# {name}={value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RANKING_HEADER)
    for i, s in enumerate(ranking.ordered, start=1):
        w.writerow([i, s.state, repr(s.value), repr(s.std_error), s.visits, ranking.method.value])
    return buf.getvalue()


def load_ranking(text: str) -> Ranking:
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            name, _, value = line[1:].strip().partition("=")
            meta[name.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header != RANKING_HEADER:
        raise ValueError(f"ranking header must be {','.join(RANKING_HEADER)}")
    scores, ranks = [], []
    method = None
    for row in reader:
        if len(row) != len(RANKING_HEADER):
            raise ValueError(f"malformed ranking row {row}")
        rank, key, value, se, visits, m = row
        ranks.append(int(rank))
        scores.append(Score(key, float(value), int(visits), float(se)))
        method = RankMethod(m)
    if ranks != list(range(1, len(ranks) + 1)):
        raise ValueError("ranks must run 1..n in order")
    method = method or RankMethod(meta.get("method", "random"))
    tie_rule = meta.get("tie_rule", TIE_RULE)
    return Ranking(tuple(scores), method, tie_rule, meta)
