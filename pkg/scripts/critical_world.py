#!/usr/bin/env python3
"""Rank the states of a small hand-built world with every method.

The start cell has lava on three sides, the cell after it has none. Every
method except random should put the start above its neighbour.
"""
import argparse

from polprune.evaluation import render_trace
from polprune.gridworld import parse_map
from polprune.ranking import RankMethod, rank_states
from polprune.rollout import generate_test_suite, run_episode
from polprune.training import train

WORLD = """\
######
#.L..#
#LS..#
#.L.L#
#...G#
######
@ max_steps=50 discount=0.99 seed=0
"""


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suite-episodes", type=int, default=1000)
    args = p.parse_args()

    world = parse_map(WORLD)
    policy = train(world)
    print(render_trace(world, run_episode(world, policy, args.seed)))
    suite = generate_test_suite(world, policy, args.suite_episodes, 0.1, args.seed)
    for method in RankMethod:
        ranking = rank_states(world, policy, suite, method, seed=args.seed, tie_seed=args.seed)
        top = ", ".join(f"{s.state}({s.value:.3g})" for s in ranking.ordered[:6])
        print(f"{method.value:10s} critical #{ranking.rank_of('2,2')}  neighbour #{ranking.rank_of('3,2')}  top: {top}")


if __name__ == "__main__":
    main()
