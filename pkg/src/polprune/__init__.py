"""Rank the decisions of a gridworld policy by causal effect or SBFL score and
evaluate the pruned policies that keep only the top-ranked decisions."""

__version__ = "0.1.0"
