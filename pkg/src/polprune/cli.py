"""``polprune`` command line: gen-envs, train, rank, prune-eval, report, trace.

Option precedence is flag > ``--config`` file (flat ``key=value``) > built-in
default; ``--jobs`` additionally falls back to ``$POLPRUNE_JOBS``. Every
stochastic command needs an explicit seed. Each run appends one JSON line to
a manifest next to its outputs.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .evaluation import (
    DEFAULT_R_GRID,
    aggregate_curves,
    dump_aggregate,
    dump_auc_table,
    dump_curves,
    episode_seed,
    evaluate_curve,
    load_curves,
    normalize_r_grid,
    render_trace,
)
from .gridworld import generate_batch, parse_map, render_map
from .parallel import resolve_jobs
from .policy import check_policy_matches, dump_policy, load_policy, prune
from .ranking import RankMethod, dump_ranking, load_ranking, rank_states
from .render import render_recovery_chart
from .rollout import dump_suite, generate_test_suite, run_episode
from .training import Method, TrainingConfig, train


class CommandError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"error: {message}\n")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _grid(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


# (type, default) of every option a config file may set; None default = required
OPTIONS = {
    "gen-envs": {"count": (int, None), "size": (int, 9), "seed": (int, None),
                 "max_steps": (int, 0), "discount": (float, 0.99), "lava_density": (float, 0.1)},
    "train": {"seed": (int, None), "method": (str, "value-iteration"), "episodes": (int, 2000),
              "learning_rate": (float, 0.5), "epsilon": (float, 1.0), "epsilon_min": (float, 0.05),
              "convergence_tol": (float, 1e-10), "tie_slack": (float, 0.0), "randomize_ties": (_bool, False)},
    "rank": {"method": (str, None), "seed": (int, None), "tie_seed": (int, -1),
             "suite_episodes": (int, 1000), "mutation_rate": (float, 0.1), "branches": (int, 4),
             "exact_expectation": (_bool, True)},
    "prune-eval": {"seed": (int, None), "r_grid": (_grid, DEFAULT_R_GRID), "episodes": (int, 100)},
    "report": {},
    "trace": {"seed": (int, None), "r": (float, 1.0), "episode": (int, 0), "format": (str, "text")},
}


def read_config(path: Path) -> dict[str, str]:
    config = {}
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise CommandError(f"{path}:{n}: expected key=value")
        config[key.strip().replace("-", "_")] = value.strip()
    return config


def resolve(args: argparse.Namespace) -> None:
    config = read_config(Path(args.config)) if args.config else {}
    for name, (typ, default) in OPTIONS[args.command].items():
        if getattr(args, name) is not None:
            continue
        if name in config:
            try:
                setattr(args, name, typ(config[name]))
            except ValueError as exc:
                raise CommandError(f"config {name}: {exc}") from None
        elif default is None:
            raise CommandError(f"--{name.replace('_', '-')} is required (flag or config file)")
        else:
            setattr(args, name, default)
    if args.jobs is None and "jobs" in config:
        args.jobs = int(config["jobs"])
    args.jobs = resolve_jobs(args.jobs)


# -- manifest --------------------------------------------------------------


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def run_id(command: str, params: dict, inputs: dict[str, str]) -> str:
    blob = json.dumps([command, params, sorted(inputs.values())], sort_keys=True, default=str)
    return _digest(blob.encode())[:16]


class Run:
    """Collects inputs/outputs of one command and appends its manifest line."""

    def __init__(self, args: argparse.Namespace, manifest_dir: Path):
        self.args = args
        self.command = args.command
        self.params = {k: getattr(args, k) for k in OPTIONS[args.command]}
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.manifest = Path(args.manifest) if args.manifest else manifest_dir / "manifest.jsonl"

    def read(self, path) -> str:
        path = Path(path)
        if not path.is_file():
            raise CommandError(f"missing input file {path}")
        data = path.read_bytes()
        self.inputs[str(path)] = _digest(data)
        return data.decode()

    @property
    def id(self) -> str:
        return run_id(self.command, self.params, self.inputs)

    def write(self, path, text: str) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise CommandError(f"cannot write {path}: {exc.strerror}") from None
        self.outputs[str(path)] = _digest(text.encode())

    def finish(self) -> None:
        record = {
            "tool": "polprune",
            "version": __version__,
            "run_id": self.id,
            "command": self.command,
            "argv": self.args.argv,
            "params": self.params,
            "jobs": self.args.jobs,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        }
        self.manifest.parent.mkdir(parents=True, exist_ok=True)
        with self.manifest.open("a") as fh:
            fh.write(json.dumps(record, default=str) + "\n")


# -- commands --------------------------------------------------------------


def cmd_gen_envs(args):
    if args.count < 1:
        raise CommandError("--count must be >= 1")
    if args.size < 5:
        raise CommandError("--size must be >= 5")
    out = Path(args.out)
    run = Run(args, out)
    worlds = generate_batch(args.count, args.size, args.seed, max_steps=args.max_steps or None,
                            discount=args.discount, lava_density=args.lava_density)
    for i, world in enumerate(worlds):
        run.write(out / f"world_{i:03d}.map", render_map(world))
    run.finish()
    print(f"wrote {len(worlds)} worlds to {out}")


def _load_world(run, path):
    try:
        return parse_map(run.read(path))
    except ValueError as exc:
        raise CommandError(f"{path}: {exc}") from None


def _load_policy(run, path, world):
    try:
        policy = load_policy(run.read(path))
        check_policy_matches(policy, world)
    except ValueError as exc:
        raise CommandError(f"{path}: {exc}") from None
    return policy


def cmd_train(args):
    run = Run(args, Path(args.out).parent)
    world = _load_world(run, args.env)
    config = TrainingConfig(
        method=Method(args.method),
        train_seed=args.seed,
        convergence_tol=args.convergence_tol,
        tie_slack=args.tie_slack,
        randomize_ties=args.randomize_ties,
        episodes=args.episodes,
        learning_rate=args.learning_rate,
        epsilon=args.epsilon,
        epsilon_min=args.epsilon_min,
    )
    policy = train(world, config)
    run.write(args.out, dump_policy(policy))
    run.finish()
    print(f"wrote policy with {len(policy.table)} states to {args.out}")


def cmd_rank(args):
    try:
        method = RankMethod(args.method)
    except ValueError:
        raise CommandError(f"unknown method {args.method!r}") from None
    run = Run(args, Path(args.out).parent)
    world = _load_world(run, args.env)
    policy = _load_policy(run, args.policy, world)
    suite = generate_test_suite(world, policy, args.suite_episodes, args.mutation_rate, args.seed, args.jobs)
    tie_seed = args.seed if args.tie_seed < 0 else args.tie_seed
    ranking = rank_states(
        world, policy, suite, method,
        k_branches=args.branches, seed=args.seed, exact=args.exact_expectation,
        tie_seed=tie_seed, jobs=args.jobs,
    )
    if args.suite_out:
        run.write(args.suite_out, dump_suite(suite))
    run.write(args.out, dump_ranking(ranking, {"run_id": run.id}))
    run.finish()
    print(f"ranked {len(ranking)} states with {method.value} -> {args.out}")


def cmd_prune_eval(args):
    run = Run(args, Path(args.out).parent)
    world = _load_world(run, args.env)
    policy = _load_policy(run, args.policy, world)
    try:
        ranking = load_ranking(run.read(args.ranking))
    except (ValueError, KeyError) as exc:
        raise CommandError(f"{args.ranking}: malformed ranking: {exc}") from None
    world_id = args.world_id or Path(args.env).stem
    grid = normalize_r_grid(args.r_grid)
    curve = evaluate_curve(world, policy, ranking, grid, args.episodes, args.seed, world_id, args.jobs)
    run.write(args.out, f"# run_id={run.id}\n" + dump_curves([curve]))
    if args.traces:
        seed = episode_seed(args.seed, world_id, 0)
        for r in grid:
            pruned = prune(policy, ranking, r)
            traj = run_episode(world, pruned, seed)
            svg = render_trace(world, traj, pruned.kept_states, fmt="svg",
                               title=f"{world_id} {ranking.method.value} r={r:.2f}")
            run.write(Path(args.traces) / f"{world_id}_{ranking.method.value}_r{r:.2f}.svg", _stamp_svg(svg, run.id))
    run.finish()
    print(f"wrote {len(curve.points)} curve points to {args.out}")


def _stamp_svg(svg: str, rid: str) -> str:
    # comment goes right after the opening <svg ...> line
    return svg.replace(">\n", f">\n<!-- run_id={rid} -->\n", 1)


def cmd_report(args):
    out = Path(args.out_dir)
    run = Run(args, out)
    curves = []
    grid, grid_file = None, None
    for path in args.curves:
        loaded = load_curves(run.read(path))
        for c in loaded:
            if grid is None:
                grid, grid_file = c.rs, path
            elif c.rs != grid:
                raise CommandError(f"{path}: r grid differs from {grid_file}; refusing to interpolate")
        curves += loaded
    if not curves:
        raise CommandError("no curve rows in the inputs")
    by_method: dict[str, list] = {}
    for c in sorted(curves, key=lambda c: (c.ranking_method, c.world_id)):
        by_method.setdefault(c.ranking_method, []).append(c)
    aggregate = {m: aggregate_curves(cs) for m, cs in by_method.items()}
    header = f"# run_id={run.id}\n"
    run.write(out / "aggregate.csv", header + dump_aggregate(aggregate))
    run.write(out / "auc.csv", header + dump_auc_table(by_method))
    svg = render_recovery_chart(aggregate)
    run.write(out / "recovery.svg", _stamp_svg(svg, run.id))
    run.finish()
    print(f"aggregated {len(curves)} curves over {len(by_method)} methods into {out}")


def cmd_trace(args):
    run = Run(args, Path(args.out).parent if args.out != "-" else Path("."))
    world = _load_world(run, args.env)
    policy = _load_policy(run, args.policy, world)
    kept = ()
    if args.ranking:
        pruned = prune(policy, load_ranking(run.read(args.ranking)), args.r)
        policy, kept = pruned, pruned.kept_states
    world_id = args.world_id or Path(args.env).stem
    traj = run_episode(world, policy, episode_seed(args.seed, world_id, args.episode))
    text = render_trace(world, traj, kept, fmt=args.format)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        run.write(args.out, _stamp_svg(text, run.id) if args.format == "svg" else text)
        run.finish()


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polprune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"polprune {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file")
    common.add_argument("--jobs", type=int, help="worker processes (default $POLPRUNE_JOBS or 1)")
    common.add_argument("--manifest", help="manifest file to append to")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-envs", parents=[common], help="generate lava worlds")
    g.add_argument("--count", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--max-steps", type=int, help="0 = 4*size*size")
    g.add_argument("--discount", type=float)
    g.add_argument("--lava-density", type=float, help="starting lava density of the ramp")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_envs)

    t = sub.add_parser("train", parents=[common], help="train a tabular policy")
    t.add_argument("--env", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--method", choices=[m.value for m in Method])
    t.add_argument("--episodes", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--epsilon-min", type=float)
    t.add_argument("--convergence-tol", type=float)
    t.add_argument("--tie-slack", type=float)
    t.add_argument("--randomize-ties", type=_bool, nargs="?", const=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rank", parents=[common], help="rank policy decisions")
    r.add_argument("--env", required=True)
    r.add_argument("--policy", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--method")
    r.add_argument("--seed", type=int, help="seeds the test suite and causal branches")
    r.add_argument("--tie-seed", type=int, help="permutation seed for --method random (default --seed)")
    r.add_argument("--suite-episodes", type=int)
    r.add_argument("--mutation-rate", type=float)
    r.add_argument("--branches", type=int)
    r.add_argument("--exact-expectation", dest="exact_expectation", action="store_const", const=True)
    r.add_argument("--sampled", dest="exact_expectation", action="store_const", const=False)
    r.add_argument("--suite-out", help="also write the mutant test suite records")
    r.set_defaults(func=cmd_rank)

    e = sub.add_parser("prune-eval", parents=[common], help="evaluate pruned policies")
    e.add_argument("--env", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--ranking", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--r-grid", type=_grid)
    e.add_argument("--episodes", type=int)
    e.add_argument("--world-id")
    e.add_argument("--traces", help="directory for one trace SVG per r")
    e.set_defaults(func=cmd_prune_eval)

    rep = sub.add_parser("report", parents=[common], help="aggregate curve CSVs")
    rep.add_argument("--curves", nargs="+", required=True)
    rep.add_argument("--out-dir", required=True)
    rep.set_defaults(func=cmd_report)

    tr = sub.add_parser("trace", parents=[common], help="render one episode")
    tr.add_argument("--env", required=True)
    tr.add_argument("--policy", required=True)
    tr.add_argument("--ranking")
    tr.add_argument("--r", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--episode", type=int)
    tr.add_argument("--world-id")
    tr.add_argument("--format", choices=["text", "svg"])
    tr.add_argument("--out", default="-")
    tr.set_defaults(func=cmd_trace)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        resolve(args)
        args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
