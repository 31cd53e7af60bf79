"""Deterministic lava gridworld in the spirit of MiniGrid's LavaGap/LavaCrossing.

Coordinates are ``(x, y)`` with ``y`` growing southwards. The agent moves in
four compass directions; bumping into a wall wastes the step. Entering lava
ends the episode with reward 0, entering the goal ends it with reward
``1 - 0.9 * steps / max_steps``, and running out of steps is a failure.
"""
from __future__ import annotations

import random
import re
from collections import deque
from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import cached_property
from typing import NamedTuple

from .seeding import derive_seed

Pos = tuple[int, int]

WALL, EMPTY, LAVA, GOAL, START = "#", ".", "L", "G", "S"
MAP_ALPHABET = frozenset(WALL + EMPTY + LAVA + GOAL + START)
MIN_GENERATED_SIZE = 5
DEFAULT_DISCOUNT = 0.99
DEFAULT_LAVA_DENSITY = 0.1


class MapFormatError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class TerminalStateError(RuntimeError):
    """Raised when ``step`` is asked to advance an episode that already ended."""


class Action(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3

    @property
    def letter(self) -> str:
        return self.name[0]

    @classmethod
    def from_letter(cls, letter: str) -> "Action":
        for a in cls:
            if a.letter == letter.strip().upper():
                return a
        raise ValueError(f"unknown action {letter!r}")


ACTIONS = tuple(Action)
DELTAS = {
    Action.NORTH: (0, -1),
    Action.EAST: (1, 0),
    Action.SOUTH: (0, 1),
    Action.WEST: (-1, 0),
}


class Label(str, Enum):
    PASS = "pass"
    FAIL = "fail"


class TerminalReason(str, Enum):
    GOAL_REACHED = "goal"
    LAVA_DEATH = "lava"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Outcome:
    label: Label
    terminal_reason: TerminalReason
    final_reward: float

    @property
    def passed(self) -> bool:
        return self.label is Label.PASS


@dataclass(frozen=True)
class State:
    position: Pos
    steps_taken: int = 0


class StepResult(NamedTuple):
    state: State
    reward: float
    done: bool
    outcome: Outcome | None


@dataclass(frozen=True)
class GridWorld:
    """Immutable layout plus episode parameters.

    ``rows`` holds one terrain string per grid row using ``# . L G``; the
    start cell is stored as ``.`` and recorded separately in ``start``.
    """

    rows: tuple[str, ...]
    start: Pos
    max_steps: int
    discount: float = DEFAULT_DISCOUNT
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.rows or any(len(r) != len(self.rows[0]) for r in self.rows):
            raise MapFormatError("grid is not rectangular")
        for row in self.rows:
            bad = set(row) - {WALL, EMPTY, LAVA, GOAL}
            if bad:
                raise MapFormatError(f"unknown terrain {sorted(bad)}")
        goals = [(x, y) for y, row in enumerate(self.rows) for x, c in enumerate(row) if c == GOAL]
        if not goals:
            raise MapFormatError("missing goal")
        if len(goals) > 1:
            raise MapFormatError("multiple goals")
        w, h = self.width, self.height
        border = [(x, 0) for x in range(w)] + [(x, h - 1) for x in range(w)]
        border += [(0, y) for y in range(h)] + [(w - 1, y) for y in range(h)]
        if any(self.terrain(p) != WALL for p in border):
            raise MapFormatError("open border")
        if not self.in_bounds(self.start) or self.terrain(self.start) != EMPTY:
            raise MapFormatError("start must be an empty cell")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def height(self) -> int:
        return len(self.rows)

    @cached_property
    def goal(self) -> Pos:
        for y, row in enumerate(self.rows):
            x = row.find(GOAL)
            if x >= 0:
                return (x, y)
        raise AssertionError("unreachable: validated in __post_init__")

    def in_bounds(self, pos: Pos) -> bool:
        return 0 <= pos[0] < self.width and 0 <= pos[1] < self.height

    def terrain(self, pos: Pos) -> str:
        return self.rows[pos[1]][pos[0]]

    def cells(self, *kinds: str) -> list[Pos]:
        return [
            (x, y)
            for y, row in enumerate(self.rows)
            for x, c in enumerate(row)
            if c in kinds
        ]

    def move(self, pos: Pos, action: Action) -> Pos:
        dx, dy = DELTAS[action]
        nxt = (pos[0] + dx, pos[1] + dy)
        return pos if self.terrain(nxt) == WALL else nxt


def goal_reward(steps_taken: int, max_steps: int) -> float:
    return 1.0 - 0.9 * (steps_taken / max_steps)


def initial_state(world: GridWorld) -> State:
    return State(world.start, 0)


def is_terminal(world: GridWorld, state: State) -> bool:
    return (
        world.terrain(state.position) in (LAVA, GOAL)
        or state.steps_taken >= world.max_steps
    )


def step(world: GridWorld, state: State, action: Action) -> StepResult:
    if is_terminal(world, state):
        raise TerminalStateError(f"cannot step terminal state {state}")
    pos = world.move(state.position, Action(action))
    steps = state.steps_taken + 1
    nxt = State(pos, steps)
    cell = world.terrain(pos)
    if cell == LAVA:
        return StepResult(nxt, 0.0, True, Outcome(Label.FAIL, TerminalReason.LAVA_DEATH, 0.0))
    if cell == GOAL:
        reward = goal_reward(steps, world.max_steps)
        return StepResult(nxt, reward, True, Outcome(Label.PASS, TerminalReason.GOAL_REACHED, reward))
    if steps >= world.max_steps:
        return StepResult(nxt, 0.0, True, Outcome(Label.FAIL, TerminalReason.TIMEOUT, 0.0))
    return StepResult(nxt, 0.0, False, None)


# -- graph helpers ---------------------------------------------------------


def _open_neighbours(world: GridWorld, pos: Pos):
    for a in ACTIONS:
        nxt = world.move(pos, a)
        if nxt != pos and world.terrain(nxt) != LAVA:
            yield nxt


def goal_distances(world: GridWorld) -> dict[Pos, int]:
    """Fewest moves from each cell to the goal without touching lava.

    Moves are reversible, so a BFS outward from the goal suffices. Cells with
    no safe route are absent.
    """
    dist = {world.goal: 0}
    queue = deque([world.goal])
    while queue:
        pos = queue.popleft()
        for nxt in _open_neighbours(world, pos):
            if nxt not in dist:
                dist[nxt] = dist[pos] + 1
                queue.append(nxt)
    return dist


def shortest_safe_path(world: GridWorld) -> int | None:
    return goal_distances(world).get(world.start)


def is_solvable(world: GridWorld) -> bool:
    return shortest_safe_path(world) is not None


def reachable_positions(world: GridWorld) -> set[Pos]:
    """Non-terminal cells the agent can stand on when acting, from the start."""
    seen = {world.start}
    queue = deque([world.start])
    while queue:
        pos = queue.popleft()
        for nxt in _open_neighbours(world, pos):
            if nxt not in seen and world.terrain(nxt) != GOAL:
                seen.add(nxt)
                queue.append(nxt)
    return seen


# -- text format -----------------------------------------------------------

_META_RE = re.compile(
    r"^@\s+max_steps=(?P<max_steps>\d+)\s+discount=(?P<discount>\S+)\s+seed=(?P<seed>-?\d+)\s*$"
)


def parse_map(text: str) -> GridWorld:
    """Parse the ``# . L G S`` grid text with its ``@ max_steps=...`` footer.

    The footer may be omitted, in which case ``max_steps = 4 * width * height``,
    the default discount and seed 0 are used.
    """
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    meta = None
    if lines and lines[-1].startswith("@"):
        meta = _META_RE.match(lines.pop())
        if meta is None:
            raise MapFormatError("malformed metadata line")
    if not lines:
        raise MapFormatError("empty map")
    if any(len(ln) != len(lines[0]) for ln in lines):
        raise MapFormatError("grid is not rectangular")
    starts = []
    for y, ln in enumerate(lines):
        bad = set(ln) - MAP_ALPHABET
        if bad:
            raise MapFormatError(f"unknown character {sorted(bad)[0]!r} in row {y}")
        starts += [(x, y) for x, c in enumerate(ln) if c == START]
    if not starts:
        raise MapFormatError("missing start")
    if len(starts) > 1:
        raise MapFormatError("multiple starts")
    rows = tuple(ln.replace(START, EMPTY) for ln in lines)
    if meta is None:
        return GridWorld(rows, starts[0], 4 * len(rows) * len(rows[0]))
    return GridWorld(
        rows,
        starts[0],
        int(meta["max_steps"]),
        float(meta["discount"]),
        int(meta["seed"]),
    )


def render_map(world: GridWorld) -> str:
    rows = [list(r) for r in world.rows]
    sx, sy = world.start
    rows[sy][sx] = START
    body = "\n".join("".join(r) for r in rows)
    meta = f"@ max_steps={world.max_steps} discount={world.discount!r} seed={world.seed}"
    return f"{body}\n{meta}\n"


def normalize_map(text: str) -> str:
    return render_map(parse_map(text))


# -- generation ------------------------------------------------------------


def generate_world(
    size: int,
    seed: int,
    *,
    max_steps: int | None = None,
    discount: float = DEFAULT_DISCOUNT,
    lava_density: float = DEFAULT_LAVA_DENSITY,
    max_attempts: int = 500,
) -> GridWorld:
    """Scatter lava over a ``size x size`` room until the safe route is a detour.

    Start sits on the west wall and the goal on the east wall. Lava density
    starts at 0.1 and is raised after every layout whose shortest safe path
    still equals the Manhattan distance; unsolvable layouts are redrawn at the
    same density.
    """
    if size < MIN_GENERATED_SIZE:
        raise ValueError(f"size must be >= {MIN_GENERATED_SIZE}, got {size}")
    rng = random.Random(seed)
    max_steps = max_steps or 4 * size * size
    if not 0.0 < lava_density < 1.0:
        raise ValueError("lava_density must be in (0, 1)")
    density = lava_density
    for _ in range(max_attempts):
        start = (1, rng.randint(1, size - 2))
        goal = (size - 2, rng.randint(1, size - 2))
        grid = [[WALL] * size for _ in range(size)]
        for y in range(1, size - 1):
            for x in range(1, size - 1):
                if (x, y) not in (start, goal) and rng.random() < density:
                    grid[y][x] = LAVA
                else:
                    grid[y][x] = EMPTY
        grid[goal[1]][goal[0]] = GOAL
        world = GridWorld(tuple("".join(r) for r in grid), start, max_steps, discount, seed)
        dist = shortest_safe_path(world)
        if dist is None:
            continue
        manhattan = abs(goal[0] - start[0]) + abs(goal[1] - start[1])
        if dist > manhattan:
            return world
        density = min(density + 0.02, 0.6)
    raise GenerationError(f"no challenging {size}x{size} layout after {max_attempts} attempts")


def generate_batch(count: int, size: int, gen_seed: int, **kwargs) -> list[GridWorld]:
    """``count`` distinct challenging worlds; a pure function of ``gen_seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if size < MIN_GENERATED_SIZE:
        raise ValueError(f"size must be >= {MIN_GENERATED_SIZE}, got {size}")
    worlds: list[GridWorld] = []
    layouts: set[tuple] = set()
    for i in range(count):
        for retry in range(100):
            world = generate_world(size, derive_seed("world", gen_seed, i, retry), **kwargs)
            key = (world.rows, world.start)
            if key not in layouts:
                break
        else:
            raise GenerationError(f"could not find a distinct layout for world {i}")
        layouts.add(key)
        worlds.append(world)
    return worlds


def lava_on_corridor(world: GridWorld) -> bool:
    """True if some lava cell lies inside the start/goal bounding box."""
    (x0, y0), (x1, y1) = world.start, world.goal
    xs, ys = sorted((x0, x1)), sorted((y0, y1))
    return any(
        xs[0] <= x <= xs[1] and ys[0] <= y <= ys[1] for x, y in world.cells(LAVA)
    )
