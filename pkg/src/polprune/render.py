"""Text and SVG output: episode traces and recovery-curve charts.

SVG is written by hand with fixed number formatting so the same data always
produces the same bytes.
"""
from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

from .gridworld import DELTAS, GOAL, LAVA, WALL, GridWorld
from .policy import key_position

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#7f7f7f"]
CELL_FILL = {WALL: "#555555", LAVA: "#f28e2b", GOAL: "#59a14f"}
RANDOM_FILL = "#4e79d4"
ORIGINAL_FILL = "#e8e8e8"


def _f(x: float) -> str:
    return f"{x:.2f}"


def render_trace_text(world: GridWorld, trajectory, kept_states: Iterable[str] = ()) -> str:
    """Map with the path overlaid: ``o`` base-policy step, ``*`` random step.

    Cells visited with both kinds of step show ``*``. The start is ``S``.
    """
    grid = [list(row) for row in world.rows]
    for s in trajectory.steps:
        x, y = s.state.position
        if s.mutated:
            grid[y][x] = "*"
        elif grid[y][x] != "*":
            grid[y][x] = "o"
    sx, sy = world.start
    if grid[sy][sx] == ".":
        grid[sy][sx] = "S"
    o = trajectory.outcome
    lines = ["".join(r) for r in grid]
    lines.append(f"outcome={o.label.value} reason={o.terminal_reason.value} steps={len(trajectory)}")
    return "\n".join(lines) + "\n"


def render_trace_svg(
    world: GridWorld, trajectory, kept_states: Iterable[str] = (), cell: int = 32, title: str = ""
) -> str:
    """Grid with the agent path; cells where a random action was taken are blue.

    Kept (original) states get a dark outline.
    """
    kept = {key_position(k) for k in kept_states}
    random_cells, original_cells = set(), set()
    for s in trajectory.steps:
        (random_cells if s.mutated else original_cells).add(s.state.position)
    top = 24 if title else 0
    w, h = world.width * cell, world.height * cell + top
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="4" y="17" font-family="sans-serif" font-size="13">{escape(title)}</text>')
    for y, row in enumerate(world.rows):
        for x, c in enumerate(row):
            if c in CELL_FILL:
                fill = CELL_FILL[c]
            elif (x, y) in random_cells:
                fill = RANDOM_FILL
            elif (x, y) in original_cells:
                fill = ORIGINAL_FILL
            else:
                fill = "white"
            stroke = ' stroke="#000000" stroke-width="2"' if (x, y) in kept else ' stroke="#bbbbbb" stroke-width="0.5"'
            out.append(
                f'<rect x="{x * cell}" y="{y * cell + top}" width="{cell}" height="{cell}" fill="{fill}"{stroke}/>'
            )
    pts = [s.state.position for s in trajectory.steps]
    if trajectory.steps:
        last = trajectory.steps[-1]
        dx, dy = DELTAS[last.action]
        end = (last.state.position[0] + dx, last.state.position[1] + dy)
        if world.terrain(end) != WALL:
            pts.append(end)
    path = " ".join(f"{x * cell + cell / 2:.1f},{y * cell + cell / 2 + top:.1f}" for x, y in pts)
    out.append(f'<polyline points="{path}" fill="none" stroke="#222222" stroke-width="2" stroke-opacity="0.7"/>')
    sx, sy = world.start
    out.append(
        f'<circle cx="{sx * cell + cell / 2:.1f}" cy="{sy * cell + cell / 2 + top:.1f}" r="{cell / 5:.1f}" fill="#222222"/>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _panel(x0, y0, width, height, series, xlabel, ylabel, ymax):
    """One chart panel. ``series`` maps name -> list of (x, mean, se)."""

    def px(x):
        return x0 + x * width

    def py(y):
        return y0 + height - (y / ymax) * height

    out = [
        f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(width)}" height="{_f(height)}" fill="none" stroke="#333333"/>'
    ]
    for i in range(6):
        t = i / 5
        out.append(f'<line x1="{_f(px(t))}" y1="{_f(y0 + height)}" x2="{_f(px(t))}" y2="{_f(y0 + height + 4)}" stroke="#333333"/>')
        out.append(
            f'<text x="{_f(px(t))}" y="{_f(y0 + height + 16)}" font-size="11" text-anchor="middle">{t * 100:.0f}%</text>'
        )
        yv = ymax * t
        out.append(f'<line x1="{_f(x0 - 4)}" y1="{_f(py(yv))}" x2="{_f(x0)}" y2="{_f(py(yv))}" stroke="#333333"/>')
        out.append(
            f'<text x="{_f(x0 - 6)}" y="{_f(py(yv) + 4)}" font-size="11" text-anchor="end">{yv * 100:.0f}%</text>'
        )
    out.append(
        f'<text x="{_f(x0 + width / 2)}" y="{_f(y0 + height + 34)}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="{_f(x0 - 44)}" y="{_f(y0 + height / 2)}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 {_f(x0 - 44)} {_f(y0 + height / 2)})">{escape(ylabel)}</text>'
    )
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        upper = [f"{_f(px(x))},{_f(py(min(ymax, m + se)))}" for x, m, se in pts]
        lower = [f"{_f(px(x))},{_f(py(max(0.0, m - se)))}" for x, m, se in reversed(pts)]
        out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_f(px(x))},{_f(py(m))}" for x, m, _ in pts)
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
    return out


def render_recovery_chart(
    aggregate: Mapping[str, Sequence], title: str = "Reward recovered by pruned policies"
) -> str:
    """Two panels: reward fraction against r and against original-step fraction.

    ``aggregate`` maps method name -> points with ``r``, ``mean_reward_fraction``,
    ``std_error`` and ``mean_original_step_fraction`` attributes. Lines are
    means, shaded bands one standard error.
    """
    ymax = 1.0
    for pts in aggregate.values():
        for p in pts:
            ymax = max(ymax, p.mean_reward_fraction + p.std_error)
    ymax = round(ymax * 1.05 + 0.005, 2)
    left = {m: [(p.r, p.mean_reward_fraction, p.std_error) for p in pts] for m, pts in aggregate.items()}
    right = {
        m: [(p.mean_original_step_fraction, p.mean_reward_fraction, p.std_error) for p in pts]
        for m, pts in aggregate.items()
    }
    width, height = 920, 400
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" '
        'font-family="sans-serif">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="22" font-size="15" text-anchor="middle">{escape(title)}</text>',
    ]
    out += _panel(70, 50, 340, 270, left, "ranked states kept (r)", "reward recovered", ymax)
    out += _panel(530, 50, 340, 270, right, "steps using the original policy", "reward recovered", ymax)
    for i, name in enumerate(aggregate):
        color = PALETTE[i % len(PALETTE)]
        lx = 70 + i * 130
        out.append(f'<rect x="{lx}" y="372" width="14" height="10" fill="{color}"/>')
        out.append(f'<text x="{lx + 20}" y="381" font-size="12">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
