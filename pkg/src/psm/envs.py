"""Gridworld and four-room environments.

Actions are ``up, right, down, left, stay`` (indices 0..4). States are the
open cells in row-major order; bumping into a wall or the boundary leaves the
agent in place.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import TabularMdp

ACTIONS = ("up", "right", "down", "left", "stay")
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1), (0, 0))

FOUR_ROOM_11 = """\
.....#.....
.....#.....
...........
.....#.....
.....#.....
#.####.....
.....###.##
.....#.....
.....#.....
...........
.....#.....
"""


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset = frozenset()
    doorways: frozenset = frozenset()
    slip: float = 0.0

    def is_open(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width and (r, c) not in self.walls

    def open_cells(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.height) for c in range(self.width)
                if (r, c) not in self.walls]

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise LayoutError("grid must have positive size")
        if not 0.0 <= self.slip <= 1.0:
            raise LayoutError("slip must be a probability")
        if self.walls & self.doorways:
            raise LayoutError("doorway cells may not be walls")
        cells = self.open_cells()
        if not cells:
            raise LayoutError("grid has no open cells")
        seen = {cells[0]}
        todo = deque([cells[0]])
        while todo:
            r, c = todo.popleft()
            for dr, dc in MOVES[:4]:
                nb = (r + dr, c + dc)
                if self.is_open(*nb) and nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        if len(seen) != len(cells):
            raise LayoutError(f"layout is disconnected ({len(seen)}/{len(cells)} cells reachable)")


@dataclass(frozen=True, eq=False)
class Grid:
    """A built grid environment: the MDP plus its cell bookkeeping."""

    spec: GridSpec
    mdp: TabularMdp
    cells: tuple = field(default=())

    @property
    def n_states(self) -> int:
        return len(self.cells)

    def state_of(self, r: int, c: int) -> int:
        return self.cells.index((r, c))

    def cell_of(self, s: int) -> tuple[int, int]:
        return self.cells[s]

    def to_image(self, values, fill: float = np.nan) -> np.ndarray:
        img = np.full((self.spec.height, self.spec.width), fill, dtype=np.float64)
        for s, (r, c) in enumerate(self.cells):
            img[r, c] = values[s]
        return img

    def diameter(self) -> int:
        return int(shortest_path_lengths(self.mdp).max())


def parse_layout(text: str, slip: float = 0.0) -> GridSpec:
    """``#`` is a wall, ``.`` is open; one row per line, all rows equal length."""
    rows = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise LayoutError("empty layout")
    width = len(rows[0])
    walls = set()
    for r, row in enumerate(rows):
        if len(row) != width:
            raise LayoutError(f"ragged row {r}: length {len(row)} != {width}")
        for c, ch in enumerate(row):
            if ch == "#":
                walls.add((r, c))
            elif ch != ".":
                raise LayoutError(f"unexpected character {ch!r} at ({r}, {c})")
    spec = GridSpec(width, len(rows), frozenset(walls), _find_doorways(width, len(rows), walls), slip)
    return spec


def _find_doorways(width: int, height: int, walls: set) -> frozenset:
    """Open cells squeezed between two walls on opposite sides."""
    doors = set()
    for r in range(height):
        for c in range(width):
            if (r, c) in walls:
                continue
            horiz = (r, c - 1) in walls and (r, c + 1) in walls
            vert = (r - 1, c) in walls and (r + 1, c) in walls
            if horiz or vert:
                doors.add((r, c))
    return frozenset(doors)


def load_layout(path, slip: float = 0.0) -> GridSpec:
    return parse_layout(Path(path).read_text(encoding="utf-8"), slip)


def build_grid(spec: GridSpec, gamma: float = 0.99) -> Grid:
    spec.validate()
    cells = tuple(spec.open_cells())
    index = {cell: i for i, cell in enumerate(cells)}
    n_s, n_a = len(cells), len(MOVES)
    det = np.zeros((n_s, n_a, n_s))
    for s, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(MOVES):
            nxt = (r + dr, c + dc)
            det[s, a, index[nxt] if spec.is_open(*nxt) else s] = 1.0
    if spec.slip > 0:
        det = (1.0 - spec.slip) * det + spec.slip * det.mean(axis=1, keepdims=True)
    return Grid(spec, TabularMdp(det, gamma), cells)


def build_gridworld(spec: GridSpec, gamma: float = 0.99) -> TabularMdp:
    return build_grid(spec, gamma).mdp


def open_grid(width: int = 8, height: int | None = None, slip: float = 0.0) -> GridSpec:
    return GridSpec(width, width if height is None else height, slip=slip)


def four_room_spec(size: int = 11, slip: float = 0.0) -> GridSpec:
    """Four rooms joined by four one-cell doorways.

    ``size=11`` is the classic layout; other odd sizes use a symmetric
    template with the same topology.
    """
    if size == 11:
        spec = parse_layout(FOUR_ROOM_11, slip)
        return spec
    if size < 5 or size % 2 == 0:
        raise LayoutError("four-room size must be odd and at least 5")
    mid = size // 2
    walls = {(r, mid) for r in range(size)} | {(mid, c) for c in range(size)}
    q = mid // 2
    doors = {(q, mid), (mid + 1 + q, mid), (mid, q), (mid, mid + 1 + q)}
    return GridSpec(size, size, frozenset(walls - doors), frozenset(doors), slip)


def build_four_room(size: int = 11, gamma: float = 0.99) -> TabularMdp:
    return build_grid(four_room_spec(size), gamma).mdp


def sample_goal(mdp: TabularMdp, rng_seed: int) -> int:
    """Uniform goal over states; walls are never states so never goals."""
    return int(np.random.default_rng(rng_seed).integers(mdp.n_states))


def sample_goals(mdp: TabularMdp, count: int, rng_seed: int) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    return rng.choice(mdp.n_states, size=count, replace=count > mdp.n_states)


def shortest_path_lengths(mdp: TabularMdp) -> np.ndarray:
    """All-pairs step counts ``dist[s, g]`` over the support graph."""
    return np.stack([distances_to(mdp, g) for g in range(mdp.n_states)], axis=1)


def distances_to(mdp: TabularMdp, goal: int) -> np.ndarray:
    """Bellman-Ford relaxation of step counts from every state to ``goal``."""
    n = mdp.n_states
    adj = mdp.transition.max(axis=1) > 0
    dist = np.full(n, np.inf)
    dist[goal] = 0.0
    for _ in range(n):
        cand = np.where(adj, dist[None, :] + 1.0, np.inf).min(axis=1)
        new = np.minimum(dist, cand)
        if np.array_equal(new, dist):
            break
        dist = new
    return dist


def shortest_path_actions(mdp: TabularMdp, goal: int) -> np.ndarray:
    """``(S, A)`` mask of actions that move one step closer to ``goal``.

    At the goal itself only actions that stay on the goal qualify. Assumes
    deterministic dynamics.
    """
    dist = distances_to(mdp, goal)
    nxt = mdp.transition.argmax(axis=2)
    mask = dist[nxt] == (dist[:, None] - 1.0)
    mask[goal] = nxt[goal] == goal
    return mask


def render_layout(spec: GridSpec) -> str:
    return "".join(
        "".join("#" if (r, c) in spec.walls else "." for c in range(spec.width)) + "\n"
        for r in range(spec.height)
    )
