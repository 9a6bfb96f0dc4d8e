import numpy as np
import pytest
from scipy.stats import chisquare

from psm.envs import (FOUR_ROOM_11, LayoutError, build_four_room, build_grid, build_gridworld,
                      distances_to, four_room_spec, open_grid, parse_layout, render_layout,
                      sample_goal, sample_goals, shortest_path_actions)
from psm.mdp import validate_mdp

UP, RIGHT, DOWN, LEFT, STAY = range(5)


def test_right_move_on_small_grid():
    grid = build_grid(open_grid(2))
    s, t = grid.state_of(0, 0), grid.state_of(0, 1)
    assert grid.mdp.transition[s, RIGHT, t] == 1.0
    assert grid.mdp.transition[s, LEFT, s] == 1.0  # boundary bump


def test_stay_is_self_loop_everywhere():
    mdp = build_four_room()
    np.testing.assert_array_equal(mdp.transition[:, STAY].argmax(axis=1), np.arange(mdp.n_states))
    assert np.all(mdp.transition[:, STAY].max(axis=1) == 1.0)


def _hand_adjacency(text):
    rows = [r for r in text.splitlines() if r]
    cells = [(r, c) for r, row in enumerate(rows) for c, ch in enumerate(row) if ch == "."]
    nbrs = {}
    for r, c in cells:
        nbrs[(r, c)] = {(r + dr, c + dc) for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
                        if (r + dr, c + dc) in set(cells)}
    return cells, nbrs


def test_four_room_matches_hand_enumerated_graph():
    grid = build_grid(four_room_spec(11))
    cells, nbrs = _hand_adjacency(FOUR_ROOM_11)
    assert grid.n_states == len(cells) == 104
    for s, cell in enumerate(grid.cells):
        moved = {grid.cell_of(int(t)) for t in grid.mdp.transition[s].argmax(axis=1)} - {cell}
        assert moved == nbrs[cell]


def test_four_room_template():
    spec = four_room_spec(11)
    assert len(spec.doorways) == 4
    assert not spec.walls & spec.doorways
    spec.validate()  # all rooms mutually reachable
    assert validate_mdp(build_four_room()).ok


def test_opposite_rooms_route_through_a_doorway():
    grid = build_grid(four_room_spec(11))
    a, b = grid.state_of(1, 1), grid.state_of(9, 9)
    dist = distances_to(grid.mdp, b)
    mask = shortest_path_actions(grid.mdp, b)
    cur, visited = a, []
    while cur != b:
        act = int(np.argmax(mask[cur]))
        cur = int(grid.mdp.transition[cur, act].argmax())
        visited.append(grid.cell_of(cur))
    assert len(visited) == dist[a]
    assert set(visited) & grid.spec.doorways


def test_other_four_room_sizes():
    spec = four_room_spec(9)
    assert len(spec.doorways) == 4
    build_grid(spec)
    with pytest.raises(LayoutError):
        four_room_spec(8)


def test_layout_parser():
    spec = parse_layout("..#\n...\n")
    assert spec.width == 3 and spec.height == 2 and spec.walls == {(0, 2)}
    assert render_layout(spec) == "..#\n...\n"
    with pytest.raises(LayoutError):
        parse_layout("...\n..\n")
    with pytest.raises(LayoutError):
        parse_layout("..x\n")
    with pytest.raises(LayoutError):
        build_gridworld(parse_layout(".#.\n###\n...\n"))  # disconnected


def test_slip_spreads_mass():
    mdp = build_gridworld(open_grid(3, slip=0.2))
    assert validate_mdp(mdp).ok
    assert mdp.transition[4, RIGHT, 5] == pytest.approx(0.8 + 0.2 / 5)


def test_goal_sampling():
    mdp = build_four_room()
    assert sample_goal(mdp, 5) == sample_goal(mdp, 5)
    goals = np.array([sample_goal(mdp, k) for k in range(50)])
    assert goals.min() >= 0 and goals.max() < mdp.n_states
    mdp8 = build_gridworld(open_grid(8))
    draws = sample_goals(mdp8, 10**4, 0)
    assert chisquare(np.bincount(draws, minlength=64)).pvalue > 0.01
    assert len(set(sample_goals(mdp8, 10, 1).tolist())) == 10


def test_open_grid_flow_columns():
    from psm.flow import build_flow_operator
    mdp = build_gridworld(open_grid(4), 0.9)
    op = build_flow_operator(mdp, np.full(16, 1 / 16))
    np.testing.assert_allclose(op.matrix.sum(axis=0), 0.1, atol=1e-12)
