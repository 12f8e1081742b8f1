"""Procedural perfect mazes, their token serialisation and a path verifier."""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

VOCAB_VERSION = 1
VOCAB_SIZE = 32


class Tok(enum.IntEnum):
    PAD = 0
    BOS = 1
    EOS = 2
    GRID_START = 3
    GRID_END = 4
    NEWLINE = 5
    WALL = 6
    PATH = 7
    START = 8
    GOAL = 9
    PATH_START = 10
    UP = 11
    DOWN = 12
    LEFT = 13
    RIGHT = 14
    DONE = 15


_TEXT = {Tok.BOS: "<bos>", Tok.EOS: "<eos>", Tok.PAD: "<pad>"}


def token_text(tid: int) -> str:
    if tid in Tok._value2member_map_:
        t = Tok(tid)
        return _TEXT.get(t, t.name)
    if 0 <= tid < VOCAB_SIZE:
        return f"RESERVED_{tid}"
    raise ValueError(f"token id {tid} outside vocabulary")


def token_id(text: str) -> int:
    text = text.strip().replace("\\_", "_")
    for t, s in _TEXT.items():
        if text == s:
            return int(t)
    if text.startswith("RESERVED_"):
        return int(text.split("_", 1)[1])
    return int(Tok[text])


def vocabulary() -> list[tuple[int, str]]:
    return [(i, token_text(i)) for i in range(VOCAB_SIZE)]


def write_vocabulary(path: str | Path) -> Path:
    path = Path(path)
    lines = [f"# maze token vocabulary v{VOCAB_VERSION} size={VOCAB_SIZE}"]
    lines += [f"{i}\t{s}" for i, s in vocabulary()]
    path.write_text("\n".join(lines) + "\n")
    return path


ACTIONS = (Tok.UP, Tok.DOWN, Tok.LEFT, Tok.RIGHT, Tok.DONE)
ACTION_IDS = np.array([int(a) for a in ACTIONS], dtype=np.int64)
_MOVES = {Tok.UP: (-1, 0), Tok.DOWN: (1, 0), Tok.LEFT: (0, -1), Tok.RIGHT: (0, 1)}

WALL, PATH, START, GOAL = 0, 1, 2, 3
_CELL_TOKEN = {WALL: Tok.WALL, PATH: Tok.PATH, START: Tok.START, GOAL: Tok.GOAL}
_TOKEN_CELL = {int(v): k for k, v in _CELL_TOKEN.items()}
_CELL_CHAR = {WALL: "#", PATH: ".", START: "S", GOAL: "G"}
_CHAR_CELL = {v: k for k, v in _CELL_CHAR.items()}


class MazeError(ValueError):
    pass


@dataclass(frozen=True)
class Maze:
    cells: np.ndarray
    seed: int | None = None
    start: tuple[int, int] = field(init=False)
    goal: tuple[int, int] = field(init=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise MazeError("maze grid must be square")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        starts = np.argwhere(cells == START)
        goals = np.argwhere(cells == GOAL)
        if len(starts) != 1 or len(goals) != 1:
            raise MazeError("maze needs exactly one START and one GOAL")
        object.__setattr__(self, "start", tuple(int(v) for v in starts[0]))
        object.__setattr__(self, "goal", tuple(int(v) for v in goals[0]))

    @property
    def side(self) -> int:
        return self.cells.shape[0]

    def is_open(self, r: int, c: int) -> bool:
        return 0 <= r < self.side and 0 <= c < self.side and self.cells[r, c] != WALL

    def open_cells(self) -> list[tuple[int, int]]:
        return [tuple(int(v) for v in rc) for rc in np.argwhere(self.cells != WALL)]

    def cell_string(self) -> str:
        return "".join(_CELL_CHAR[int(v)] for v in self.cells.ravel())

    @classmethod
    def from_cell_string(cls, side: int, cells: str, seed: int | None = None) -> "Maze":
        if len(cells) != side * side:
            raise MazeError(f"expected {side * side} cells, got {len(cells)}")
        grid = np.array([_CHAR_CELL[ch] for ch in cells], dtype=np.int8).reshape(side, side)
        return cls(grid, seed)

    def __eq__(self, other) -> bool:
        return isinstance(other, Maze) and np.array_equal(self.cells, other.cells)

    def __hash__(self) -> int:
        return hash(self.cells.tobytes())

    def render(self) -> str:
        return "\n".join("".join(_CELL_CHAR[int(v)] for v in row) for row in self.cells)


def _neighbors(side: int, r: int, c: int, step: int):
    for dr, dc in ((-step, 0), (step, 0), (0, -step), (0, step)):
        rr, cc = r + dr, c + dc
        if 0 < rr < side - 1 and 0 < cc < side - 1:
            yield rr, cc


def generate_maze(side: int, seed: int) -> Maze:
    """Randomised Prim's algorithm on the odd-coordinate cell lattice.

    The frontier is kept in insertion order and the next cell is drawn
    uniformly from it; its connection into the tree is drawn uniformly from
    in-tree neighbours. START sits at (1, 1); GOAL is the open cell farthest
    from START along the tree (first in row-major order on ties).
    """
    if side < 5 or side % 2 == 0 or int(side) != side:
        raise MazeError(f"side must be an odd integer >= 5, got {side!r}")
    rng = np.random.default_rng(seed)
    grid = np.full((side, side), WALL, dtype=np.int8)
    in_tree = np.zeros((side, side), dtype=bool)
    grid[1, 1] = PATH
    in_tree[1, 1] = True
    frontier: list[tuple[int, int]] = []
    on_frontier: set[tuple[int, int]] = set()
    for nb in _neighbors(side, 1, 1, 2):
        frontier.append(nb)
        on_frontier.add(nb)
    while frontier:
        r, c = frontier.pop(int(rng.integers(len(frontier))))
        on_frontier.discard((r, c))
        links = [(rr, cc) for rr, cc in _neighbors(side, r, c, 2) if in_tree[rr, cc]]
        lr, lc = links[int(rng.integers(len(links)))]
        grid[r, c] = PATH
        grid[(r + lr) // 2, (c + lc) // 2] = PATH
        in_tree[r, c] = True
        for nb in _neighbors(side, r, c, 2):
            if not in_tree[nb] and nb not in on_frontier:
                frontier.append(nb)
                on_frontier.add(nb)
    dist = _distances(grid, (1, 1))
    far = max(dist.values())
    goal = min(rc for rc, d in dist.items() if d == far)
    grid[1, 1] = START
    grid[goal] = GOAL
    return Maze(grid, seed)


def _distances(grid: np.ndarray, source: tuple[int, int]) -> dict[tuple[int, int], int]:
    side = grid.shape[0]
    dist = {source: 0}
    queue = deque([source])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < side and 0 <= cc < side and grid[rr, cc] != WALL and (rr, cc) not in dist:
                dist[(rr, cc)] = dist[(r, c)] + 1
                queue.append((rr, cc))
    return dist


def open_edge_count(maze: Maze) -> int:
    open_ = maze.cells != WALL
    return int(np.sum(open_[1:, :] & open_[:-1, :]) + np.sum(open_[:, 1:] & open_[:, :-1]))


def is_perfect(maze: Maze) -> bool:
    """Open cells form a spanning tree: connected with ``edges = cells - 1``."""
    cells = maze.open_cells()
    if not cells:
        return False
    if np.any(maze.cells[0, :] != WALL) or np.any(maze.cells[-1, :] != WALL):
        return False
    if np.any(maze.cells[:, 0] != WALL) or np.any(maze.cells[:, -1] != WALL):
        return False
    reach = _distances(maze.cells, cells[0])
    return len(reach) == len(cells) and open_edge_count(maze) == len(cells) - 1


def shortest_path(maze: Maze) -> list[int]:
    """Action tokens (ending in DONE) of the shortest START to GOAL walk."""
    side = maze.side
    prev: dict[tuple[int, int], tuple[tuple[int, int], Tok] | None] = {maze.start: None}
    queue = deque([maze.start])
    while queue:
        cur = queue.popleft()
        if cur == maze.goal:
            break
        for tok, (dr, dc) in _MOVES.items():
            nxt = (cur[0] + dr, cur[1] + dc)
            if 0 <= nxt[0] < side and 0 <= nxt[1] < side and maze.cells[nxt] != WALL and nxt not in prev:
                prev[nxt] = (cur, tok)
                queue.append(nxt)
    if maze.goal not in prev:
        raise MazeError("GOAL unreachable from START")
    actions: list[int] = []
    node = maze.goal
    while prev[node] is not None:
        node, tok = prev[node]
        actions.append(int(tok))
    actions.reverse()
    actions.append(int(Tok.DONE))
    return actions


# -- tokens ------------------------------------------------------------------


def tokenize_maze(maze: Maze) -> list[int]:
    """``BOS GRID_START <row> NEWLINE ... GRID_END PATH_START``."""
    out = [int(Tok.BOS), int(Tok.GRID_START)]
    for row in maze.cells:
        out.extend(int(_CELL_TOKEN[int(v)]) for v in row)
        out.append(int(Tok.NEWLINE))
    out.extend([int(Tok.GRID_END), int(Tok.PATH_START)])
    return out


def prompt_length(side: int) -> int:
    return side * side + side + 4


def detokenize_maze(tokens: Sequence[int], seed: int | None = None) -> Maze:
    toks = list(tokens)
    if toks and toks[0] == Tok.BOS:
        toks = toks[1:]
    if len(toks) < 3 or toks[0] != Tok.GRID_START or toks[-2:] != [Tok.GRID_END, Tok.PATH_START]:
        raise MazeError("not a maze prompt")
    rows: list[list[int]] = [[]]
    for t in toks[1:-2]:
        if t == Tok.NEWLINE:
            rows.append([])
        elif t in _TOKEN_CELL:
            rows[-1].append(_TOKEN_CELL[t])
        else:
            raise MazeError(f"unexpected token {token_text(t)} inside grid")
    if rows[-1]:
        raise MazeError("last grid row is not terminated by NEWLINE")
    rows.pop()
    return Maze(np.array(rows, dtype=np.int8), seed)


def tokens_to_text(tokens: Iterable[int]) -> str:
    return " ".join(token_text(int(t)) for t in tokens)


def text_to_tokens(text: str) -> list[int]:
    return [token_id(w) for w in text.split()]


# -- verification --------------------------------------------------------------


@dataclass(frozen=True)
class PathCheck:
    reward: int
    malformed: bool
    reason: str
    final: tuple[int, int]


def check_path(maze: Maze, actions: Sequence[int]) -> PathCheck:
    """Simulate ``actions`` from START.

    Succeeds iff every move lands on an open cell, the walk is terminated by
    DONE (optionally followed by EOS) and DONE is emitted on GOAL. Revisits
    are allowed, so many accepted strings exist even though the simple path
    is unique.
    """
    pos = maze.start
    acts = [int(a) for a in actions]
    for i, a in enumerate(acts):
        if a == Tok.DONE:
            tail = acts[i + 1 :]
            if any(t != Tok.EOS for t in tail):
                return PathCheck(0, False, "tokens after DONE", pos)
            if pos == maze.goal:
                return PathCheck(1, False, "ok", pos)
            return PathCheck(0, False, "DONE off goal", pos)
        if a not in _MOVES:
            return PathCheck(0, True, f"unknown action token {a}", pos)
        dr, dc = _MOVES[Tok(a)]
        nxt = (pos[0] + dr, pos[1] + dc)
        if not maze.is_open(*nxt):
            return PathCheck(0, False, "hit wall", pos)
        pos = nxt
    return PathCheck(0, False, "no DONE", pos)


def verify_path(maze: Maze, actions: Sequence[int]) -> int:
    return check_path(maze, actions).reward


# -- datasets ------------------------------------------------------------------


def task_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, dtype=np.uint32)[0])


def generate_mazes(side: int, count: int, seed: int) -> list[Maze]:
    return [generate_maze(side, task_seed(seed, i)) for i in range(count)]


def write_mazes(path: str | Path, mazes: Iterable[Maze]) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for m in mazes:
            fh.write(json.dumps({"seed": m.seed, "side": m.side, "cells": m.cell_string()}) + "\n")
    return path


def read_mazes(path: str | Path) -> list[Maze]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = json.loads(line)
                out.append(Maze.from_cell_string(rec["side"], rec["cells"], rec.get("seed")))
    return out
