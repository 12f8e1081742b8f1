import numpy as np
import pytest

from maxrl.tasks.maze import (
    VOCAB_SIZE,
    Maze,
    MazeError,
    Tok,
    check_path,
    detokenize_maze,
    generate_maze,
    generate_mazes,
    is_perfect,
    open_edge_count,
    prompt_length,
    read_mazes,
    shortest_path,
    text_to_tokens,
    token_id,
    token_text,
    tokenize_maze,
    tokens_to_text,
    verify_path,
    vocabulary,
    write_mazes,
    write_vocabulary,
)

D, U, L, R, DONE, EOS = (int(t) for t in (Tok.DOWN, Tok.UP, Tok.LEFT, Tok.RIGHT, Tok.DONE, Tok.EOS))


def test_vocabulary_is_fixed_and_round_trips():
    vocab = vocabulary()
    assert len(vocab) == VOCAB_SIZE == 32
    assert [i for i, _ in vocab] == list(range(32))
    for i, text in vocab:
        assert token_id(text) == i and token_text(i) == text


def test_write_vocabulary(tmp_path):
    path = write_vocabulary(tmp_path / "v.txt")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# maze token vocabulary v1")
    assert len(lines) == 33


@pytest.mark.parametrize("side", [5, 7, 9, 13, 17])
def test_generated_mazes_are_perfect(side):
    for seed in range(60):
        m = generate_maze(side, seed)
        assert is_perfect(m)
        assert m.start == (1, 1) and m.goal != m.start
        assert (m.cells[0] == 0).all() and (m.cells[-1] == 0).all()
        assert (m.cells[:, 0] == 0).all() and (m.cells[:, -1] == 0).all()
        assert verify_path(m, shortest_path(m)) == 1


def test_spanning_tree_edge_count_side7():
    for seed in range(1000):
        m = generate_maze(7, seed)
        assert open_edge_count(m) == len(m.open_cells()) - 1


def test_generation_is_deterministic():
    assert generate_maze(9, 42) == generate_maze(9, 42)
    assert generate_maze(9, 42) != generate_maze(9, 43)


def test_invalid_side():
    for side in (3, 4, 8):
        with pytest.raises(MazeError):
            generate_maze(side, 0)


def test_tokenization_shape_and_round_trip():
    m = generate_maze(5, 1)
    toks = tokenize_maze(m)
    assert len(toks) == 1 + 1 + 25 + 5 + 1 + 1 == prompt_length(5)
    assert detokenize_maze(toks) == m
    assert text_to_tokens(tokens_to_text(toks)) == toks


def test_example_maze_tokenizes_exactly(example_maze_lines):
    prompt, _ = example_maze_lines
    maze = detokenize_maze(text_to_tokens(prompt))
    assert tokens_to_text(tokenize_maze(maze)) == prompt
    assert is_perfect(maze)


def test_example_maze_paths(example_maze_lines):
    prompt, published = example_maze_lines
    maze = detokenize_maze(text_to_tokens(prompt))
    assert verify_path(maze, [D, D, R, R, R, R, D, D, DONE, EOS]) == 1
    assert verify_path(maze, [D, DONE]) == 0
    assert verify_path(maze, []) == 0
    # the published action string walks into the wall right of START
    assert check_path(maze, text_to_tokens(published)).reason == "hit wall"


def test_verify_path_rules():
    m = generate_maze(7, 3)
    path = shortest_path(m)
    assert verify_path(m, path) == 1
    assert verify_path(m, path[:-1]) == 0
    assert verify_path(m, path + [D]) == 0
    moves = path[:-1]
    back = {U: D, D: U, L: R, R: L}[moves[0]]
    assert verify_path(m, [moves[0], back] + path) == 1
    bad = check_path(m, [int(Tok.WALL)])
    assert bad.malformed and bad.reward == 0


def test_dataset_io(tmp_path):
    mazes = generate_mazes(9, 5, seed=7)
    back = read_mazes(write_mazes(tmp_path / "m.jsonl", mazes))
    assert back == mazes and [m.seed for m in back] == [m.seed for m in mazes]


def test_maze_validation():
    with pytest.raises(MazeError):
        Maze(np.zeros((5, 5), dtype=np.int8))
