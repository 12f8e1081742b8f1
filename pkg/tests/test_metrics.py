import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maxrl.metrics import MetricsWriter, flatten, metrics_csv, pass_at_k_estimate, read_metrics


def test_reference_values():
    assert pass_at_k_estimate(4, 2, 2) == pytest.approx(1 - 1 / 6, abs=1e-12)
    assert pass_at_k_estimate(10, 0, 3) == 0.0
    assert pass_at_k_estimate(5, 5, 3) == 1.0
    assert pass_at_k_estimate(5, 1, 1) == pytest.approx(0.2)


def test_rejects_invalid():
    with pytest.raises(ValueError):
        pass_at_k_estimate(4, 2, 5)
    with pytest.raises(ValueError):
        pass_at_k_estimate(4, 5, 1)
    with pytest.raises(ValueError):
        pass_at_k_estimate(4, 1, 0)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 60), data=st.data())
def test_matches_binomial_form(n, data):
    c = data.draw(st.integers(0, n))
    k = data.draw(st.integers(1, n))
    exact = 1 - math.comb(n - c, k) / math.comb(n, k)
    assert pass_at_k_estimate(n, c, k) == pytest.approx(exact, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 40), data=st.data())
def test_monotone_in_k(n, data):
    c = data.draw(st.integers(0, n))
    vals = [pass_at_k_estimate(n, c, k) for k in range(1, n + 1)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


def test_unbiased_against_binomial_draws():
    rng = np.random.default_rng(0)
    n, k, p = 16, 4, 0.15
    c = rng.binomial(n, p, size=20000)
    est = np.array([pass_at_k_estimate(n, int(ci), k) for ci in c])
    assert abs(est.mean() - (1 - (1 - p) ** k)) < 3 * est.std() / np.sqrt(len(est))


def test_writer_is_deterministic_and_truncates(tmp_path):
    w = MetricsWriter(tmp_path / "m.jsonl", tmp_path / "t.jsonl")
    for s in range(4):
        w.write({"step": s, "x": np.float64(s) / 2, "bad": float("nan"), "nested": {"b": 1, "a": 2}}, wall_clock=0.1 * s)
    recs = read_metrics(w.path)
    assert recs[1] == {"bad": None, "nested": {"a": 2, "b": 1}, "step": 1, "x": 0.5}
    assert list(json.loads(w.path.read_text().splitlines()[0])) == sorted(recs[0])
    w.truncate_after(1)
    assert [r["step"] for r in read_metrics(w.path)] == [0, 1]
    assert [r["step"] for r in read_metrics(w.timing_path)] == [0, 1]
    out = metrics_csv(w.path, tmp_path / "m.csv")
    header = out.read_text().splitlines()[0].split(",")
    assert "nested.a" in header


def test_flatten():
    assert flatten({"a": {"b": {"c": 1}}, "d": 2}) == {"a.b.c": 1, "d": 2}
