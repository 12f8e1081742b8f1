"""pass@k estimation and the metrics sink."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

CSV_VERSION = 1


def pass_at_k_estimate(n: int, c: int, k: int) -> float:
    """Unbiased pass@k from ``c`` correct out of ``n`` samples.

    Uses the product form ``1 - prod_{i<k} (n-c-i)/(n-i)`` of
    ``1 - C(n-c, k) / C(n, k)``.
    """
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    prod = 1.0
    for i in range(k):
        prod *= (n - c - i) / (n - i)
    return 1.0 - prod


def mean_pass_at_k(counts: Sequence[int], n: int, k: int) -> float:
    return float(np.mean([pass_at_k_estimate(n, int(c), k) for c in counts]))


def _clean(value: Any) -> Any:
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


class MetricsWriter:
    """Append-only JSON-lines sink; one record per training step.

    Records never contain wall-clock values so repeated runs are
    byte-identical; timings go to a sidecar file.
    """

    def __init__(self, path: str | os.PathLike, timing_path: str | os.PathLike | None = None):
        self.path = Path(path)
        self.timing_path = Path(timing_path) if timing_path else None

    def truncate_after(self, step: int) -> None:
        """Drop records with ``step > step`` (used when resuming)."""
        for p in (self.path, self.timing_path):
            if p is None or not p.exists():
                continue
            keep = [line for line in p.read_text().splitlines() if line and json.loads(line)["step"] <= step]
            p.write_text("".join(line + "\n" for line in keep))

    def write(self, record: dict[str, Any], wall_clock: float | None = None) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(_clean(record), sort_keys=True) + "\n")
            fh.flush()
        if self.timing_path is not None and wall_clock is not None:
            with open(self.timing_path, "a") as fh:
                fh.write(json.dumps({"step": record["step"], "wall_clock": round(wall_clock, 6)}) + "\n")


def read_metrics(path: str | os.PathLike) -> list[dict[str, Any]]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def flatten(record: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out = {}
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def write_csv(path: str | os.PathLike, rows: Iterable[dict[str, Any]], columns: Sequence[str] | None = None) -> Path:
    rows = list(rows)
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return path


def metrics_csv(jsonl: str | os.PathLike, out: str | os.PathLike) -> Path:
    return write_csv(out, (flatten(r) for r in read_metrics(jsonl)))
