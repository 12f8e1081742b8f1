"""Figure-ready CSV projections of stored run outputs.

Nothing here recomputes a training quantity: every number is read from a
run's ``metrics.jsonl`` / ``grad_scatter.jsonl`` and reshaped. Column names
are part of the public interface (``CSV_VERSION`` in :mod:`maxrl.metrics`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from maxrl.metrics import CSV_VERSION, read_metrics, write_csv

REPORTS = ("passk", "neglog", "frac-solved", "scatter", "scarce", "summary")


class ReportError(ValueError):
    pass


@dataclass
class Run:
    run_id: str
    path: Path
    config: dict
    records: list[dict]

    @property
    def objective(self) -> str:
        return self.config["objective"]

    @property
    def seed(self) -> int:
        return self.config["seed"]

    def evals(self) -> list[dict]:
        return [r for r in self.records if r.get("eval")]


def load_runs(root: str | Path) -> list[Run]:
    """Every run directory below ``root`` (or ``root`` itself) with metrics."""
    root = Path(root)
    if not root.is_dir():
        raise ReportError(f"no such directory: {root}")
    candidates = [root] if (root / "manifest.json").exists() else sorted(p for p in root.iterdir() if p.is_dir())
    runs = []
    for d in candidates:
        manifest, metrics = d / "manifest.json", d / "metrics.jsonl"
        if not (manifest.exists() and metrics.exists()):
            continue
        info = json.loads(manifest.read_text())
        records = read_metrics(metrics)
        if records:
            runs.append(Run(info["run_id"], d, info["config"], records))
    if not runs:
        raise ReportError(f"no runs with metrics under {root}")
    return runs


def _neglog(v):
    if v is None:
        return None
    return math.inf if v <= 0 else -math.log(v)


def passk_rows(runs: list[Run]) -> list[dict]:
    """pass@k versus k at the final evaluation of every run."""
    rows = []
    for run in runs:
        evals = run.evals()
        if not evals:
            continue
        last = evals[-1]
        for k, v in last["eval"].get("pass_at_k", {}).items():
            rows.append({"run_id": run.run_id, "objective": run.objective, "seed": run.seed,
                         "step": last["step"], "k": int(k), "pass_at_k": v})
    return rows


def neglog_rows(runs: list[Run]) -> list[dict]:
    """-log pass@k against the number of training rollouts consumed."""
    rows = []
    for run in runs:
        for rec in run.evals():
            for k, v in rec["eval"].get("pass_at_k", {}).items():
                rows.append({"run_id": run.run_id, "objective": run.objective, "seed": run.seed,
                             "step": rec["step"], "rollouts": rec.get("rollouts", 0), "k": int(k),
                             "pass_at_k": v, "neg_log_pass_at_k": _neglog(v)})
    return rows


def frac_solved_rows(runs: list[Run]) -> list[dict]:
    """Training fraction of tasks with at least one correct rollout, per step."""
    return [{"run_id": run.run_id, "objective": run.objective, "seed": run.seed, "step": r["step"],
             "frac_solved": r["frac_solved"], "train_reward": r.get("train_reward")}
            for run in runs for r in run.records if "frac_solved" in r]


def scatter_rows(runs: list[Run]) -> list[dict]:
    """(task pass rate, per-task gradient norm) pairs from classifier runs."""
    rows = []
    for run in runs:
        path = run.path / "grad_scatter.jsonl"
        if not path.exists():
            continue
        for rec in read_metrics(path):
            rows.append({"run_id": run.run_id, "objective": rec["objective"], "step": rec["step"],
                         "task": rec["task"], "pass_rate": rec["pass_rate"], "grad_norm": rec["grad_norm"]})
    return rows


def scarce_rows(runs: list[Run], k: str = "64") -> list[dict]:
    """Start / peak / final pass@k per run, the data-scarce comparison."""
    rows = []
    for run in runs:
        series = [(r["step"], r["eval"]["pass_at_k"][k]) for r in run.evals() if k in r["eval"].get("pass_at_k", {})]
        if not series:
            continue
        start = series[0][1]
        peak_step, peak = max(series, key=lambda s: (s[1], -s[0]))
        final_step, final = series[-1]
        rows.append({"run_id": run.run_id, "objective": run.objective, "seed": run.seed,
                     "regime": run.config.get("regime"), "k": int(k), "start": start, "peak": peak,
                     "peak_step": peak_step, "final": final, "final_step": final_step,
                     "decline_from_peak": peak - final, "final_minus_start": final - start})
    return rows


def summary_rows(runs: list[Run]) -> list[dict]:
    rows = []
    for run in runs:
        evals = run.evals()
        last = evals[-1]["eval"] if evals else {}
        row = {"run_id": run.run_id, "task": run.config["task"], "objective": run.objective, "seed": run.seed,
               "regime": run.config.get("regime"), "final_step": run.records[-1]["step"]}
        for k, v in last.get("pass_at_k", {}).items():
            row[f"pass_at_{k}"] = v
        for key in ("pass_rate", "frac_solved", "argmax_accuracy", "mean_length", "entropy"):
            if key in last:
                row[key] = last[key]
        rows.append(row)
    return rows


_BUILDERS = {
    "passk": ("passk_curve.csv", passk_rows),
    "neglog": ("neglog_passk.csv", neglog_rows),
    "frac-solved": ("frac_solved.csv", frac_solved_rows),
    "scatter": ("grad_scatter.csv", scatter_rows),
    "scarce": ("data_scarce.csv", scarce_rows),
    "summary": ("summary.csv", summary_rows),
}


def write_report(root: str | Path, out: str | Path, which=REPORTS) -> dict[str, Path]:
    runs = load_runs(root)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name in which:
        filename, build = _BUILDERS[name]
        rows = build(runs)
        if rows:
            written[name] = write_csv(out / filename, rows)
    (out / "report.json").write_text(json.dumps({
        "csv_version": CSV_VERSION,
        "runs": [r.run_id for r in runs],
        "files": {k: v.name for k, v in written.items()},
    }, indent=2, sort_keys=True) + "\n")
    return written
