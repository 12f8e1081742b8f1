"""``maxrl`` command-line entry point.

Exit codes: 0 success, 1 oracle violation, 2 configuration / input error,
3 numeric failure during training.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from maxrl import __version__
from maxrl.config import ConfigError, dump_config, load_config
from maxrl.estimators import CVMode
from maxrl.metrics import write_csv
from maxrl.objectives import default_p_grid, weight_table
from maxrl.oracle import DEFAULT_P_GRID, BernoulliPolicy, conditional_form_check, run_grid, softmax_with_pass_rate
from maxrl.report import REPORTS, ReportError, write_report
from maxrl.tasks.maze import generate_mazes, write_mazes, write_vocabulary
from maxrl.trainer.common import NumericFailure
from maxrl.trainer.maze import SFTFloorError
from maxrl.trainer.runner import RunError, evaluate_checkpoint, run_experiment

EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_value(raw: str):
    import yaml

    return yaml.safe_load(raw)


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.BadParameter(f"expected KEY=VALUE, got {pair!r}", param_hint="--set")
        key, raw = pair.split("=", 1)
        out[key.strip()] = _parse_value(raw)
    return out


@click.group()
@click.version_option(__version__, prog_name="maxrl")
def main():
    """Truncated maximum-likelihood policy-gradient lab."""


@main.command()
@click.option("--p", "p_values", type=float, multiple=True, help="Pass rates (repeatable). Default: 8-point grid.")
@click.option("--n-max", type=click.IntRange(1, 20), default=12, show_default=True, help="Largest rollout count N.")
@click.option("--cv-mode", "cv_modes", type=click.Choice([m.value for m in CVMode]), multiple=True,
              help="Control-variate modes to check (repeatable). Default: none, keep_vn_on_failure.")
@click.option("--tolerance", type=float, default=1e-10, show_default=True)
@click.option("--no-categorical", is_flag=True, help="Skip the softmax-policy cells.")
@click.option("--inject-fault", is_flag=True, help="Negative control: normalise by N instead of K.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="CSV report path.")
def oracle(p_values, n_max, cv_modes, tolerance, no_categorical, inject_fault, out):
    """Exhaustive-enumeration check of the MaxRL estimator's expectation.

    Every (p, N, cv_mode) cell compares the enumerated E[g_N] with the
    truncated-objective gradient; conditional-score cells check
    E[score | success] = grad log p. Exits 1 if any cell fails.
    """
    p_grid = p_values or DEFAULT_P_GRID
    cells = run_grid(p_grid, range(1, n_max + 1), cv_modes or (CVMode.NONE, CVMode.KEEP_VN_ON_FAILURE),
                     tolerance, "N" if inject_fault else "K", categorical=not no_categorical)
    rows = [dict(check="unbiasedness", family=c.family, p=c.p, n=c.n, cv_mode=c.cv_mode,
                 max_abs_error=c.max_abs_error, tolerance=c.tolerance, passed=c.passed) for c in cells]
    for p in p_grid:
        for family, pol in (("bernoulli", BernoulliPolicy.from_pass_rate(p)),
                            ("softmax", softmax_with_pass_rate(p, m=6, correct=(0, 2)))):
            err = conditional_form_check(pol)
            rows.append(dict(check="conditional_score", family=family, p=p, n="", cv_mode="",
                             max_abs_error=err, tolerance=tolerance, passed=err < tolerance))
    failed = [r for r in rows if not r["passed"]]
    if out:
        write_csv(out, rows)
        click.echo(f"wrote {out}")
    worst = max(r["max_abs_error"] for r in rows)
    click.echo(f"{len(rows) - len(failed)}/{len(rows)} cells pass; worst abs error {worst:.3e}")
    if failed:
        for r in failed[:10]:
            click.echo(f"FAIL {r['check']} {r['family']} p={r['p']} N={r['n']} {r['cv_mode']}: "
                       f"{r['max_abs_error']:.3e}", err=True)
        sys.exit(EXIT_VIOLATION)


@main.command()
@click.option("--points", type=click.IntRange(2), default=1000, show_default=True, help="Grid size over p.")
@click.option("--p-min", type=float, default=0.001, show_default=True)
@click.option("--p-max", type=float, default=0.999, show_default=True)
@click.option("--T", "orders", type=click.IntRange(1), multiple=True, help="MaxRL truncation orders. Default 1,2,4,16,256.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
def weights(points, p_min, p_max, orders, out):
    """Population weight functions w(p) for every objective over a p grid."""
    if not 0.0 <= p_min < p_max <= 1.0:
        _fail("need 0 <= p-min < p-max <= 1", EXIT_CONFIG)
    rows = weight_table(default_p_grid(points, p_min, p_max), orders or (1, 2, 4, 16, 256))
    write_csv(out, rows)
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command("gen-mazes")
@click.option("--side", type=int, default=9, show_default=True)
@click.option("--count", type=click.IntRange(1), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True, help="JSONL output.")
@click.option("--vocab", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Vocabulary table path (default: <out>.vocab.txt).")
def gen_mazes(side, count, seed, out, vocab):
    """Generate a maze dataset (one JSON record per line) and the token table."""
    if side < 5 or side % 2 == 0:
        _fail("side must be odd and >= 5", EXIT_CONFIG)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mazes(out, generate_mazes(side, count, seed))
    vocab = vocab or out.with_suffix(".vocab.txt")
    write_vocabulary(vocab)
    click.echo(f"wrote {count} mazes to {out} and vocabulary to {vocab}")


def _resolve_config(config_path, sets):
    try:
        return load_config(config_path, _overrides(sets))
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
              help="Override a config key (dotted path); wins over the file.")
@click.option("--task", type=click.Choice(["maze", "classifier"]), default=None)
@click.option("--objective", default=None, help="reinforce | rloo | grpo | maxrl | ml")
@click.option("--seed", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--out-root", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output root (default $MAXRL_OUTPUT_ROOT or ./runs).")
@click.option("--run-id", default=None, help="Run directory name (default derived from the config hash).")
@click.option("--resume", is_flag=True, help="Continue an interrupted run from its latest checkpoint.")
@click.option("--print-config", is_flag=True, help="Print the resolved config and exit.")
def train(config_path, sets, task, objective, seed, steps, out_root, run_id, resume, print_config):
    """Run an experiment and write metrics, checkpoints and a manifest."""
    sets = list(sets)
    for key, value in (("task", task), ("objective", objective), ("seed", seed), ("steps", steps)):
        if value is not None:
            sets.append(f"{key}={value}")
    cfg = _resolve_config(config_path, sets)
    if print_config:
        import yaml

        click.echo(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
        return
    try:
        result = run_experiment(cfg, out_root, run_id, resume, log=click.echo)
    except (ConfigError, RunError, FileNotFoundError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    except SFTFloorError as exc:
        _fail(str(exc), EXIT_NUMERIC)
    except NumericFailure as exc:
        _fail(f"numeric failure: {exc}", EXIT_NUMERIC)
    click.echo(f"run {result.run_id} finished at step {result.final_step}: {result.run_dir}")


@main.command("eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Config describing the task (default: config.yaml of the checkpoint's run).")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--n", type=click.IntRange(1), default=None, help="Rollouts per heldout task.")
@click.option("--k", "ks", type=click.IntRange(1), multiple=True, help="pass@k values (repeatable).")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Write JSON here.")
def eval_cmd(checkpoint, config_path, sets, n, ks, out):
    """Heldout evaluation of a checkpoint."""
    if config_path is None:
        guess = Path(checkpoint).resolve().parent.parent / "config.yaml"
        if not guess.exists():
            _fail(f"no --config given and {guess} does not exist", EXIT_CONFIG)
        config_path = guess
    cfg = _resolve_config(config_path, sets)
    try:
        result = evaluate_checkpoint(checkpoint, cfg, n=n, ks=list(ks) or None)
    except (ValueError, KeyError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    text = json.dumps(result, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    click.echo(text)


@main.command()
@click.argument("runs_dir", type=click.Path(path_type=Path))
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output directory (default: <runs_dir>/report).")
@click.option("--only", "only", type=click.Choice(REPORTS), multiple=True, help="Restrict to these tables.")
@click.option("--scatter", type=click.Choice(["grad-vs-p"]), default=None,
              help="Emit only the gradient-norm vs pass-rate scatter.")
def report(runs_dir, out, only, scatter):
    """Aggregate stored metrics into figure-ready CSV files."""
    which = ("scatter",) if scatter else (only or REPORTS)
    try:
        written = write_report(runs_dir, out or runs_dir / "report", which)
    except ReportError as exc:
        _fail(str(exc), EXIT_CONFIG)
    if not written:
        _fail(f"no rows for {', '.join(which)} under {runs_dir}", EXIT_CONFIG)
    for name, path in written.items():
        click.echo(f"{name}: {path}")


@main.command("dump-config")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.argument("out", type=click.Path(dir_okay=False, path_type=Path))
def dump_config_cmd(config_path, sets, out):
    """Write a fully resolved config (all defaults spelled out)."""
    dump_config(_resolve_config(config_path, sets), out)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
