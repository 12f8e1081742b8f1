import csv
import json

from click.testing import CliRunner

from maxrl.cli import main

CLF = ["--task", "classifier", "--steps", "4", "--set", "eval_every=2", "--set", "classifier.num_classes=10",
       "--set", "classifier.num_tasks=64", "--set", "classifier.heldout_tasks=20", "--set", "classifier.dim=8",
       "--set", "classifier.hidden=8", "--set", "classifier.scatter_tasks=4", "--set", "tasks_per_batch=16"]


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_oracle_default_grid_passes(tmp_path):
    res = CliRunner().invoke(main, ["oracle", "--out", str(tmp_path / "o.csv")])
    assert res.exit_code == 0, res.output
    rows = _rows(tmp_path / "o.csv")
    assert rows and all(r["passed"] == "True" for r in rows)
    assert any(r["check"] == "conditional_score" for r in rows)


def test_oracle_fault_injection_fails(tmp_path):
    res = CliRunner().invoke(main, ["oracle", "--inject-fault", "--no-categorical", "--out", str(tmp_path / "o.csv")])
    assert res.exit_code == 1
    rows = [r for r in _rows(tmp_path / "o.csv") if r["check"] == "unbiasedness"]
    assert all(r["passed"] == "False" for r in rows if int(r["n"]) >= 2)
    assert all(r["passed"] == "True" for r in rows if int(r["n"]) == 1)


def test_weights_csv(tmp_path):
    out = tmp_path / "w.csv"
    res = CliRunner().invoke(main, ["weights", "--out", str(out), "--T", "1", "--T", "16"])
    assert res.exit_code == 0
    rows = _rows(out)
    assert len(rows) == 1000
    assert all(r["w_maxrl_T1"] == r["w_rl"] for r in rows)
    col = [float(r["w_maxrl_T16"]) for r in rows]
    assert all(a >= b for a, b in zip(col, col[1:]))


def test_gen_mazes(tmp_path):
    out = tmp_path / "m.jsonl"
    res = CliRunner().invoke(main, ["gen-mazes", "--side", "7", "--count", "3", "--out", str(out)])
    assert res.exit_code == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 3 and recs[0]["side"] == 7 and len(recs[0]["cells"]) == 49
    assert (tmp_path / "m.vocab.txt").exists()
    assert CliRunner().invoke(main, ["gen-mazes", "--side", "6", "--count", "1", "--out", str(out)]).exit_code == 2


def test_train_eval_report(tmp_path):
    r = CliRunner()
    res = r.invoke(main, ["train", *CLF, "--out-root", str(tmp_path), "--run-id", "c"])
    assert res.exit_code == 0, res.output
    run = tmp_path / "c"
    ckpt = run / "checkpoints" / "step-0000004.ckpt"
    res = r.invoke(main, ["eval", str(ckpt), "--k", "1", "--k", "4"])
    assert res.exit_code == 0, res.output
    assert set(json.loads(res.output)["pass_at_k"]) == {"1", "4"}
    res = r.invoke(main, ["report", str(tmp_path), "--out", str(tmp_path / "rep")])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "rep" / "neglog_passk.csv").exists()
    res = r.invoke(main, ["report", str(tmp_path), "--scatter", "grad-vs-p", "--out", str(tmp_path / "sc")])
    assert res.exit_code == 0
    rows = _rows(tmp_path / "sc" / "grad_scatter.csv")
    assert {"pass_rate", "grad_norm", "objective"} <= set(rows[0])
    # same run id again is refused, resume of a finished run is a no-op
    assert r.invoke(main, ["train", *CLF, "--out-root", str(tmp_path), "--run-id", "c"]).exit_code == 2
    assert r.invoke(main, ["train", *CLF, "--out-root", str(tmp_path), "--run-id", "c", "--resume"]).exit_code == 0


def test_config_errors_exit_2(tmp_path):
    r = CliRunner()
    assert r.invoke(main, ["train", "--set", "nonsense=1", "--out-root", str(tmp_path)]).exit_code == 2
    assert r.invoke(main, ["train", "--task", "maze", "--objective", "ml", "--out-root", str(tmp_path)]).exit_code == 2


def test_report_on_empty_dir_exits_2(tmp_path):
    (tmp_path / "empty").mkdir()
    assert CliRunner().invoke(main, ["report", str(tmp_path / "empty")]).exit_code == 2
    assert CliRunner().invoke(main, ["report", str(tmp_path / "missing")]).exit_code == 2


def test_print_config():
    res = CliRunner().invoke(main, ["train", "--task", "classifier", "--seed", "5", "--print-config"])
    assert res.exit_code == 0 and "seed: 5" in res.output
