import csv
import hashlib
import json
import logging

import pytest

from steallab import cli

SMALL_TASK = {"family": "gaussian_blobs", "num_classes": 3, "input_dim": 2, "samples_per_class": 100,
              "test_samples_per_class": 50, "separation": 4.0}


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def victim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("victim")
    cfg = tmp_path_factory.mktemp("cfg") / "victim.json"
    cfg.write_text(json.dumps({"task": SMALL_TASK, "victim": {"capacity": "tiny"},
                               "victim_training": {"epochs": 5}}))
    assert cli.main(["train-victim", "--config", str(cfg), "--out", str(out)]) == 0
    return out


def _attack(victim_dir, out, *extra):
    return cli.main(["attack", "--victim", str(victim_dir / "victim.stlm"), "--budget", "3000",
                     "--batch-size", "20", "--eval-every", "5", "--out", str(out), *extra])


def test_train_victim_outputs(victim_dir):
    manifest = json.loads((victim_dir / "manifest.json").read_text())
    assert manifest["command"] == "train-victim"
    assert manifest["config"]["task"]["family"] == "gaussian_blobs"
    assert manifest["config"]["victim_training"]["lr"] == 0.05  # default materialized
    for key in ("victim", "train_data", "test_data"):
        assert (victim_dir / manifest["artifacts"][key].split("/")[-1]).exists()
    metrics = json.loads((victim_dir / "victim_metrics.json").read_text())
    assert metrics["test_accuracy"] >= 0.9


def test_train_victim_replay_same_checksum(victim_dir, tmp_path):
    assert cli.main(["replay", str(victim_dir / "manifest.json"), "--out", str(tmp_path)]) == 0
    assert _sha(tmp_path / "victim.stlm") == _sha(victim_dir / "victim.stlm")


def test_blobs4_preset_victim_accuracy(tmp_path):
    assert cli.main(["train-victim", "--task", "blobs-4", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "victim_metrics.json").read_text())["test_accuracy"] >= 0.97


def test_missing_task_family(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"task": {"num_classes": 3}}))
    assert cli.main(["train-victim", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE
    assert "task.family" in capsys.readouterr().err


def test_unknown_field_named(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"task": dict(SMALL_TASK, colour=3)}))
    assert cli.main(["train-victim", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE
    assert "task.colour" in capsys.readouterr().err


def test_attack_artifacts_and_replay(victim_dir, tmp_path):
    out = tmp_path / "a"
    assert _attack(victim_dir, out) == 0
    for name in ("manifest.json", "metrics.csv", "clone.stlm", "generator.stlm"):
        assert (out / name).exists()
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    # 3000 // (5 * 20) = 30 rounds, eval every 5
    assert [int(r["queries_used"]) for r in rows] == [500 * i for i in range(1, 7)]
    assert cli.main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    assert (out / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_precedence_flags_over_file_over_defaults(victim_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"attack": {"n_c": 4, "n_g": 2, "clone_lr": 0.02}}))
    out = tmp_path / "a"
    assert _attack(victim_dir, out, "--config", str(cfg), "--nc", "2") == 0
    atk = json.loads((out / "manifest.json").read_text())["config"]["attack"]
    assert atk["n_c"] == 2          # flag beats file
    assert atk["n_g"] == 2          # file beats default
    assert atk["clone_lr"] == 0.02
    assert atk["generator_lr"] == 1e-4  # built-in default
    assert atk["batch_size"] == 20


def test_baseline_emits_no_generator(victim_dir, tmp_path):
    assert _attack(victim_dir, tmp_path, "--baseline", "random-noise") == 0
    assert (tmp_path / "clone.stlm").exists()
    assert not (tmp_path / "generator.stlm").exists()
    assert json.loads((tmp_path / "manifest.json").read_text())["artifacts"]["generator"] is None


def test_budget_below_one_step_is_config_error(victim_dir, tmp_path, capsys):
    out = tmp_path / "a"
    code = cli.main(["attack", "--victim", str(victim_dir / "victim.stlm"), "--budget", "50",
                     "--batch-size", "20", "--out", str(out)])
    assert code == cli.EXIT_USAGE
    assert "budget" in capsys.readouterr().err
    assert not out.exists()


def test_nan_abort_exit_code(victim_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"attack": {"clone_lr": 1e200, "clone_loss": "l2"}}))
    with pytest.warns(RuntimeWarning):
        code = _attack(victim_dir, tmp_path / "a", "--config", str(cfg))
    assert code == cli.EXIT_DIVERGED
    assert (tmp_path / "a" / "manifest.json").exists()
    assert (tmp_path / "a" / "clone_diverged.stlm").exists()


def test_label_diversity_logs_exact_values(victim_dir, tmp_path, caplog):
    caplog.set_level(logging.DEBUG, logger="steallab.attack")
    assert _attack(victim_dir, tmp_path, "--diversity", "label") == 0
    values = [float(r.getMessage().split("=")[1]) for r in caplog.records if "diversity_loss=" in r.getMessage()]
    assert len(values) == 30
    # with 20 samples the exact value is sum over classes of (c/20) ln(c/20)
    import itertools
    import math
    exact = [sum(c / 20 * math.log(c / 20) for c in cs if c)
             for cs in itertools.product(range(21), repeat=3) if sum(cs) == 20]
    for v in values:
        assert min(abs(v - e) for e in exact) <= 1e-11


def test_sweep_grid_and_report(victim_dir, tmp_path, capsys):
    out = tmp_path / "sw"
    code = cli.main(["sweep", "--victim", str(victim_dir / "victim.stlm"), "--budget", "2000",
                     "--batch-size", "20", "--eval-every", "100", "--grid", "n_c=1,2,5", "--grid", "seed=0,1",
                     "--jobs", "2", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader((out / "combined.csv").open()))
    assert len(rows) == 6
    assert len({r["config_fingerprint"] for r in rows}) == 3
    capsys.readouterr()
    summary_path = tmp_path / "summary.csv"
    assert cli.main(["report", str(out / "combined.csv"), "--out", str(summary_path)]) == 0
    summary = list(csv.DictReader(summary_path.open()))
    assert len(summary) == 3 and all(r["runs"] == "2" for r in summary)


def test_ratio_sweep_has_ten_rows(victim_dir, tmp_path):
    out = tmp_path / "ratio"
    code = cli.main(["sweep", "--victim", str(victim_dir / "victim.stlm"), "--budget", "2000",
                     "--batch-size", "10", "--eval-every", "1000", "--grid", "n_c=" + ",".join(map(str, range(1, 11))),
                     "--out", str(out)])
    assert code == 0
    assert len(list(csv.DictReader((out / "combined.csv").open()))) == 10


def test_sweep_errors(victim_dir, tmp_path, capsys):
    base = ["sweep", "--victim", str(victim_dir / "victim.stlm"), "--budget", "2000", "--out", str(tmp_path / "s")]
    assert cli.main(base) == cli.EXIT_USAGE
    assert "empty" in capsys.readouterr().err
    assert cli.main(base + ["--grid", "n_c=2,2"]) == cli.EXIT_USAGE
    assert "share output path" in capsys.readouterr().err
    assert not (tmp_path / "s").exists()


def test_report_median_and_schema(tmp_path, capsys):
    from steallab.metrics import MetricRow, emit_report
    rows = [MetricRow(f"db-dfms-s{s}", 1000, 0.5 + 0.1 * s, 0.4 + 0.1 * s, 1.0, 0.0, "fp") for s in range(3)]
    emit_report(rows, tmp_path / "a.csv")
    assert cli.main(["report", str(tmp_path / "a.csv")]) == 0
    text = capsys.readouterr().out
    merged, summary = text.strip().split("\n\n")
    assert merged.splitlines()[1:] == (tmp_path / "a.csv").read_text().splitlines()[1:]
    summary_rows = list(csv.DictReader(summary.splitlines()))
    assert len(summary_rows) == 1
    assert float(summary_rows[0]["agreement"]) == pytest.approx(0.5)
    assert summary_rows[0]["best_run_id"] == "db-dfms-s2"
    bad = tmp_path / "b.csv"
    bad.write_text("run_id,queries,accuracy\n")
    assert cli.main(["report", str(tmp_path / "a.csv"), str(bad)]) == cli.EXIT_USAGE
    assert "queries_used" in capsys.readouterr().err


def test_crashed_run_leaves_manifest(victim_dir, tmp_path):
    out = tmp_path / "a"
    (victim_dir / "test.stld").rename(victim_dir / "test.moved")
    try:
        with pytest.raises(FileNotFoundError):
            _attack(victim_dir, out)
    finally:
        (victim_dir / "test.moved").rename(victim_dir / "test.stld")
    assert (out / "manifest.json").exists()


def test_log_level_env(monkeypatch):
    monkeypatch.setenv("STEALLAB_LOG", "ERROR")
    root = logging.getLogger()
    old = root.handlers[:]
    root.handlers = []
    try:
        cli._setup_logging()
        assert root.level == logging.ERROR
    finally:
        root.handlers = old
