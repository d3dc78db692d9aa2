"""End-to-end checks of the command-line front end, run in-process."""

from __future__ import annotations

import json

import pytest

from contestsim import read_corpus, read_event_log, read_fitted, verify_manifest
from contestsim.cli import main

CONFIG = """\
config_version=1
n_workers=4
n_posts=40
window_size=10
task_unit_time_s=5.0
task_unit_size=5
arrival_rate=2.0
prize_value=0.5
base_points=10
quality_constraint=0
reduction_rate=2.0
spreads=1,2
replications=2
master_seed=7
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "sweep.cfg"
    path.write_text(CONFIG, encoding="utf-8")
    return path


def test_gen_corpus_writes_the_requested_posts(tmp_path, capsys):
    out = tmp_path / "corpus.jsonl"
    assert main(["gen-corpus", "--n-posts", "30", "--out", str(out)]) == 0
    assert len(read_corpus(out)) == 30
    assert "wrote 30 posts" in capsys.readouterr().out


def test_gen_corpus_rejects_bad_arguments(tmp_path, capsys):
    out = tmp_path / "corpus.jsonl"
    code = main(["gen-corpus", "--n-posts", "-1", "--out", str(out)])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")
    assert not out.exists()


def test_simulate_writes_a_readable_log(tmp_path, config_file, capsys):
    out = tmp_path / "contest.jsonl"
    code = main(["simulate", "--config", str(config_file),
                 "--spread", "2", "--out", str(out)])
    assert code == 0
    log = read_event_log(out)
    assert log.config.reward_spread == 2
    assert log.events
    assert "annotations=" in capsys.readouterr().out


def test_simulate_seed_override_changes_the_run(tmp_path, config_file):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["simulate", "--config", str(config_file),
                 "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(config_file),
                 "--seed", "99", "--out", str(b)]) == 0
    assert a.read_bytes() != b.read_bytes()


def test_simulate_accepts_an_explicit_corpus(tmp_path, config_file):
    corpus = tmp_path / "corpus.jsonl"
    assert main(["gen-corpus", "--n-posts", "40", "--seed", "7",
                 "--out", str(corpus)]) == 0
    out = tmp_path / "contest.jsonl"
    assert main(["simulate", "--config", str(config_file),
                 "--corpus", str(corpus), "--out", str(out)]) == 0
    assert read_event_log(out).counters.ingested == 40


def test_sweep_emits_a_verified_tree(tmp_path, config_file, capsys):
    out_dir = tmp_path / "out"
    code = main(["sweep", "--config", str(config_file),
                 "--out-dir", str(out_dir)])
    assert code == 0
    assert verify_manifest(out_dir)
    captured = capsys.readouterr()
    assert "ran 4 contests" in captured.out
    assert "trend:" in captured.out


def test_sweep_can_add_trajectories(tmp_path, config_file):
    out_dir = tmp_path / "out"
    code = main(["sweep", "--config", str(config_file),
                 "--out-dir", str(out_dir), "--trajectories"])
    assert code == 0
    assert (out_dir / "trajectories.csv").exists()
    manifest = json.loads((out_dir / "manifest.json").read_text("utf-8"))
    assert "trajectories.csv" in manifest["files"]
    assert verify_manifest(out_dir)


def test_fit_covers_all_workers_or_just_one(tmp_path, config_file):
    log_path = tmp_path / "contest.jsonl"
    assert main(["simulate", "--config", str(config_file),
                 "--out", str(log_path)]) == 0
    all_out = tmp_path / "fits.jsonl"
    assert main(["fit", "--log", str(log_path), "--out", str(all_out)]) == 0
    fits = read_fitted(all_out)
    assert [f.worker_id for f in fits] == [0, 1, 2, 3]
    assert all(f.model_kind == "two_state" for f in fits)

    one_out = tmp_path / "one.jsonl"
    assert main(["fit", "--log", str(log_path), "--worker", "1",
                 "--model", "log_linear", "--out", str(one_out)]) == 0
    (fit,) = read_fitted(one_out)
    assert fit.worker_id == 1
    assert fit.model_kind == "log_linear"
    assert fit.theta_hat is not None


def test_recover_reports_and_saves_the_rows(tmp_path, capsys):
    out = tmp_path / "recovery.json"
    code = main(["recover", "--target", "50", "--seeds", "0",
                 "--lambda-in", "1.66", "--lambda-out", "1.12",
                 "--out", str(out)])
    assert code == 0
    assert "recovery over 2 fits" in capsys.readouterr().out
    record = json.loads(out.read_text("utf-8"))
    assert record["n_events_target"] == 50
    assert len(record["rows"]) == 2
    assert record["unidentifiable"] == 0


def test_recover_requires_both_rate_flags(capsys):
    assert main(["recover", "--lambda-in", "1.66"]) == 2
    assert "go together" in capsys.readouterr().err


def test_recover_rejects_a_malformed_seed_list(capsys):
    code = main(["recover", "--seeds", "0,x", "--target", "10",
                 "--lambda-in", "1.0", "--lambda-out", "1.0"])
    assert code == 2
    assert "bad seed list" in capsys.readouterr().err


def test_validate_accepts_an_untouched_log(tmp_path, config_file, capsys):
    corpus = tmp_path / "corpus.jsonl"
    log_path = tmp_path / "contest.jsonl"
    assert main(["gen-corpus", "--n-posts", "40", "--seed", "7",
                 "--out", str(corpus)]) == 0
    assert main(["simulate", "--config", str(config_file),
                 "--corpus", str(corpus), "--out", str(log_path)]) == 0
    assert main(["validate", "--log", str(log_path),
                 "--corpus", str(corpus)]) == 0
    assert "all invariants hold" in capsys.readouterr().out


def test_validate_flags_a_doctored_log(tmp_path, config_file, capsys):
    corpus = tmp_path / "corpus.jsonl"
    log_path = tmp_path / "contest.jsonl"
    main(["gen-corpus", "--n-posts", "40", "--seed", "7",
          "--out", str(corpus)])
    main(["simulate", "--config", str(config_file),
          "--corpus", str(corpus), "--out", str(log_path)])
    lines = log_path.read_text("utf-8").splitlines()
    for i, line in enumerate(lines):
        record = json.loads(line)
        if "holding_time_ms" in record:
            record["holding_time_ms"] += 1
            record["event_time_ms"] += 1
            lines[i] = json.dumps(record, sort_keys=True,
                                  separators=(",", ":"))
            break
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    code = main(["validate", "--log", str(log_path), "--corpus", str(corpus)])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_files_fail_cleanly(tmp_path, capsys):
    code = main(["fit", "--log", str(tmp_path / "nope.jsonl"),
                 "--out", str(tmp_path / "fits.jsonl")])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


def test_write_failures_fail_cleanly(tmp_path, config_file, capsys):
    out = tmp_path / "missing" / "contest.jsonl"
    code = main(["simulate", "--config", str(config_file),
                 "--out", str(out)])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_arguments_exit_via_argparse(config_file):
    with pytest.raises(SystemExit):
        main(["sweep", "--config", str(config_file), "--bogus"])
    with pytest.raises(SystemExit):
        main(["gen-corpus"])
    with pytest.raises(SystemExit):
        main([])
