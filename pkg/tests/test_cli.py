from __future__ import annotations

import json

import pytest

from tierroute.cli import main
from tierroute.jsonio import read_jsonl

from fixtures import (
    CLEANED_TASK,
    EXPECTED_LEVELS,
    ROUTE_SAVINGS,
    TRIALS,
    write_fixture_files,
)


@pytest.fixture()
def fixture_paths(tmp_path):
    return write_fixture_files(tmp_path / "fixture")


def _run(*argv) -> int:
    return main([str(part) for part in argv])


def test_ingest_writes_corpus_and_report(fixture_paths, tmp_path, capsys):
    out = tmp_path / "out"
    assert _run("ingest", fixture_paths["raw"], "--out-dir", out) == 0
    corpus = read_jsonl(out / "corpus.jsonl")
    assert len(corpus) == 12
    report = json.loads((out / "ingest_report.json").read_text())
    assert report == {"ingested": 12, "rejected": 0, "issues": []}
    assert "ingested 12" in capsys.readouterr().out


def test_ingest_reports_malformed_lines(fixture_paths, tmp_path, capsys):
    raw = tmp_path / "raw.jsonl"
    lines = fixture_paths["raw"].read_text().splitlines()
    lines.insert(1, "{broken")
    raw.write_text("\n".join(lines) + "\n", encoding="utf-8")
    out = tmp_path / "out"
    assert _run("ingest", raw, "--out-dir", out) == 0
    report = json.loads((out / "ingest_report.json").read_text())
    assert report["rejected"] == 1
    assert report["issues"][0]["line"] == 2
    assert "rejected line 2" in capsys.readouterr().err


def test_ingest_empty_input_fails(tmp_path, capsys):
    raw = tmp_path / "empty.jsonl"
    raw.write_text("", encoding="utf-8")
    assert _run("ingest", raw, "--out-dir", tmp_path / "out") == 1
    assert "error:" in capsys.readouterr().err


def _ingest(fixture_paths, tmp_path, raw_key="raw"):
    out = tmp_path / "ingested"
    assert _run("ingest", fixture_paths[raw_key], "--out-dir", out) == 0
    return out / "corpus.jsonl"


def test_collect_audit_log_has_sixty_lines_for_four_tasks(fixture_paths, tmp_path):
    corpus = _ingest(fixture_paths, tmp_path, "raw4")
    out = tmp_path / "collected"
    assert (
        _run(
            "collect",
            "--config",
            fixture_paths["config"],
            "--corpus",
            corpus,
            "--out-dir",
            out,
        )
        == 0
    )
    outcomes = read_jsonl(out / "outcomes.jsonl")
    assert len(outcomes) == 4 * 3 * TRIALS == 60
    for record in outcomes:
        assert set(record) == {
            "task_id",
            "tier_id",
            "trial_index",
            "verdict",
            "raw_output",
            "extracted_code",
            "completion_tokens",
        }
        assert set(record["verdict"]) == {"kind", "detail", "duration_ms"}
    profiles = read_jsonl(out / "profiles.jsonl")
    assert len(profiles) == 4
    assert all(set(p) == {"task_id", "counts", "M"} for p in profiles)


def _pipeline(fixture_paths, tmp_path, tag: str):
    corpus = _ingest(fixture_paths, tmp_path / tag)
    collected = tmp_path / tag / "collected"
    assert _run(
        "collect", "--config", fixture_paths["config"], "--corpus", corpus, "--out-dir", collected
    ) == 0
    labeled = tmp_path / tag / "labeled"
    assert _run(
        "label",
        "--corpus",
        corpus,
        "--profiles",
        collected / "profiles.jsonl",
        "--config",
        fixture_paths["config"],
        "--out-dir",
        labeled,
    ) == 0
    routed = tmp_path / tag / "routed"
    assert _run(
        "route",
        "--config",
        fixture_paths["config"],
        "--corpus",
        labeled / "cleaned_corpus.jsonl",
        "--out-dir",
        routed,
    ) == 0
    return collected, labeled, routed


def test_label_applies_cleaning_and_mapping(fixture_paths, tmp_path):
    _, labeled, _ = _pipeline(fixture_paths, tmp_path, "run")
    records = read_jsonl(labeled / "labeled.jsonl")
    assert {r["task_id"]: r["level"] for r in records} == EXPECTED_LEVELS
    cleaning = json.loads((labeled / "cleaning_report.json").read_text())
    assert cleaning == {"removed": [CLEANED_TASK], "reason": "all_zero_profile"}
    cleaned_corpus = read_jsonl(labeled / "cleaned_corpus.jsonl")
    assert len(cleaned_corpus) == 11


def test_route_cost_report_matches_hand_computation(fixture_paths, tmp_path, capsys):
    _, _, routed = _pipeline(fixture_paths, tmp_path, "run")
    log = read_jsonl(routed / "route_log.jsonl")
    assert len(log) == 11
    report = json.loads((routed / "cost_report.json").read_text())
    assert report["savings"] == pytest.approx(ROUTE_SAVINGS)
    assert report["avg_cost_correct"] == pytest.approx(16.75)
    assert report["avg_cost_wrong"] == pytest.approx(37.0)
    summary = json.loads((routed / "route_summary.json").read_text())
    assert summary["errors"] == []
    assert summary["correct"] == 8 and summary["wrong"] == 3
    assert "compute savings" in capsys.readouterr().out


def test_export_finetune_splits_and_round_trips(fixture_paths, tmp_path):
    _, labeled, _ = _pipeline(fixture_paths, tmp_path, "run")
    out_a = tmp_path / "ft-a"
    out_b = tmp_path / "ft-b"
    for out in (out_a, out_b):
        assert _run(
            "export-finetune",
            "--labeled",
            labeled / "labeled.jsonl",
            "--train-fraction",
            "0.8",
            "--seed",
            "7",
            "--out-dir",
            out,
        ) == 0
    train = read_jsonl(out_a / "train.jsonl")
    test = read_jsonl(out_a / "test.jsonl")
    assert (len(train), len(test)) == (9, 2)  # round(0.8 * 11) = 9
    for record in train + test:
        assert set(record) == {"prompt", "completion"}
        assert record["completion"].strip().isdigit()
    assert (out_a / "train.jsonl").read_bytes() == (out_b / "train.jsonl").read_bytes()
    assert (out_a / "test_labeled.jsonl").exists()


def test_eval_classifier_perfect_predictions(fixture_paths, tmp_path, capsys):
    _, labeled, _ = _pipeline(fixture_paths, tmp_path, "run")
    out = tmp_path / "eval"
    assert _run(
        "eval-classifier",
        "--test",
        labeled / "labeled.jsonl",
        "--predictions",
        fixture_paths["predictions"],
        "--out-dir",
        out,
    ) == 0
    report = json.loads((out / "eval_report.json").read_text())
    assert report["accuracy"] == 1.0
    assert report["type_ii_rate"] == 0.0
    assert report["n"] == 11
    assert "accuracy=1.0000" in capsys.readouterr().out


def test_route_with_replay_override_flag(fixture_paths, tmp_path):
    corpus = _ingest(fixture_paths, tmp_path)
    out = tmp_path / "collected"
    assert _run(
        "collect",
        "--config",
        fixture_paths["config"],
        "--corpus",
        corpus,
        "--replay",
        fixture_paths["replay"],
        "--out-dir",
        out,
    ) == 0
    assert len(read_jsonl(out / "profiles.jsonl")) == 12


def test_replay_flag_resolves_against_the_working_directory(fixture_paths, tmp_path, monkeypatch):
    corpus = _ingest(fixture_paths, tmp_path)
    workdir = tmp_path / "elsewhere"
    workdir.mkdir()
    (workdir / "local_replay.json").write_bytes(fixture_paths["replay"].read_bytes())
    monkeypatch.chdir(workdir)
    out = tmp_path / "collected"
    assert _run(
        "collect",
        "--config",
        fixture_paths["config"],
        "--corpus",
        corpus,
        "--replay",
        "local_replay.json",
        "--out-dir",
        out,
    ) == 0
    assert len(read_jsonl(out / "profiles.jsonl")) == 12


def test_bad_config_exits_two_and_prints_every_problem(fixture_paths, tmp_path, capsys):
    raw = json.loads(fixture_paths["config"].read_text())
    raw["policy"] = {"1": "small"}
    raw["defaults"]["trials"] = -1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(raw), encoding="utf-8")
    code = _run(
        "route",
        "--config",
        bad,
        "--corpus",
        fixture_paths["raw"],
        "--out-dir",
        tmp_path / "out",
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "no tier assigned for level 2" in err
    assert "trials" in err


def test_label_single_trial_scheme(fixture_paths, tmp_path):
    corpus = _ingest(fixture_paths, tmp_path)
    profiles = tmp_path / "profiles.jsonl"
    lines = []
    for pos, tid in enumerate(EXPECTED_LEVELS):
        counts = [0, 0, 0]
        counts[pos % 3] = 1
        lines.append(json.dumps({"task_id": tid, "counts": counts, "M": 1}))
    lines.append(json.dumps({"task_id": CLEANED_TASK, "counts": [0, 0, 0], "M": 1}))
    profiles.write_text("\n".join(lines) + "\n", encoding="utf-8")
    raw = json.loads(fixture_paths["config"].read_text())
    raw["scheme_id"] = "single_trial"
    config = fixture_paths["config"].parent / "single.json"
    config.write_text(json.dumps(raw), encoding="utf-8")
    out = tmp_path / "labeled"
    assert _run(
        "label",
        "--corpus",
        corpus,
        "--profiles",
        profiles,
        "--config",
        config,
        "--out-dir",
        out,
    ) == 0
    records = read_jsonl(out / "labeled.jsonl")
    assert len(records) == 11
    assert all(r["scheme_id"] == "single_trial" for r in records)
    assert {r["level"] for r in records} == {0, 1, 2}
    cleaning = json.loads((out / "cleaning_report.json").read_text())
    assert cleaning["removed"] == [CLEANED_TASK]


def test_route_all_pass_skips_cost_report_with_a_note(fixture_paths, tmp_path, capsys):
    corpus = _ingest(fixture_paths, tmp_path)
    # Predict level 1 for tasks whose small-tier trial 1 is a recorded pass,
    # so every routed answer verifies correct.
    predictions = tmp_path / "easy.jsonl"
    winners = ["t01", "t02", "t04", "t12"]
    predictions.write_text(
        "\n".join(json.dumps({"task_id": tid, "level": 1}) for tid in winners) + "\n",
        encoding="utf-8",
    )
    subset = tmp_path / "subset.jsonl"
    lines = [
        line
        for line in (tmp_path / "ingested" / "corpus.jsonl").read_text().splitlines()
        if json.loads(line)["task_id"] in winners
    ]
    subset.write_text("\n".join(lines) + "\n", encoding="utf-8")
    out = tmp_path / "routed"
    code = _run(
        "route",
        "--config",
        fixture_paths["config"],
        "--corpus",
        subset,
        "--predictions",
        predictions,
        "--out-dir",
        out,
    )
    assert code == 0
    assert (out / "route_log.jsonl").exists()
    assert not (out / "cost_report.json").exists()
    assert "cost report skipped" in capsys.readouterr().err


def test_checked_in_demo_matches_the_fixture_generator(fixture_paths):
    import pathlib

    demo = pathlib.Path(__file__).parent.parent / "demo"
    for name, path in fixture_paths.items():
        if name == "raw4":
            continue
        assert (demo / path.name).read_bytes() == path.read_bytes(), f"demo/{path.name} drifted"


def test_missing_corpus_file_fails_cleanly(fixture_paths, tmp_path, capsys):
    code = _run(
        "collect",
        "--config",
        fixture_paths["config"],
        "--corpus",
        tmp_path / "absent.jsonl",
        "--out-dir",
        tmp_path / "out",
    )
    assert code == 1
    assert "error:" in capsys.readouterr().err
