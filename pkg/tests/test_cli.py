"""End-to-end checks for the command line workflow."""
import csv
import json
from pathlib import Path

import pytest

from anchorner import cli
from anchorner.continual import RunConfig, run_config_from_dict
from anchorner.corpus import read_conll_file
from anchorner.synth import write_synthetic

TINY_FLAGS = [
    "--permutation", "synthetic",
    "--d-model", "16",
    "--n-layers", "2",
    "--n-heads", "2",
    "--base-epochs", "1",
    "--base-batch-size", "8",
    "--base-lr", "1e-3",
    "--epochs", "1",
    "--batch-size", "2",
    "--lr", "1e-3",
    "--shots", "2",
    "--mdt-per-class", "1",
]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthdata")
    write_synthetic(out, seed=0, n_train=60, n_validation=40, n_test=30)
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("rundir")
    rc = cli.main([
        "run",
        "--data-dir", str(synth_dir),
        "--out", str(out),
        "--seed", "0,1",
        "--save-predictions",
        "--save-checkpoint",
        *TINY_FLAGS,
    ])
    assert rc == 0
    return out


# parsing and configuration ---------------------------------------------


def test_parser_accepts_documented_flags():
    parser = cli.build_parser()
    args = parser.parse_args([
        "run",
        "--dataset", "conll2003",
        "--schedule", "s.json",
        "--permutation", "P3",
        "--shots", "5",
        "--train-mode", "tof",
        "--eval-mode", "eof",
        "--mdt-per-class", "3",
        "--mdt-format", "entity",
        "--alpha", "2.0",
        "--beta", "0.5",
        "--head-mode", "classifier",
        "--seed", "0,1,2",
        "--epochs", "20",
        "--batch-size", "2",
        "--lr", "1e-4",
        "--freeze-fraction", "0.75",
        "--out", "runs",
        "--data-dir", "data",
    ])
    assert args.train_mode == "tof" and args.eval_mode == "eof"
    assert args.permutation == "P3"
    assert args.seed == "0,1,2"


def test_parser_canonicalizes_mixed_case_modes():
    parser = cli.build_parser()
    args = parser.parse_args([
        "run", "--data-dir", "d", "--out", "o",
        "--train-mode", "ToF", "--eval-mode", "EoF",
    ])
    cfg = cli.effective_config(args)
    assert cfg.train_mode == "ToF"
    assert cfg.eval_mode == "EoF"


def test_effective_config_defaults():
    parser = cli.build_parser()
    args = parser.parse_args(["run", "--data-dir", "d", "--out", "o"])
    cfg = cli.effective_config(args)
    assert cfg == RunConfig()
    assert cfg.base.epochs == 5 and cfg.incremental.epochs == 20
    assert cfg.incremental.freeze_fraction == 0.75


def test_effective_config_layering(tmp_path):
    config_file = tmp_path / "cfg.json"
    config_file.write_text(json.dumps({
        "alpha": 3.0,
        "shots": 9,
        "incremental": {"epochs": 7},
    }))
    parser = cli.build_parser()
    args = parser.parse_args([
        "run", "--data-dir", "d", "--out", "o",
        "--config", str(config_file),
        "--alpha", "4.0",  # flag beats file
    ])
    cfg = cli.effective_config(args)
    assert cfg.alpha == 4.0
    assert cfg.shots == 9  # file beats default
    assert cfg.incremental.epochs == 7
    assert cfg.incremental.batch_size == 2  # untouched default survives
    assert run_config_from_dict(cfg.to_dict()) == cfg


# prepare ----------------------------------------------------------------


def test_prepare_synthetic(tmp_path):
    out = tmp_path / "demo"
    rc = cli.main([
        "prepare", "--synthetic", "--out", str(out),
        "--n-train", "30", "--n-validation", "20", "--n-test", "10",
    ])
    assert rc == 0
    for name in ("train.txt", "valid.txt", "test.txt",
                 "schedules.json", "anchor_words.json"):
        assert (out / name).exists()
    assert len(read_conll_file(out / "train.txt")) == 30


def test_prepare_episodes(tmp_path, synth_dir):
    out = tmp_path / "prep"
    rc = cli.main([
        "prepare",
        "--data-dir", str(synth_dir),
        "--out", str(out),
        "--permutation", "synthetic",
        "--shots", "3",
        "--seed", "5",
    ])
    assert rc == 0
    spec = json.loads((out / "prepared.json").read_text())
    assert spec["shots"] == 3 and spec["seed"] == 5
    assert set(spec["episodes"]) == {"2"}
    episode = read_conll_file(out / spec["episodes"]["2"])
    assert episode
    for etype, total in spec["mention_counts"]["2"].items():
        assert total >= 3, etype


def test_run_uses_prepared_episodes(tmp_path, synth_dir):
    prep = tmp_path / "prep"
    assert cli.main([
        "prepare", "--data-dir", str(synth_dir), "--out", str(prep),
        "--permutation", "synthetic", "--shots", "2", "--seed", "5",
    ]) == 0
    out = tmp_path / "run"
    assert cli.main([
        "run", "--data-dir", str(synth_dir), "--out", str(out),
        "--prepared", str(prep), "--seed", "0", *TINY_FLAGS,
    ]) == 0
    results = json.loads((out / "seed_0" / "results.json").read_text())
    spec = json.loads((prep / "prepared.json").read_text())
    episode = read_conll_file(prep / spec["episodes"]["2"])
    assert results["steps"][1]["episode_source_ids"] == [
        s.source_id for s in episode
    ]


# run outputs ------------------------------------------------------------


def test_run_writes_per_seed_results(run_dir):
    for seed in (0, 1):
        seed_dir = run_dir / f"seed_{seed}"
        results = json.loads((seed_dir / "results.json").read_text())
        assert results["config"]["seed"] == seed
        assert len(results["macro_by_step"]) == 2
        assert "wall_time_s" not in results
        assert (seed_dir / "predictions_step1.txt").exists()
        assert (seed_dir / "predictions_step2.txt").exists()
        assert (seed_dir / "checkpoint.pt").exists()


def test_aggregate_csv_shape_and_consistency(run_dir):
    with (run_dir / "aggregate.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert rows[0]["variant"] == "full"
    for row in rows:
        steps = [float(row[k]) for k in ("step1", "step2")]
        assert all(0.0 <= s <= 100.0 for s in steps)
        # percent cells carry four decimals
        assert len(row["step1"].rsplit(".", 1)[1]) == 4
        # the stored average stays consistent with one recomputed
        # from the rounded step columns
        recomputed = steps[1]
        assert abs(float(row["avg_ge2"]) - recomputed) < 0.005


def test_table_md_mean_std(run_dir):
    text = (run_dir / "table.md").read_text()
    lines = text.strip().splitlines()
    assert lines[0].startswith("| variant | step1 | step2 | avg_ge2 |")
    body = [l for l in lines[2:] if l.strip()]
    assert len(body) == 1
    assert "±" in body[0]


def test_plot_series_rows(run_dir):
    with (run_dir / "plot_series.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["variant"], r["step"]) for r in rows] == [
        ("full", "1"), ("full", "2"),
    ]
    assert all(0.0 <= float(r["mean"]) <= 100.0 for r in rows)


def test_manifest_round_trips_config(run_dir):
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "run"
    assert set(manifest["wall_time_s"]) == {"full/seed_0", "full/seed_1"}
    cfg = run_config_from_dict(manifest["effective_config"])
    assert cfg.encoder.d_model == 16
    assert cfg.incremental.epochs == 1
    assert cfg.shots == 2


def test_rerun_same_seed_identical_results(tmp_path, synth_dir, run_dir):
    out = tmp_path / "again"
    assert cli.main([
        "run", "--data-dir", str(synth_dir), "--out", str(out),
        "--seed", "0", *TINY_FLAGS,
    ]) == 0
    first = (run_dir / "seed_0" / "results.json").read_bytes()
    second = (out / "seed_0" / "results.json").read_bytes()
    assert first == second


# ablate and report --------------------------------------------------------


@pytest.fixture(scope="module")
def ablate_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("ablatedir")
    rc = cli.main([
        "ablate",
        "--data-dir", str(synth_dir),
        "--out", str(out),
        "--seed", "0",
        "--variants", "full,no_mdt",
        *TINY_FLAGS,
    ])
    assert rc == 0
    return out


def test_ablate_writes_variant_directories(ablate_dir):
    full = json.loads(
        (ablate_dir / "full" / "seed_0" / "results.json").read_text()
    )
    no_mdt = json.loads(
        (ablate_dir / "no_mdt" / "seed_0" / "results.json").read_text()
    )
    assert full["switches"] == []
    assert no_mdt["switches"] == ["no_mdt"]
    assert no_mdt["config"]["incremental"]["mdt_per_class"] == 0
    with (ablate_dir / "aggregate.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["variant"] for r in rows} == {"full", "no_mdt"}


def test_report_sections(ablate_dir, tmp_path, capsys):
    out_file = tmp_path / "report.md"
    rc = cli.main(["report", str(ablate_dir), "--out", str(out_file)])
    assert rc == 0
    text = out_file.read_text()
    assert "## evaluation EoA" in text
    assert "### final-step per-type F1, evaluation EoA" in text
    assert "| full |" in text.replace("  ", " ")
    assert "no_mdt" in text
    printed = capsys.readouterr().out
    assert "## evaluation EoA" in printed


def test_report_empty_directory_fails(tmp_path):
    rc = cli.main(["report", str(tmp_path / "nothing")])
    assert rc == 2


def test_unknown_permutation_exits_2(tmp_path, synth_dir, capsys):
    rc = cli.main([
        "run", "--data-dir", str(synth_dir),
        "--out", str(tmp_path / "x"),
        "--permutation", "P99",
    ])
    assert rc == 2
    assert "error:" in capsys.readouterr().err
