import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from dixonkit.cli import main
from dixonkit.raster import read_raster


@pytest.fixture(scope="session")
def small_config_file(tmp_path_factory):
    cfg = {
        "phantom": {"rows": 96, "cols": 96, "noise_sigma": 0.02},
        "pipeline": {"seed": 7, "dixon_rows": 92, "dixon_cols": 72, "search_radius": 6},
    }
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _tree_hashes(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_phantom_idempotent(tmp_path, small_config_file, capsys):
    out = tmp_path / "ph"
    assert main(["phantom", "-n", "2", "--seed", "7", "--config", small_config_file, "--out", str(out)]) == 0
    first = _tree_hashes(out)
    shutil.rmtree(out)
    assert main(["phantom", "-n", "2", "--seed", "7", "--config", small_config_file, "--out", str(out)]) == 0
    assert _tree_hashes(out) == first
    assert (out / "run_config.json").exists()


def test_phantom_rejects_zero_subjects(tmp_path, capsys):
    assert main(["phantom", "-n", "0", "--out", str(tmp_path)]) == 2


def test_unknown_config_key_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"pipeline": {"not_a_key": 1}}))
    code = main(["phantom", "-n", "1", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "not_a_key" in capsys.readouterr().err


def test_out_env_var(tmp_path, monkeypatch, small_config_file):
    monkeypatch.setenv("DIXONKIT_OUT", str(tmp_path))
    assert main(["phantom", "-n", "1", "--config", small_config_file]) == 0
    assert (tmp_path / "phantom" / "S0000_phantom.json").exists()


def test_missing_out_is_usage_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("DIXONKIT_OUT", raising=False)
    assert main(["phantom", "-n", "1"]) == 2


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory, small_config_file):
    out = tmp_path_factory.mktemp("pipe") / "run"
    code = main(["pipeline", "-n", "6", "--config", small_config_file, "--out", str(out)])
    assert code == 0
    return out


def test_pipeline_produces_all_stages(pipeline_run):
    assert (pipeline_run / "cohort" / "manifest.json").exists()
    assert (pipeline_run / "cohort" / "manifest_raw.json").exists()
    assert (pipeline_run / "ml" / "split_index.json").exists()
    assert (pipeline_run / "report" / "report.csv").exists()
    assert (pipeline_run / "run_config.json").exists()


def test_pipeline_split_respects_manifest(pipeline_run):
    manifest = json.loads((pipeline_run / "cohort" / "manifest.json").read_text())
    index = json.loads((pipeline_run / "ml" / "split_index.json").read_text())
    by_id = {s["subject_id"]: s["split"] for s in manifest["samples"]}
    for entry in index["samples"]:
        assert entry["split"] == by_id[entry["subject_id"]]
        assert (pipeline_run / "ml" / entry["input"]).with_suffix(".json").exists() or (
            pipeline_run / "ml" / (entry["input"] + ".json")
        ).exists()


def test_fit_dixon_writes_pdff_only(pipeline_run, tmp_path):
    manifest = str(pipeline_run / "cohort" / "manifest.json")
    out = tmp_path / "preds"
    assert main(["fit", "--manifest", manifest, "--method", "dixon", "--out", str(out)]) == 0
    files = {p.name for p in out.iterdir()}
    assert any(n.endswith("_dixon_pdff.json") for n in files)
    assert not any("r2star" in n for n in files)


def test_fit_baseline_preserves_negative_rates(pipeline_run, tmp_path):
    manifest = str(pipeline_run / "cohort" / "manifest.json")
    out = tmp_path / "preds"
    assert main(["fit", "--manifest", manifest, "--method", "baseline_r2s", "--out", str(out)]) == 0
    negatives = 0
    for p in sorted(out.glob("*_baseline_r2s_r2star.json")):
        img = read_raster(p)
        negatives += int((img.channel("r2star") < 0).sum())
    assert negatives > 0


def test_fit_unknown_method(pipeline_run, tmp_path, capsys):
    manifest = str(pipeline_run / "cohort" / "manifest.json")
    assert main(["fit", "--manifest", manifest, "--method", "magic", "--out", str(tmp_path)]) == 2


def test_fit_nlls_matches_target(pipeline_run, tmp_path):
    # the nlls method recomputes exactly what the target rasters hold
    manifest_path = pipeline_run / "cohort" / "manifest.json"
    out = tmp_path / "preds"
    assert main(["fit", "--manifest", str(manifest_path), "--method", "nlls", "--split", "test", "--out", str(out)]) == 0
    manifest = json.loads(manifest_path.read_text())
    test_ids = [s["subject_id"] for s in manifest["samples"] if s["split"] == "test"]
    for sid in test_ids:
        pred = read_raster(out / f"{sid}_nlls_pdff")
        target = read_raster(pipeline_run / "cohort" / f"{sid}_target")
        assert np.array_equal(pred.channel("pdff"), target.channel("pdff"))


def test_eval_ground_truth_is_zero_table(pipeline_run, tmp_path):
    manifest = str(pipeline_run / "cohort" / "manifest.json")
    out = tmp_path / "report"
    code = main(
        [
            "eval",
            "--manifest",
            manifest,
            "--pred-dir",
            str(pipeline_run / "predictions"),
            "--methods",
            "target",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    for value in report["mae"]["target"].values():
        assert value == 0.0


def test_eval_two_methods_two_rows(pipeline_run, tmp_path):
    manifest = str(pipeline_run / "cohort" / "manifest.json")
    out = tmp_path / "r2"
    code = main(
        [
            "eval",
            "--manifest",
            manifest,
            "--pred-dir",
            str(pipeline_run / "predictions"),
            "--methods",
            "dixon,baseline_r2s",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["mae"]) == {"dixon", "baseline_r2s"}
    # byte-identical regeneration
    again = tmp_path / "r2b"
    main(
        [
            "eval",
            "--manifest",
            manifest,
            "--pred-dir",
            str(pipeline_run / "predictions"),
            "--methods",
            "dixon,baseline_r2s",
            "--out",
            str(again),
        ]
    )
    assert (out / "report.csv").read_bytes() == (again / "report.csv").read_bytes()


def test_eval_missing_predictions_enumerated(pipeline_run, tmp_path, capsys):
    manifest = str(pipeline_run / "cohort" / "manifest.json")
    code = main(
        [
            "eval",
            "--manifest",
            manifest,
            "--pred-dir",
            str(tmp_path / "empty"),
            "--methods",
            "dixon",
            "--out",
            str(tmp_path / "rep"),
        ]
    )
    assert code == 1
    assert "missing predictions" in capsys.readouterr().err


def test_export_ml_refuses_unfiltered_manifest(pipeline_run, tmp_path, capsys):
    raw = str(pipeline_run / "cohort" / "manifest_raw.json")
    code = main(["export-ml", "--manifest", raw, "--out", str(tmp_path / "ml")])
    assert code == 1
    assert "unfiltered" in capsys.readouterr().err
    code = main(
        ["export-ml", "--manifest", raw, "--out", str(tmp_path / "ml2"), "--allow-unfiltered"]
    )
    assert code == 1  # still fails: splits unassigned in the raw manifest


def test_export_filter_arithmetic(tmp_path, small_config_file):
    # 10 subjects at the 0.10 gate leave 9 samples across splits
    out = tmp_path / "run"
    assert main(["pipeline", "-n", "10", "--config", small_config_file, "--out", str(out)]) == 0
    index = json.loads((out / "ml" / "split_index.json").read_text())
    assert len(index["samples"]) == 9
