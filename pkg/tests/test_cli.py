import csv
import json

import numpy as np
import pytest

from brasyn.cli import build_report, main, read_rows, write_rows
from brasyn.config import load_config, make_config
from brasyn.io import load_volume

TINY = {
    "data": {"n_train": 4, "n_test": 2, "shape": [32, 32, 32]},
    "generator": {"base_channels": 4, "latent_channels": 8, "infuser_blocks": 1},
    "stage1": {"epochs": 1, "batch_size": 8, "max_steps_per_epoch": 2},
    "proxy": {"epochs": 1, "patch_size": 16, "widths": [4, 8]},
    "refiner": {"channels": 4, "unet_depth": 2},
    "refiner_train": {"epochs": 1, "patch_size": 16},
}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory, tiny_config):
    out = tmp_path_factory.mktemp("run")
    assert main(["pipeline", "--config", tiny_config, "--out", str(out), "--seed", "3"]) == 0
    return out


def test_profiles():
    toy, full = make_config("toy"), make_config("full")
    assert toy.data.shape == (64, 64, 64) and toy.refiner.patch_size == 32 and toy.data.n_train == 32
    assert full.refiner.channels == 64 and full.refiner_train.epochs == 100 and full.refiner_train.batch_size == 4
    assert full.stage1.epochs == 20 and full.stage1.batch_size == 24
    assert full.loss_weights.as_dict()["rec"] == 10
    with pytest.raises(ValueError):
        make_config("huge")
    with pytest.raises(ValueError):
        make_config("toy", {"stage1": {"nope": 1}})


def test_config_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"profile": "toy", "seed": 4, "stage1": {"epochs": 3}}))
    cfg = load_config(path, seed=None, target="flair")
    assert (cfg.seed, cfg.target, cfg.stage1.epochs, cfg.stage1.batch_size) == (4, "flair", 3, 16)
    assert load_config(path, seed=9).seed == 9


def test_generate_data_is_deterministic(tmp_path, tiny_config):
    for name in ("a", "b"):
        assert main(["generate-data", "--config", tiny_config, "--n", "3", "--seed", "7",
                     "--out", str(tmp_path / name)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "a" / "data" / "manifest.csv")))
    assert [r["split"] for r in rows] == ["train"] * 3 + ["test"] * 2
    assert [r["seed"] for r in rows][:3] == ["7", "8", "9"]
    a = load_volume(tmp_path / "a/data/train/train_00007/train_00007_t1.nii.gz").data
    b = load_volume(tmp_path / "b/data/train/train_00007/train_00007_t1.nii.gz").data
    assert np.array_equal(a, b)


def test_unwritable_output_fails(tmp_path, tiny_config, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["generate-data", "--config", tiny_config, "--out", str(blocker / "sub")]) != 0
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("command,missing", [
    ("fit-prior", "train data"),
    ("train-stage1", "train data"),
    ("synthesize", "intensity priors"),
    ("train-refiner", "train data"),
    ("evaluate", "proxy segmenter"),
    ("report", "evaluation CSVs"),
])
def test_missing_upstream_artifacts(tmp_path, tiny_config, capsys, command, missing):
    assert main([command, "--config", tiny_config, "--out", str(tmp_path)]) == 2
    assert missing in capsys.readouterr().err


def test_synthesize_with_reference_prior(tiny_run, tiny_config, tmp_path):
    out = str(tiny_run)
    priors = tmp_path / "priors.csv"
    assert main(["fit-prior", "--reference", "--config", tiny_config, "--out", str(tmp_path)]) == 0
    assert main(["synthesize", "--config", tiny_config, "--out", out, "--target", "t1", "--strategy", "mean",
                 "--split", "test", "--priors", str(priors)]) == 0
    vol = load_volume(tiny_run / "cache/t1/mean/test/test_10003.nii.gz")
    assert vol.meta["conditioned_intensity"] == 0.4332


def test_cache_location_follows_env(tiny_run, tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv("BRASYN_CACHE", str(tmp_path / "cache"))
    assert main(["synthesize", "--config", tiny_config, "--out", str(tiny_run), "--split", "test"]) == 0
    assert sorted(p.name for p in (tmp_path / "cache/t1ce/mean/test").glob("*.nii.gz")) == [
        "test_10003.nii.gz", "test_10004.nii.gz"]


def test_pipeline_outputs(tiny_run):
    rows = read_rows(tiny_run / "eval" / "t1ce_mean.csv")
    assert [r["case_id"] for r in rows] == ["test_10003", "test_10004"]
    for stage in ("stage1", "refined"):
        for col in ("ssim_whole", "ssim_tumor", "ssim_healthy", "dice_WT", "dice_TC", "dice_ET",
                    "hd95_WT", "hd95_TC", "hd95_ET"):
            assert f"{stage}_{col}" in rows[0]
    for name in ("table1_ssim", "table2_masked_ssim", "table3_dice", "table4_stats"):
        assert (tiny_run / "report" / f"{name}.csv").exists()
    assert (tiny_run / "report" / "report.md").read_text().startswith("# brasyn report")
    assert len(list((tiny_run / "stage1").glob("*.pt"))) == 1
    assert len(list((tiny_run / "refiner").glob("*.pt"))) == 1


def test_commands_are_idempotent(tiny_run, tiny_config):
    csv_path = tiny_run / "eval" / "t1ce_mean.csv"
    before = csv_path.read_bytes()
    assert main(["evaluate", "--config", tiny_config, "--out", str(tiny_run), "--seed", "3"]) == 0
    assert csv_path.read_bytes() == before


def test_report_means_match_per_case_rows(tmp_path):
    rows = [{"case_id": f"c{i}", **{f"{s}_{k}": float(i + j) for j, k in enumerate(
        ["ssim_whole", "ssim_tumor", "ssim_healthy", "dice_WT", "dice_TC", "dice_ET", "hd95_WT", "hd95_TC",
         "hd95_ET"]) for s in ("stage1", "refined")}} for i in range(8)]
    write_rows(tmp_path / "t2_mean.csv", rows)
    tables = build_report({"t2_mean": tmp_path / "t2_mean.csv"})
    t1 = tables["table1_ssim"][0]
    assert t1["n_cases"] == 8
    assert t1["ssim_refined"] == pytest.approx(np.mean([r["refined_ssim_whole"] for r in rows]))
    t3 = tables["table3_dice"][0]
    assert t3["ET_stage1"] == pytest.approx(np.mean([r["stage1_dice_ET"] for r in rows]))
    stats = {r["metric"]: r for r in tables["table4_stats"]}
    assert stats["dice_WT"]["median"] == pytest.approx(np.median([r["refined_dice_WT"] for r in rows]))
