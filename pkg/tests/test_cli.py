import csv
import json
import math
import os

import pytest

from splatkit.cli import main


@pytest.fixture(scope="module")
def syn8(tmp_path_factory):
    out = tmp_path_factory.mktemp("syn8")
    assert main(["synth", str(out), "--gaussians", "40", "--views", "8", "--size", "32", "--seed", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    path.write_text("densify_from = 100\ndensify_until = 1000\ndensify_every = 100\n"
                    "prune_every_early = 100\nprune_every_late = 500\nsh_degree = 1\n")
    return path


def test_train_writes_report(syn8, cfg_file, tmp_path):
    out = tmp_path / "run"
    rc = main(["train", str(syn8), str(out), "--config", str(cfg_file), "--iters", "2000", "--plot"])
    assert rc == 0
    for name in ("checkpoint.ply", "log.csv", "metrics.json", "timing.json", "count.png", "renders/00000.png"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["iterations"] == 2000 and metrics["renders"] == ["renders/00000.png"]
    assert all((out / r).exists() for r in metrics["renders"])
    rows = list(csv.DictReader(open(out / "log.csv")))
    assert len(rows) == 2000 and int(rows[-1]["gaussian_count"]) == metrics["gaussian_count"]


def test_same_seed_identical_outputs(syn8, cfg_file, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["train", str(syn8), str(out), "--config", str(cfg_file), "--iters", "150",
                     "--seed", "7", "--workers", "1"]) == 0
        outs.append(out)
    for name in ("metrics.json", "checkpoint.ply"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_unknown_config_key(syn8, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("iterations = 10\nwarp_factor = 9\n")
    assert main(["train", str(syn8), str(tmp_path / "o"), "--config", str(bad)]) == 2
    assert "warp_factor" in capsys.readouterr().err


def test_missing_dataset(tmp_path, capsys):
    assert main(["train", str(tmp_path / "nope"), str(tmp_path / "o"), "--iters", "1"]) == 1
    assert "missing" in capsys.readouterr().err


def test_render_and_eval_gt(syn8, tmp_path, capsys):
    out = tmp_path / "renders"
    gt = str(syn8 / "gt_scene.ply")
    assert main(["render", gt, str(syn8 / "cameras.json"), str(out)]) == 0
    assert len(os.listdir(out)) == 8
    capsys.readouterr()
    first, second = tmp_path / "m1.json", tmp_path / "m2.json"
    assert main(["eval", gt, str(syn8), "--out", str(first)]) == 0
    assert main(["eval", gt, str(syn8), "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.read_text())["mean_psnr"] >= 45.0


def test_eval_empty_split(tmp_path, capsys):
    assert main(["synth", str(tmp_path / "d"), "--gaussians", "5", "--views", "2", "--size", "8"]) == 0
    os.remove(tmp_path / "d" / "images" / "00001.png")
    cams = json.loads((tmp_path / "d" / "cameras.json").read_text())
    (tmp_path / "d" / "cameras.json").write_text(json.dumps(cams[1:]))
    os.rename(tmp_path / "d" / "images" / "00000.png", tmp_path / "d" / "images" / "00001.png")
    assert main(["eval", str(tmp_path / "d" / "gt_scene.ply"), str(tmp_path / "d")]) == 2
    assert "empty" in capsys.readouterr().err


def test_bench_tiles(syn8, tmp_path):
    out = tmp_path / "bench"
    assert main(["bench-tiles", str(syn8), str(out), "--betas", "0.9,0.5,0.7", "--plot"]) == 0
    rows = list(csv.DictReader(open(out / "bench_tiles.csv")))
    compact = [r for r in rows if r["binning"] == "compact"]
    assert [float(r["beta"]) for r in compact] == [1.0, 0.9, 0.7, 0.5]
    assert float(compact[0]["mean_abs_diff"]) == 0.0
    pairs = [int(r["pairs"]) for r in compact]
    assert pairs == sorted(pairs, reverse=True)
    aabb = [r for r in rows if r["binning"] == "aabb"][0]
    assert math.isnan(float(aabb["beta"])) and int(aabb["pairs"]) >= pairs[0]
    assert (out / "bench_tiles.png").exists()


def test_ablate_four_rows(syn8, cfg_file, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", str(syn8), str(out), "--config", str(cfg_file), "--iters", "200", "--plot"]) == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [r["config"] for r in rows] == ["baseline", "+VCD", "+VCP", "full"]
    assert set(rows[0]) == {"config", "time_s", "psnr", "ssim", "gaussian_count", "tile_pairs"}
    assert (out / "ablation_counts.png").exists()


def test_bad_beta_flag(syn8, tmp_path, capsys):
    assert main(["train", str(syn8), str(tmp_path / "o"), "--beta", "1.5", "--iters", "1"]) == 2
    assert "beta" in capsys.readouterr().err
