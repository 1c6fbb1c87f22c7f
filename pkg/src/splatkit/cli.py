"""Command-line interface: ``splatkit {synth,train,render,eval,bench-tiles,ablate}``."""
import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from splatkit.config import ConfigError, TrainConfig, load_config
from splatkit.experiments import ABLATION_COLUMNS, bench_tiles, run_ablation, train_from_dataset
from splatkit.io import (
    DatasetError,
    generate_synthetic,
    load_checkpoint,
    load_dataset,
    read_cameras,
    save_checkpoint,
    save_png,
)
from splatkit.render import RasterSettings, render
from splatkit.train import evaluate, raster_settings, write_log_csv

log = logging.getLogger("splatkit")

# flag name -> TrainConfig field
OVERRIDES = {
    "seed": "seed",
    "workers": "workers",
    "beta": "beta",
    "tau": "tau",
    "tau_d": "tau_d",
    "tau_p": "tau_p",
    "iters": "iterations",
}


class UsageError(Exception):
    pass


def _add_config_flags(p):
    g = p.add_argument_group("training config")
    g.add_argument("--config", help="key = value config file; flags below override it")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, help="tile-parallel render threads (1 = reproducibility reference)")
    g.add_argument("--beta", type=float, help="compact-box scale in (0, 1]")
    g.add_argument("--tau", type=float, help="high-error pixel threshold on the normalized error map")
    g.add_argument("--tau-d", type=float, help="densify score threshold")
    g.add_argument("--tau-p", type=float, help="late prune score threshold")
    g.add_argument("--iters", type=int, help="training iterations")
    g.add_argument("--float64", action="store_true", help="train in double precision")


def _build_config(args, base=None):
    cfg = load_config(args.config, base) if args.config else (base or TrainConfig())
    changes = {field: getattr(args, flag) for flag, field in OVERRIDES.items()
               if getattr(args, flag, None) is not None}
    if getattr(args, "float64", False):
        changes["float64"] = True
    return cfg.replace(**changes)


def _settings(args):
    beta = getattr(args, "beta", None)
    return RasterSettings(beta=beta, workers=getattr(args, "workers", None) or 1)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def _metrics_record(per_view, scene, extra=None):
    rec = {
        "views": per_view,
        "mean_psnr": float(np.mean([v["psnr"] for v in per_view])),
        "mean_ssim": float(np.mean([v["ssim"] for v in per_view])),
        "gaussian_count": len(scene),
    }
    rec.update(extra or {})
    return rec


def cmd_synth(args):
    ds, gt = generate_synthetic(args.out, n_gaussians=args.gaussians, n_views=args.views,
                                width=args.size, height=args.size, seed=args.seed)
    print(f"wrote {len(ds.cameras)} views and {len(gt)} ground-truth Gaussians to {args.out}")


def cmd_train(args):
    cfg = _build_config(args)
    ds = load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    scene, rows = train_from_dataset(ds, cfg)
    settings = raster_settings(cfg)
    save_checkpoint(scene, os.path.join(args.out, "checkpoint.ply"))
    write_log_csv(rows, os.path.join(args.out, "log.csv"))
    renders = os.path.join(args.out, "renders")
    os.makedirs(renders, exist_ok=True)
    written = []
    for i in ds.test_idx:
        name = f"{int(ds.cameras[i].id):05d}.png"
        save_png(os.path.join(renders, name), render(scene, ds.cameras[i], settings).image)
        written.append(os.path.join("renders", name))
    per_view = evaluate(scene, ds, ds.test_idx, settings) if len(ds.test_idx) else []
    metrics = {
        "iterations": cfg.iterations,
        "seed": cfg.seed,
        "gaussian_count": len(scene),
        "total_tile_pairs": int(sum(r.tile_pairs for r in rows)),
        "views": per_view,
        "renders": written,
    }
    if per_view:
        metrics["mean_psnr"] = float(np.mean([v["psnr"] for v in per_view]))
        metrics["mean_ssim"] = float(np.mean([v["ssim"] for v in per_view]))
    _write_json(os.path.join(args.out, "metrics.json"), metrics)
    _write_json(os.path.join(args.out, "timing.json"),
                {"total_wall_s": rows[-1].elapsed_ms / 1e3 if rows else 0.0})
    if args.plot:
        from splatkit.plotting import plot_counts

        plot_counts({"train": ([r.iteration for r in rows], [r.gaussian_count for r in rows])},
                    os.path.join(args.out, "count.png"))
    print(f"{len(scene)} Gaussians; results in {args.out}")


def cmd_render(args):
    scene = load_checkpoint(args.checkpoint)
    cams, _ = read_cameras(args.cameras)
    os.makedirs(args.out, exist_ok=True)
    settings = _settings(args)
    for cam in cams:
        save_png(os.path.join(args.out, f"{int(cam.id):05d}.png"), render(scene, cam, settings).image)
    print(f"rendered {len(cams)} views to {args.out}")


def cmd_eval(args):
    scene = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    if len(ds.test_idx) == 0:
        raise UsageError("evaluation split is empty")
    rec = _metrics_record(evaluate(scene, ds, ds.test_idx, _settings(args)), scene)
    if args.out:
        _write_json(args.out, rec)
    print(json.dumps(rec, indent=2, sort_keys=True))


def cmd_bench_tiles(args):
    ds = load_dataset(args.dataset)
    ckpt = args.checkpoint or os.path.join(args.dataset, "gt_scene.ply")
    scene = load_checkpoint(ckpt)
    betas = [float(b) for b in args.betas.split(",")]
    rows = bench_tiles(scene, ds.cameras, betas, workers=args.workers or 1)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "bench_tiles.csv"), rows,
               ["binning", "beta", "pairs", "render_ms", "mean_abs_diff"])
    if args.plot:
        from splatkit.plotting import plot_bench

        plot_bench(rows, os.path.join(args.out, "bench_tiles.png"))
    for r in rows:
        beta = "-" if math.isnan(r["beta"]) else f"{r['beta']:.2f}"
        print(f"{r['binning']:8s} beta={beta:5s} pairs={r['pairs']:9d} "
              f"time={r['render_ms']:8.1f}ms diff={255 * r['mean_abs_diff']:.3f}/255")


def cmd_ablate(args):
    # the full row uses the compact box; its beta defaults to 0.8 here
    base = TrainConfig(beta=0.8)
    cfg = _build_config(args, base)
    ds = load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    results = run_ablation(ds, cfg)
    _write_csv(os.path.join(args.out, "ablation.csv"), results, ABLATION_COLUMNS)
    for r in results:
        save_checkpoint(r["scene"], os.path.join(args.out, f"{r['config'].lstrip('+').lower()}.ply"))
    if args.plot:
        from splatkit.plotting import plot_counts

        plot_counts({r["config"]: r["curve"] for r in results}, os.path.join(args.out, "ablation_counts.png"))
    for r in results:
        print(f"{r['config']:9s} time={r['time_s']:7.1f}s psnr={r['psnr']:.3f} ssim={r['ssim']:.4f} "
              f"n={r['gaussian_count']}")


def build_parser():
    parser = argparse.ArgumentParser(prog="splatkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("out")
    p.add_argument("--gaussians", type=int, default=500)
    p.add_argument("--views", type=int, default=64)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset")
    p.add_argument("dataset")
    p.add_argument("out")
    _add_config_flags(p)
    p.add_argument("--plot", action="store_true", help="also write a count-vs-iteration chart")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a checkpoint from cameras.json")
    p.add_argument("checkpoint")
    p.add_argument("cameras")
    p.add_argument("out")
    p.add_argument("--beta", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a dataset's test views")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.add_argument("--beta", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-tiles", help="tile pairs and image change versus beta")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--checkpoint", help="scene to render (default: the dataset's gt_scene.ply)")
    p.add_argument("--betas", default="1.0,0.9,0.8,0.7,0.6,0.5")
    p.add_argument("--workers", type=int)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_bench_tiles)

    p = sub.add_parser("ablate", help="baseline, +VCD, +VCP and full configurations")
    p.add_argument("dataset")
    p.add_argument("out")
    _add_config_flags(p)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"splatkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, ValueError, OSError) as exc:
        print(f"splatkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
