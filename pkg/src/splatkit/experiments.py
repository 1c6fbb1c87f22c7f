"""Ablation and tile-binning benchmarks shared by the CLI and the acceptance tests."""
import time

import numpy as np

from splatkit.raster import ALPHA_MIN
from splatkit.render import RasterSettings, render
from splatkit.scene import init_from_points
from splatkit.train import evaluate, raster_settings, run_training

ABLATION_ROWS = {
    "baseline": dict(use_vcd=False, use_vcp=False, use_cb=False),
    "+VCD": dict(use_vcd=True, use_vcp=False, use_cb=False),
    "+VCP": dict(use_vcd=False, use_vcp=True, use_cb=False),
    "full": dict(use_vcd=True, use_vcp=True, use_cb=True),
}
ABLATION_COLUMNS = ["config", "time_s", "psnr", "ssim", "gaussian_count", "tile_pairs"]


def train_from_dataset(dataset, cfg, callbacks=None):
    scene = init_from_points(dataset.init_positions, dataset.init_colors, cfg.sh_degree)
    return run_training(scene, dataset, cfg, callbacks)


def run_ablation(dataset, cfg, names=None):
    """Train each ablation row from the same initialization and seed.

    Returns one dict per row with the columns of :data:`ABLATION_COLUMNS` plus the
    final scene and the count curve ``(iterations, counts)``.
    """
    names = list(names or ABLATION_ROWS)
    results = []
    for name in names:
        row_cfg = cfg.replace(**ABLATION_ROWS[name])
        start = time.perf_counter()
        scene, rows = train_from_dataset(dataset, row_cfg)
        elapsed = time.perf_counter() - start
        metrics = evaluate(scene, dataset, dataset.test_idx, raster_settings(row_cfg))
        results.append({
            "config": name,
            "time_s": elapsed,
            "psnr": float(np.mean([m["psnr"] for m in metrics])),
            "ssim": float(np.mean([m["ssim"] for m in metrics])),
            "gaussian_count": len(scene),
            "tile_pairs": int(sum(r.tile_pairs for r in rows)),
            "scene": scene,
            "curve": ([r.iteration for r in rows], [r.gaussian_count for r in rows]),
        })
    return results


def bench_tiles(scene, cameras, betas, tau_alpha=ALPHA_MIN, workers=1):
    """Pairs, render time and mean absolute pixel difference versus beta=1 for each beta.

    A 3-sigma box row (``binning="aabb"``) is appended for reference.
    """
    def run(beta):
        settings = RasterSettings(beta=beta, tau_alpha=tau_alpha, workers=workers)
        start = time.perf_counter()
        views = [render(scene, cam, settings) for cam in cameras]
        return views, time.perf_counter() - start

    ref, _ = run(1.0)
    rows = []
    for beta in sorted(set(float(b) for b in betas) | {1.0}, reverse=True):
        views, elapsed = run(beta)
        diff = np.mean([np.abs(v.image - r.image).mean() for v, r in zip(views, ref)])
        rows.append({"binning": "compact", "beta": beta, "pairs": int(sum(v.pairs for v in views)),
                     "render_ms": 1e3 * elapsed, "mean_abs_diff": float(diff)})
    views, elapsed = run(None)
    diff = np.mean([np.abs(v.image - r.image).mean() for v, r in zip(views, ref)])
    rows.append({"binning": "aabb", "beta": float("nan"), "pairs": int(sum(v.pairs for v in views)),
                 "render_ms": 1e3 * elapsed, "mean_abs_diff": float(diff)})
    return rows
