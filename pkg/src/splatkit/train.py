"""Training loop: per-iteration optimization plus scheduled densify/prune events."""
import csv
import logging
import time
from dataclasses import astuple, dataclass, fields

import numpy as np

from splatkit.adc import (
    ScoreTable,
    accumulate_scores,
    apply_densify,
    sample_views,
    select_densify,
    select_prune,
)
from splatkit.io import scene_extent
from splatkit.losses import psnr, ssim, training_loss
from splatkit.optim import Adam, expon_lr
from splatkit.render import RasterSettings, render, render_backward
from splatkit.scene import logit

log = logging.getLogger(__name__)

RESET_OPACITY = 0.01


@dataclass
class LogRow:
    iteration: int
    loss: float
    psnr: float
    gaussian_count: int
    tile_pairs: int
    elapsed_ms: float


LOG_COLUMNS = [f.name for f in fields(LogRow)]


def write_log_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow(astuple(r))


def is_densify_iteration(it, cfg):
    return cfg.densify and cfg.densify_from <= it <= cfg.densify_until and it % cfg.densify_every == 0


def is_prune_iteration(it, cfg):
    if not cfg.prune:
        return False
    if cfg.densify_from <= it <= cfg.densify_until:
        return it % cfg.prune_every_early == 0
    return it > cfg.densify_until and it % cfg.prune_every_late == 0


def lazy_interval_fn(cfg):
    """Update interval for the SH-rest group, or None when it updates every step."""
    if not cfg.lazy_opt_enabled:
        return None

    def interval(it):
        if it < cfg.lazy_opt_start:
            return None
        return cfg.lazy_opt_interval_15k if it < cfg.lazy_opt_switch else cfg.lazy_opt_interval_20k

    return interval


def raster_settings(cfg):
    return RasterSettings(beta=cfg.beta if cfg.use_cb else None, tau_alpha=cfg.tau_alpha, workers=cfg.workers)


def group_lrs(cfg, it, extent):
    lrs = cfg.lrs
    return {
        "mu": expon_lr(it, lrs["mu"] * extent, lrs["mu_final"] * extent, cfg.iterations),
        "sh_dc": lrs["sh_dc"],
        "sh_rest": lrs["sh_rest"],
        "opacity_logit": lrs["opacity_logit"],
        "log_scale": lrs["log_scale"],
        "rot": lrs["rot"],
    }


class _Trainer:
    def __init__(self, scene, dataset, cfg, callbacks):
        self.cfg = cfg
        self.dtype = np.float64 if cfg.float64 else np.float32
        self.scene = scene.astype(self.dtype)
        self.ds = dataset
        self.gts = [np.asarray(img, dtype=self.dtype) for img in dataset.images]
        self.rng = np.random.default_rng(cfg.seed)
        self.settings = raster_settings(cfg)
        self.extent = scene_extent(dataset.cameras)
        self.adam = Adam(self.scene, lazy_interval_fn(cfg))
        self.table = ScoreTable.zeros(len(self.scene))
        self.callbacks = callbacks or []
        self._order = []

    def emit(self, kind, it, **info):
        for cb in self.callbacks:
            cb(kind, it, info)

    def next_view(self):
        if not self._order:
            self._order = list(self.rng.permutation(self.ds.train_idx))
        return int(self._order.pop())

    def step(self, it, dry_run):
        if dry_run:
            return float("nan"), float("nan"), 0
        idx = self.next_view()
        cam, gt = self.ds.cameras[idx], self.gts[idx]
        view = render(self.scene, cam, self.settings)
        loss, d_img = training_loss(view.image, gt, self.cfg.lam)
        grads, screen = render_backward(self.scene, view, d_img, self.settings)
        self.table.add_view_gradients(view.proj.source_index, view.proj.radius,
                                      screen["d_mean2d"], screen["abs_mean2d"], cam.width, cam.height)
        self.adam.step(self.scene, grads, group_lrs(self.cfg, it, self.extent), it)
        return loss, psnr(view.image, gt), view.pairs

    def event(self, it, densify, prune):
        cfg = self.cfg
        if cfg.use_vcd or cfg.use_vcp:
            picks = sample_views(self.ds.train_idx, cfg.K, self.rng)
            views = [(self.ds.cameras[i], self.gts[i]) for i in picks]
            accumulate_scores(views, self.scene, cfg, self.table, self.settings)
        if densify:
            clone, split = select_densify(self.table, self.scene, cfg, self.extent)
            before = len(self.scene)
            self.scene, origin = apply_densify(self.scene, clone, split, self.rng)
            self.table = self.table.take(origin)
            moment_src = np.full(len(self.scene), -1)
            kept = before - split.size
            moment_src[:kept] = origin[:kept]
            self.adam.remap(moment_src)
            self.emit("densify", it, clone=int(clone.size), split=int(split.size), count=len(self.scene))
        if prune:
            mask = select_prune(self.table, self.scene, it, cfg, self.extent)
            self.scene = self.scene.take(~mask)
            self.adam.remap(None, keep_mask=~mask)
            self.emit("prune", it, pruned=int(mask.sum()), count=len(self.scene))
        self.table = ScoreTable.zeros(len(self.scene))

    def reset_opacity(self):
        cap = logit(RESET_OPACITY)
        self.scene.opacity_logit = np.minimum(self.scene.opacity_logit, cap).astype(self.dtype)
        self.adam.zero_rows("opacity_logit", slice(None))


def run_training(scene, dataset, cfg, callbacks=None, dry_run=False):
    """Optimize ``scene`` against ``dataset``.

    Args:
        scene: initial scene (not modified).
        dataset: training data; must contain at least one training view.
        cfg: :class:`~splatkit.config.TrainConfig`.
        callbacks: callables ``cb(kind, iteration, info)``; kinds are ``"densify"``,
            ``"prune"`` and ``"iteration"``.
        dry_run: skip rendering and parameter updates (zero gradients) while still firing
            every scheduled event; used to check the schedule.

    Returns:
        ``(final_scene, log_rows)``.
    """
    if len(dataset.train_idx) == 0:
        raise ValueError("dataset has no training views")
    tr = _Trainer(scene, dataset, cfg, callbacks)
    rows = []
    start = time.perf_counter()
    for it in range(1, cfg.iterations + 1):
        loss, train_psnr, pairs = tr.step(it, dry_run)
        densify = is_densify_iteration(it, cfg)
        prune = is_prune_iteration(it, cfg)
        if densify or prune:
            tr.event(it, densify, prune)
        if cfg.opacity_reset_every and it % cfg.opacity_reset_every == 0 and it <= cfg.densify_until:
            tr.reset_opacity()
        row = LogRow(it, loss, train_psnr, len(tr.scene), pairs, (time.perf_counter() - start) * 1e3)
        rows.append(row)
        tr.emit("iteration", it, row=row)
        if it % 500 == 0:
            log.info("it %d loss %.5f psnr %.2f n=%d", it, loss, train_psnr, len(tr.scene))
    return tr.scene, rows


def evaluate(scene, dataset, indices, settings=None):
    """Per-view PSNR/SSIM on ``indices``."""
    indices = list(indices)
    if not indices:
        raise ValueError("evaluation split is empty")
    out = []
    for i in indices:
        cam, gt = dataset.view(i)
        img = render(scene, cam, settings).image
        out.append({"view": int(i), "psnr": float(psnr(img, gt)), "ssim": float(ssim(img, gt))})
    return out
