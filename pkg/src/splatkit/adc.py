"""Multi-view consistent densification and pruning.

Each event renders K sampled training views, marks high-error pixels on the min-max
normalized L1 map, and counts for every Gaussian the marked pixels it actually blended
into. Those counts drive densification (averaged count above ``tau_d``) and pruning
(photometric-loss-weighted count, min-max normalized).
"""
import csv
from dataclasses import dataclass, fields

import numpy as np

from splatkit.losses import ssim
from splatkit.render import footprint_counts, render
from splatkit.scene import Scene, quat_to_rotmat

SPLIT_CHILDREN = 2
SPLIT_SHRINK = 0.8 * SPLIT_CHILDREN
# normalized errors within this of tau count as ties (not marked) despite rounding
MASK_TIE_EPS = 1e-9


def minmax_normalize(x):
    """(x - min) / (max - min); all zeros when the range is degenerate."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


@dataclass
class ErrorMaps:
    raw: np.ndarray
    normalized: np.ndarray
    mask: np.ndarray
    photometric: float


def build_error_maps(rendered, ground_truth, tau=0.5, lam=0.2):
    rendered = np.asarray(rendered, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if rendered.shape != ground_truth.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {ground_truth.shape}")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    absdiff = np.abs(rendered - ground_truth)
    raw = absdiff.mean(axis=-1) if absdiff.ndim == 3 else absdiff
    normalized = minmax_normalize(raw)
    photometric = (1 - lam) * float(absdiff.mean()) + lam * (1 - ssim(rendered, ground_truth))
    return ErrorMaps(raw=raw, normalized=normalized, mask=normalized > tau + MASK_TIE_EPS,
                     photometric=max(photometric, 0.0))


@dataclass
class ScoreTable:
    s_d: np.ndarray
    s_p_raw: np.ndarray
    s_p: np.ndarray
    grad_norm_acc: np.ndarray
    abs_grad_acc: np.ndarray
    views_seen: np.ndarray
    max_radii2d: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(*(np.zeros(n) for _ in range(5)), np.zeros(n, dtype=np.int64), np.zeros(n))

    def __len__(self):
        return self.s_d.shape[0]

    def take(self, index):
        return ScoreTable(*(getattr(self, f.name)[index] for f in fields(self)))

    def add_view_gradients(self, source_index, radius, d_mean2d, abs_mean2d, width, height):
        """Accumulate one training view's screen-space positional gradients.

        Gradients come in pixel units and are rescaled to normalized device coordinates
        so thresholds stay comparable across image sizes.
        """
        ndc = np.array([0.5 * width, 0.5 * height])
        vis = source_index[radius > 0]
        self.grad_norm_acc[vis] += np.linalg.norm(d_mean2d[vis] * ndc, axis=1)
        self.abs_grad_acc[vis] += np.linalg.norm(abs_mean2d[vis] * ndc, axis=1)
        self.views_seen[vis] += 1
        np.maximum.at(self.max_radii2d, vis, radius[radius > 0].astype(np.float64))

    def mean_grads(self):
        seen = np.maximum(self.views_seen, 1)
        return self.grad_norm_acc / seen, self.abs_grad_acc / seen

    def to_csv(self, path):
        grad, absg = self.mean_grads()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "s_d", "s_p_raw", "s_p", "grad_norm_acc", "abs_grad_acc",
                        "views_seen", "mean_grad", "mean_abs_grad"])
            for i in range(len(self)):
                w.writerow([i, repr(float(self.s_d[i])), repr(float(self.s_p_raw[i])), repr(float(self.s_p[i])),
                            repr(float(self.grad_norm_acc[i])), repr(float(self.abs_grad_acc[i])),
                            int(self.views_seen[i]), repr(float(grad[i])), repr(float(absg[i]))])


def sample_views(train_indices, K, rng):
    train_indices = np.asarray(train_indices)
    if train_indices.size == 0:
        raise ValueError("no training views to sample from")
    if train_indices.size <= K:
        return train_indices.copy()
    return rng.choice(train_indices, size=K, replace=False)


def scores_from_counts(counts, photometric):
    """Combine per-view footprint counts into ``(s_d, s_p_raw, s_p)``.

    Args:
        counts: ``(K, N)`` high-error pixel counts per sampled view and Gaussian.
        photometric: ``(K,)`` photometric loss of each sampled view.
    """
    counts = np.asarray(counts, dtype=np.float64)
    photometric = np.asarray(photometric, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] == 0:
        raise ValueError("need counts from at least one view")
    s_d = counts.mean(axis=0)
    s_p_raw = photometric @ counts
    return s_d, s_p_raw, minmax_normalize(s_p_raw)


def accumulate_scores(views, scene, cfg, table=None, settings=None):
    """Fill the densify and prune scores of ``table`` from the sampled ``views``.

    Args:
        views: sequence of ``(camera, ground_truth_image)`` pairs.
        scene: current scene.
        cfg: object with ``tau`` and ``lam``.
        table: table to fill; a fresh one when omitted.
        settings: raster settings for the renders.
    """
    if len(views) == 0:
        raise ValueError("no training views to score")
    n = len(scene)
    table = table if table is not None else ScoreTable.zeros(n)
    counts = np.zeros((len(views), n))
    photometric = np.zeros(len(views))
    for k, (cam, gt) in enumerate(views):
        plain = render(scene, cam, settings)
        maps = build_error_maps(plain.image, gt, cfg.tau, cfg.lam)
        counted = render(scene, cam, settings, mask=maps.mask)
        counts[k] = footprint_counts(counted, n)
        photometric[k] = maps.photometric
    table.s_d, table.s_p_raw, table.s_p = scores_from_counts(counts, photometric)
    return table


def select_densify(table, scene, cfg, scene_extent):
    """Return ``(clone_idx, split_idx)``; the sets are disjoint."""
    grad, absg = table.mean_grads()
    max_scale = np.exp(scene.log_scale).max(axis=1)
    small = max_scale <= cfg.percent_dense * scene_extent
    split_grad = absg if cfg.abs_grad_split else grad
    clone = small & (grad >= cfg.grad_threshold)
    split = ~small & (split_grad >= cfg.grad_threshold)
    if cfg.use_vcd:
        strong = table.s_d > cfg.tau_d
        clone &= strong
        split &= strong
    return np.nonzero(clone)[0], np.nonzero(split)[0]


def apply_densify(scene, clone_idx, split_idx, rng):
    """Clone and split; returns ``(new_scene, origin)`` with ``origin[j]`` the source row of row ``j``.

    Split parents are removed and replaced by two children drawn from the parent's own
    distribution with scales divided by 1.6.
    """
    clone_idx = np.asarray(clone_idx, dtype=np.int64)
    split_idx = np.asarray(split_idx, dtype=np.int64)
    if np.intersect1d(clone_idx, split_idx).size:
        raise ValueError("clone and split sets overlap")
    n = len(scene)
    keep = np.ones(n, dtype=bool)
    keep[split_idx] = False
    parts = [scene.take(keep), scene.take(clone_idx)]
    origin = [np.nonzero(keep)[0], clone_idx]
    if split_idx.size:
        parent = scene.take(np.repeat(split_idx, SPLIT_CHILDREN))
        scale = np.exp(parent.log_scale.astype(np.float64))
        R = quat_to_rotmat(parent.rot.astype(np.float64))
        offsets = rng.normal(0.0, 1.0, size=scale.shape) * scale
        parent.mu = (parent.mu + np.einsum("nij,nj->ni", R, offsets)).astype(scene.dtype)
        parent.log_scale = np.log(scale / SPLIT_SHRINK).astype(scene.dtype)
        parts.append(parent)
        origin.append(np.repeat(split_idx, SPLIT_CHILDREN))
    return Scene.concat(parts), np.concatenate(origin)


def vanilla_prune_candidates(table, scene, iteration, cfg, scene_extent):
    cand = scene.opacity < cfg.min_opacity
    if iteration > cfg.size_prune_after:
        big_screen = table.max_radii2d > cfg.max_screen_size
        big_world = np.exp(scene.log_scale).max(axis=1) > cfg.big_world_fraction * scene_extent
        cand |= big_screen | big_world
    return cand


def select_prune(table, scene, iteration, cfg, scene_extent):
    """Boolean prune mask over the scene; never selects every Gaussian."""
    n = len(scene)
    if not cfg.use_vcp:
        prune = vanilla_prune_candidates(table, scene, iteration, cfg, scene_extent)
    elif iteration < cfg.densify_until:
        cand = np.nonzero(vanilla_prune_candidates(table, scene, iteration, cfg, scene_extent))[0]
        # highest scores first, ties by lower index
        order = cand[np.lexsort((cand, -table.s_p[cand]))]
        prune = np.zeros(n, dtype=bool)
        prune[order[: (order.size + 1) // 2]] = True
    else:
        prune = (scene.opacity < cfg.late_min_opacity) | (table.s_p > cfg.tau_p)
    if n and prune.all():
        keep = np.lexsort((np.arange(n), table.s_p))[0]
        prune[keep] = False
    return prune
