"""Full view rendering: projection, binning, compositing, and the matching backward pass."""
from dataclasses import dataclass

import numpy as np

from splatkit.camera import conic_backward, project, project_backward
from splatkit.raster import (
    ALPHA_MIN,
    DEFAULT_TILE,
    bin_aabb,
    bin_compact,
    blend_backward,
    blend_forward,
    count_pairs,
)


@dataclass
class RasterSettings:
    """``beta=None`` selects 3-sigma box binning; a float selects the compact box."""

    beta: float | None = None
    tau_alpha: float = ALPHA_MIN
    tile_size: int = DEFAULT_TILE
    workers: int = 1


@dataclass
class ViewRender:
    outputs: object
    proj: object
    grid: object
    state: dict

    @property
    def image(self):
        return self.outputs.image

    @property
    def pairs(self):
        return count_pairs(self.grid)


def bin_view(proj, cam, settings):
    if settings.beta is None:
        return bin_aabb(proj, cam.width, cam.height, settings.tile_size)
    return bin_compact(proj, cam.width, cam.height, settings.beta, settings.tau_alpha, settings.tile_size)


def render(scene, cam, settings=None, mask=None):
    settings = settings or RasterSettings()
    proj = project(scene, cam)
    grid = bin_view(proj, cam, settings)
    outputs, state = blend_forward(grid, proj, mask=mask, workers=settings.workers, dtype=scene.dtype)
    return ViewRender(outputs, proj, grid, state)


def footprint_counts(view, scene_size):
    """Scatter the per-projected-Gaussian footprint counts back to scene indices."""
    counts = np.zeros(scene_size, dtype=np.int64)
    if view.outputs.footprint is not None:
        counts[view.proj.source_index] = view.outputs.footprint
    return counts


def render_backward(scene, view, d_image, settings=None):
    """Parameter gradients of a loss with pixel gradient ``d_image``.

    Returns ``(grads, screen)`` where ``screen`` holds the per-scene-Gaussian 2D mean gradient
    and per-component absolute gradient sums, in pixel units.
    """
    settings = settings or RasterSettings()
    bg = blend_backward(view.grid, view.proj, view.outputs, view.state, d_image,
                        workers=settings.workers, dtype=scene.dtype)
    d_cov2d = conic_backward(view.proj.conic, bg.d_conic)
    grads = project_backward(scene, view.proj, bg.d_mean2d, d_cov2d, bg.d_color, bg.d_opacity)
    n = len(scene)
    d_mean2d = np.zeros((n, 2), dtype=scene.dtype)
    abs_mean2d = np.zeros((n, 2), dtype=scene.dtype)
    d_mean2d[view.proj.source_index] = bg.d_mean2d
    abs_mean2d[view.proj.source_index] = bg.abs_mean2d
    return grads, {"d_mean2d": d_mean2d, "abs_mean2d": abs_mean2d}
