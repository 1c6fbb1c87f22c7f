import math

import numpy as np
import pytest

from splatkit.camera import Camera
from splatkit.scene import Scene, logit
from splatkit.sh import num_coeffs


def make_scene(rng, n, sh_degree=1, spread=0.5, scale=(0.05, 0.15), opacity=(0.1, 0.35)):
    """Random float64 scene around the origin.

    The default opacity range keeps 2 ln(opacity * 255) below 9, so every pixel with
    alpha >= 1/255 lies inside the 3-sigma box.
    """
    return Scene(
        mu=rng.uniform(-spread, spread, (n, 3)),
        rot=rng.normal(size=(n, 4)),
        log_scale=np.log(rng.uniform(*scale, (n, 3))),
        opacity_logit=logit(rng.uniform(*opacity, n)),
        sh=rng.normal(0, 0.4, (n, num_coeffs(sh_degree), 3)),
        sh_degree=sh_degree,
    )


def make_camera(width=32, height=32, fx=40.0, eye=(0.3, -3.0, 0.5)):
    return Camera.look_at(eye, (0.0, 0.0, 0.0), width, height, fx)


def brute_force_render(proj, width, height, mask=None):
    """Untiled reference compositor: every pixel visits every projected Gaussian.

    Gaussians are taken in ascending depth with index tie-breaks; cutoffs match the
    tiled renderer (alpha cap 0.99, skip below 1/255, stop before T would drop below 1e-4).
    """
    order = sorted(range(len(proj)), key=lambda i: (proj.depth[i], i))
    image = np.zeros((height, width, 3))
    final_t = np.ones((height, width))
    counts = np.zeros(len(proj), dtype=np.int64)
    for v in range(height):
        for u in range(width):
            T = 1.0
            r = g = b = 0.0
            for i in order:
                mx, my = proj.mean2d[i]
                ca, cb, cc = proj.conic[i]
                dx = u - mx
                dy = v - my
                power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                alpha = min(0.99, proj.opacity[i] * math.exp(power))
                if alpha < 1.0 / 255.0:
                    continue
                if T * (1.0 - alpha) < 1e-4:
                    break
                w = alpha * T
                r += proj.color[i, 0] * w
                g += proj.color[i, 1] * w
                b += proj.color[i, 2] * w
                T = T * (1.0 - alpha)
                if mask is not None and mask[v, u]:
                    counts[i] += 1
            image[v, u] = (r, g, b)
            final_t[v, u] = T
    return image, final_t, counts


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` w.r.t. every entry of array ``x`` (in place)."""
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def rel_err(analytic, numeric):
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_proj(means, covs, opacity, colors=None, depth=None):
    """Projected Gaussians from explicit 2D means and (xx, xy, yy) covariances."""
    from splatkit.camera import Projected, radius_from_cov

    means = np.asarray(means, float).reshape(-1, 2)
    covs = np.asarray(covs, float).reshape(-1, 3)
    n = means.shape[0]
    a, b, c = covs.T
    det = a * c - b * b
    return Projected(
        mean2d=means,
        cov2d=covs,
        conic=np.stack([c / det, -b / det, a / det], 1),
        depth=np.arange(1.0, n + 1) if depth is None else np.asarray(depth, float),
        color=np.full((n, 3), 0.5) if colors is None else np.asarray(colors, float).reshape(n, 3),
        opacity=np.broadcast_to(np.asarray(opacity, float), (n,)).copy(),
        radius=radius_from_cov(covs),
        source_index=np.arange(n),
        num_source=n,
    )
