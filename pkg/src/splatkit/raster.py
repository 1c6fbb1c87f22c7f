"""Tile binning and depth-ordered alpha compositing (forward and analytic backward).

Gradients are written into one slot per Gaussian-tile pair and reduced afterwards in
pair order, so results do not depend on how tiles are split across worker threads.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
DEFAULT_TILE = 16


@dataclass
class TileGrid:
    """Gaussian-tile assignments; pairs of one tile are contiguous and sorted front to back."""

    width: int
    height: int
    tile_size: int
    tiles_x: int
    tiles_y: int
    tile_start: np.ndarray  # (tiles + 1,)
    pair_gauss: np.ndarray  # (pairs,) projected-Gaussian index

    @property
    def num_tiles(self):
        return self.tiles_x * self.tiles_y

    def assignments(self, tile_id):
        return self.pair_gauss[self.tile_start[tile_id]:self.tile_start[tile_id + 1]]

    def tiles_of(self, g):
        """Tile ids containing projected Gaussian ``g`` (test/debug helper)."""
        tile_of_pair = np.repeat(np.arange(self.num_tiles), np.diff(self.tile_start))
        return set(tile_of_pair[self.pair_gauss == g].tolist())


@dataclass
class RenderOutputs:
    image: np.ndarray
    transmittance: np.ndarray
    contrib_count: np.ndarray
    footprint: np.ndarray | None = None  # per projected Gaussian high-error pixel count


def grid_shape(width, height, tile_size=DEFAULT_TILE):
    return (width + tile_size - 1) // tile_size, (height + tile_size - 1) // tile_size


def compact_threshold(opacity, beta, tau_alpha):
    """Mahalanobis-distance threshold beyond which alpha drops below ``tau_alpha``, scaled by beta."""
    return beta * 2.0 * np.log(np.asarray(opacity, dtype=np.float64) / tau_alpha)


@njit(cache=True)
def _tile_range(m, r, ts, ntiles):
    lo = math.ceil((m - r - (ts - 1)) / ts)
    hi = math.floor((m + r) / ts)
    if lo < 0:
        lo = 0
    if hi > ntiles - 1:
        hi = ntiles - 1
    return lo, hi


@njit(cache=True)
def _rect_min_mahalanobis(mx, my, a, b, c, x0, x1, y0, y1):
    """Minimum of the conic quadratic form over the rectangle [x0,x1] x [y0,y1]."""
    if x0 <= mx <= x1 and y0 <= my <= y1:
        return 0.0
    best = np.inf
    # vertical edges: dx fixed, minimize over dy
    for ex in (x0, x1):
        dx = ex - mx
        dy = -b * dx / c
        dy = min(max(dy, y0 - my), y1 - my)
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        if q < best:
            best = q
    for ey in (y0, y1):
        dy = ey - my
        dx = -b * dy / a
        dx = min(max(dx, x0 - mx), x1 - mx)
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        if q < best:
            best = q
    return best


@njit(cache=True)
def _bin(means2d, conics, radius, thresholds, use_ellipse, ts, tiles_x, tiles_y, width, height, order,
         count_only, out_tile, out_gauss):
    n = 0
    for oi in range(order.shape[0]):
        g = order[oi]
        r = radius[g]
        if r <= 0:
            continue
        mx = means2d[g, 0]
        my = means2d[g, 1]
        tx0, tx1 = _tile_range(mx, r, ts, tiles_x)
        ty0, ty1 = _tile_range(my, r, ts, tiles_y)
        thr = thresholds[g]
        if use_ellipse and thr <= 0.0:
            continue
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                if use_ellipse:
                    q = _rect_min_mahalanobis(mx, my, conics[g, 0], conics[g, 1], conics[g, 2],
                                              tx * ts, min(tx * ts + ts, width) - 1,
                                              ty * ts, min(ty * ts + ts, height) - 1)
                    if q > thr:
                        continue
                if not count_only:
                    out_tile[n] = ty * tiles_x + tx
                    out_gauss[n] = g
                n += 1
    return n


def _depth_order(depth):
    return np.lexsort((np.arange(depth.shape[0]), depth))


def _build_grid(proj, width, height, tile_size, thresholds, use_ellipse):
    tiles_x, tiles_y = grid_shape(width, height, tile_size)
    order = _depth_order(proj.depth)
    empty = np.zeros(0, dtype=np.int64)
    means = np.ascontiguousarray(proj.mean2d, dtype=np.float64)
    conics = np.ascontiguousarray(proj.conic, dtype=np.float64)
    radius = np.ascontiguousarray(proj.radius, dtype=np.int64)
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    n = _bin(means, conics, radius, thresholds, use_ellipse, tile_size, tiles_x, tiles_y, width, height, order,
             True, empty, empty)
    tiles = np.empty(n, dtype=np.int64)
    gauss = np.empty(n, dtype=np.int64)
    _bin(means, conics, radius, thresholds, use_ellipse, tile_size, tiles_x, tiles_y, width, height, order,
         False, tiles, gauss)
    # stable sort by tile keeps the global depth order inside each tile
    perm = np.argsort(tiles, kind="stable")
    counts = np.bincount(tiles, minlength=tiles_x * tiles_y)
    start = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    return TileGrid(width, height, tile_size, tiles_x, tiles_y, start, gauss[perm])


def bin_aabb(proj, width, height, tile_size=DEFAULT_TILE):
    """Tiles overlapping the square 3-sigma box of each projected Gaussian."""
    return _build_grid(proj, width, height, tile_size, np.zeros(len(proj)), False)


def bin_compact(proj, width, height, beta=1.0, tau_alpha=ALPHA_MIN, tile_size=DEFAULT_TILE):
    """Compact-box binning.

    Keeps a tile of the 3-sigma box only if the tile rectangle meets the ellipse on which
    alpha falls to ``tau_alpha`` (its Mahalanobis radius shrunk by ``beta``). Gaussians with
    opacity at or below ``tau_alpha`` get no tiles.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    if not 0.0 < tau_alpha < 1.0:
        raise ValueError("tau_alpha must lie in (0, 1)")
    a, b, c = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    if np.any((a <= 0) | (a * c - b * b <= 0)):
        raise RuntimeError("projected covariance is not positive definite")
    thr = np.where(proj.opacity > tau_alpha,
                   compact_threshold(np.maximum(proj.opacity, tau_alpha), beta, tau_alpha), -1.0)
    return _build_grid(proj, width, height, tile_size, thr, True)


def count_pairs(grid):
    return int(grid.pair_gauss.shape[0])


# packed per-pair feature columns
_MX, _MY, _CA, _CB, _CC, _OP, _R, _G, _B, _CUT = range(10)
# log-space margin for skipping exp(); the exact alpha test decides near the cutoff
_CUT_MARGIN = 1e-6


@njit(cache=True, nogil=True)
def _forward_tiles(t_lo, t_hi, tiles_x, ts, width, height, tile_start, feat, mask, use_mask,
                   pair_count, image, final_t, n_contrib, last_pair):
    for tile in range(t_lo, t_hi):
        tx = tile % tiles_x
        ty = tile // tiles_x
        k0 = tile_start[tile]
        k1 = tile_start[tile + 1]
        for v in range(ty * ts, min(ty * ts + ts, height)):
            for u in range(tx * ts, min(tx * ts + ts, width)):
                T = 1.0
                r = 0.0
                gch = 0.0
                bch = 0.0
                cnt = 0
                last = k0
                for k in range(k0, k1):
                    dx = u - feat[k, _MX]
                    dy = v - feat[k, _MY]
                    power = -0.5 * (feat[k, _CA] * dx * dx + feat[k, _CC] * dy * dy) - feat[k, _CB] * dx * dy
                    if power < feat[k, _CUT] - _CUT_MARGIN:
                        continue
                    alpha = min(ALPHA_MAX, feat[k, _OP] * math.exp(power))
                    if alpha < ALPHA_MIN:
                        continue
                    test_t = T * (1.0 - alpha)
                    if test_t < T_MIN:
                        break
                    w = alpha * T
                    r += feat[k, _R] * w
                    gch += feat[k, _G] * w
                    bch += feat[k, _B] * w
                    T = test_t
                    cnt += 1
                    last = k + 1
                    if use_mask and mask[v, u]:
                        pair_count[k] += 1
                image[v, u, 0] = r
                image[v, u, 1] = gch
                image[v, u, 2] = bch
                final_t[v, u] = T
                n_contrib[v, u] = cnt
                last_pair[v, u] = last


@njit(cache=True, nogil=True)
def _backward_tiles(t_lo, t_hi, tiles_x, ts, width, height, tile_start, feat, d_image, final_t,
                    last_pair, g_mean, g_abs, g_conic, g_color, g_opac):
    for tile in range(t_lo, t_hi):
        tx = tile % tiles_x
        ty = tile // tiles_x
        k0 = tile_start[tile]
        for v in range(ty * ts, min(ty * ts + ts, height)):
            for u in range(tx * ts, min(tx * ts + ts, width)):
                T = final_t[v, u]
                dr = d_image[v, u, 0]
                dg = d_image[v, u, 1]
                db = d_image[v, u, 2]
                acc_r = 0.0
                acc_g = 0.0
                acc_b = 0.0
                last_alpha = 0.0
                last_r = 0.0
                last_g = 0.0
                last_b = 0.0
                for k in range(last_pair[v, u] - 1, k0 - 1, -1):
                    dx = u - feat[k, _MX]
                    dy = v - feat[k, _MY]
                    ca = feat[k, _CA]
                    cb_ = feat[k, _CB]
                    cc = feat[k, _CC]
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb_ * dx * dy
                    if power < feat[k, _CUT] - _CUT_MARGIN:
                        continue
                    gauss = math.exp(power)
                    raw = feat[k, _OP] * gauss
                    alpha = min(ALPHA_MAX, raw)
                    if alpha < ALPHA_MIN:
                        continue
                    T = T / (1.0 - alpha)
                    w = alpha * T
                    g_color[k, 0] += w * dr
                    g_color[k, 1] += w * dg
                    g_color[k, 2] += w * db
                    acc_r = last_alpha * last_r + (1.0 - last_alpha) * acc_r
                    acc_g = last_alpha * last_g + (1.0 - last_alpha) * acc_g
                    acc_b = last_alpha * last_b + (1.0 - last_alpha) * acc_b
                    cr = feat[k, _R]
                    cg = feat[k, _G]
                    cbl = feat[k, _B]
                    last_alpha = alpha
                    last_r = cr
                    last_g = cg
                    last_b = cbl
                    if raw >= ALPHA_MAX:
                        continue
                    d_alpha = T * ((cr - acc_r) * dr + (cg - acc_g) * dg + (cbl - acc_b) * db)
                    g_opac[k] += gauss * d_alpha
                    d_power = raw * d_alpha
                    # power = -0.5 (a dx^2 + c dy^2) - b dx dy,  dx = u - mx
                    gx = d_power * (ca * dx + cb_ * dy)
                    gy = d_power * (cc * dy + cb_ * dx)
                    g_mean[k, 0] += gx
                    g_mean[k, 1] += gy
                    g_abs[k, 0] += abs(gx)
                    g_abs[k, 1] += abs(gy)
                    g_conic[k, 0] += -0.5 * dx * dx * d_power
                    g_conic[k, 1] += -dx * dy * d_power
                    g_conic[k, 2] += -0.5 * dy * dy * d_power


def _tile_chunks(num_tiles, workers):
    workers = max(1, min(workers, num_tiles))
    bounds = np.linspace(0, num_tiles, workers + 1).astype(np.int64)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(workers)]


def _run_chunks(fn, num_tiles, workers):
    chunks = _tile_chunks(num_tiles, workers)
    if len(chunks) == 1:
        fn(*chunks[0])
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for f in [pool.submit(fn, lo, hi) for lo, hi in chunks]:
            f.result()


def _pack_pairs(grid, proj, dtype):
    g = grid.pair_gauss
    feat = np.empty((g.shape[0], 10), dtype=dtype)
    feat[:, _MX:_MY + 1] = proj.mean2d[g]
    feat[:, _CA:_CC + 1] = proj.conic[g]
    op = np.asarray(proj.opacity, dtype=np.float64)[g]
    feat[:, _OP] = op
    feat[:, _R:_B + 1] = proj.color[g]
    with np.errstate(divide="ignore"):
        feat[:, _CUT] = np.log(ALPHA_MIN / op)
    return feat


def blend_forward(grid, proj, mask=None, workers=1, dtype=np.float64):
    """Composite the binned Gaussians front to back.

    When ``mask`` is given, ``RenderOutputs.footprint[i]`` counts mask-on pixels where
    projected Gaussian ``i`` passed the alpha cutoff before the pixel terminated.
    Returns ``(outputs, state)``; ``state`` feeds :func:`blend_backward`.
    """
    H, W = grid.height, grid.width
    feat = _pack_pairs(grid, proj, dtype)
    image = np.zeros((H, W, 3), dtype=dtype)
    final_t = np.ones((H, W), dtype=dtype)
    n_contrib = np.zeros((H, W), dtype=np.int32)
    last_pair = np.zeros((H, W), dtype=np.int64)
    use_mask = mask is not None
    mask_arr = np.ascontiguousarray(mask, dtype=np.bool_) if use_mask else np.zeros((1, 1), dtype=np.bool_)
    pair_count = np.zeros(grid.pair_gauss.shape[0], dtype=np.int64)

    def run(lo, hi):
        _forward_tiles(lo, hi, grid.tiles_x, grid.tile_size, W, H, grid.tile_start, feat, mask_arr, use_mask,
                       pair_count, image, final_t, n_contrib, last_pair)

    _run_chunks(run, grid.num_tiles, workers)
    footprint = None
    if use_mask:
        footprint = np.bincount(grid.pair_gauss, weights=pair_count, minlength=len(proj)).astype(np.int64)
    out = RenderOutputs(image=image, transmittance=final_t, contrib_count=n_contrib, footprint=footprint)
    return out, {"last_pair": last_pair}


@dataclass
class BlendGrads:
    d_mean2d: np.ndarray
    d_conic: np.ndarray
    d_color: np.ndarray
    d_opacity: np.ndarray
    abs_mean2d: np.ndarray  # per-component sum of |dL/dmean2d| over pixels


def blend_backward(grid, proj, outputs, state, d_image, workers=1, dtype=np.float64):
    """Exact gradients of :func:`blend_forward` w.r.t. the projected Gaussian attributes."""
    H, W = grid.height, grid.width
    feat = _pack_pairs(grid, proj, dtype)
    P = grid.pair_gauss.shape[0]
    g_mean = np.zeros((P, 2), dtype=dtype)
    g_abs = np.zeros((P, 2), dtype=dtype)
    g_conic = np.zeros((P, 3), dtype=dtype)
    g_color = np.zeros((P, 3), dtype=dtype)
    g_opac = np.zeros(P, dtype=dtype)
    d_image = np.ascontiguousarray(d_image, dtype=dtype)
    final_t = np.ascontiguousarray(outputs.transmittance, dtype=dtype)

    def run(lo, hi):
        _backward_tiles(lo, hi, grid.tiles_x, grid.tile_size, W, H, grid.tile_start, feat, d_image, final_t,
                        state["last_pair"], g_mean, g_abs, g_conic, g_color, g_opac)

    _run_chunks(run, grid.num_tiles, workers)
    M = len(proj)
    idx = grid.pair_gauss

    def reduce(a):
        if a.ndim == 1:
            return np.bincount(idx, weights=a, minlength=M).astype(dtype)
        return np.stack([np.bincount(idx, weights=a[:, j], minlength=M) for j in range(a.shape[1])],
                        axis=1).astype(dtype)

    return BlendGrads(reduce(g_mean), reduce(g_conic), reduce(g_color), reduce(g_opac), reduce(g_abs))
