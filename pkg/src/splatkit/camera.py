"""Pinhole cameras and first-order (EWA) projection of 3D Gaussians to the image plane."""
from dataclasses import dataclass, field

import numpy as np

from splatkit.scene import covariance_3d_batch, quat_to_rotmat_backward, sigmoid
from splatkit.sh import eval_sh_colors

COV2D_FLOOR = 0.3
GUARD_BAND = 1.3


@dataclass
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_cam: np.ndarray
    near: float = 0.2
    id: int = 0

    def __post_init__(self):
        self.world_to_cam = np.asarray(self.world_to_cam, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        R = self.world_to_cam[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ValueError("world_to_cam rotation block is not a proper rotation")

    @property
    def rotation(self):
        return self.world_to_cam[:3, :3]

    @property
    def translation(self):
        return self.world_to_cam[:3, 3]

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, width, height, fx, fy=None, up=(0.0, 0.0, 1.0), **kw):
        """Camera at ``eye`` looking at ``target``; camera +z is the viewing direction, +y down."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        W = np.eye(4)
        W[:3, :3] = R
        W[:3, 3] = -R @ eye
        fy = fx if fy is None else fy
        return cls(width, height, fx, fy, width / 2.0, height / 2.0, W, **kw)


@dataclass
class Projected:
    """Per-view 2D Gaussians for the non-culled subset of a scene (struct of arrays).

    ``cov2d`` and ``conic`` hold the symmetric 2x2 entries as (xx, xy, yy).
    """

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    radius: np.ndarray
    source_index: np.ndarray
    num_source: int
    cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.mean2d.shape[0]


def _conic_from_cov(cov2d):
    a, b, c = cov2d[:, 0], cov2d[:, 1], cov2d[:, 2]
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=1)


def radius_from_cov(cov2d):
    a, b, c = cov2d[:, 0], cov2d[:, 1], cov2d[:, 2]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    return np.ceil(3.0 * np.sqrt(lam_max)).astype(np.int64)


def project(scene, cam):
    """Project every Gaussian of ``scene`` into ``cam`` and drop the culled ones."""
    dtype = scene.dtype
    Rw = cam.rotation.astype(dtype)
    tw = cam.translation.astype(dtype)
    t_all = scene.mu @ Rw.T + tw
    z_all = t_all[:, 2]
    keep = z_all > cam.near
    idx = np.nonzero(keep)[0]
    t = t_all[idx]
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = dtype.type(cam.fx), dtype.type(cam.fy)

    scale = np.exp(scene.log_scale[idx])
    cov3d, R, M = covariance_3d_batch(scene.rot[idx], scale)
    V = Rw @ cov3d @ Rw.T
    n = idx.size
    J = np.zeros((n, 2, 3), dtype=dtype)
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)
    S2 = J @ V @ np.swapaxes(J, 1, 2)
    cov2d = np.stack([S2[:, 0, 0] + COV2D_FLOOR, S2[:, 0, 1], S2[:, 1, 1] + COV2D_FLOOR], axis=1)
    mean2d = np.stack([fx * x / z + cam.cx, fy * y / z + cam.cy], axis=1).astype(dtype)
    radius = radius_from_cov(cov2d)

    band = GUARD_BAND * radius
    inside = ((mean2d[:, 0] >= -band) & (mean2d[:, 0] <= cam.width - 1 + band)
              & (mean2d[:, 1] >= -band) & (mean2d[:, 1] <= cam.height - 1 + band))
    sel = np.nonzero(inside)[0]

    idx, t, scale, R, M, V, J = idx[sel], t[sel], scale[sel], R[sel], M[sel], V[sel], J[sel]
    cov2d, mean2d, radius = cov2d[sel], mean2d[sel], radius[sel]

    v = scene.mu[idx] - cam.center.astype(dtype)
    vnorm = np.linalg.norm(v, axis=1, keepdims=True)
    dirs = v / vnorm
    rgb, raw, basis, dbasis = eval_sh_colors(scene.sh[idx], dirs, scene.sh_degree)

    return Projected(
        mean2d=mean2d,
        cov2d=cov2d,
        conic=_conic_from_cov(cov2d),
        depth=t[:, 2].copy(),
        color=rgb,
        opacity=sigmoid(scene.opacity_logit[idx]),
        radius=radius,
        source_index=idx,
        num_source=len(scene),
        cache=dict(t=t, scale=scale, R=R, M=M, V=V, J=J, dirs=dirs, vnorm=vnorm,
                   raw=raw, basis=basis, dbasis=dbasis, Rw=Rw, fx=fx, fy=fy),
    )


def conic_backward(conic, d_conic):
    """dL/dcov2d from dL/dconic; both as (xx, xy, yy), off-diagonal counted once."""
    a, b, c = conic[:, 0], conic[:, 1], conic[:, 2]
    ga, gb, gc = d_conic[:, 0], 0.5 * d_conic[:, 1], d_conic[:, 2]
    # -Q G Q for symmetric Q = [[a, b], [b, c]], G = [[ga, gb], [gb, gc]]
    qg00 = a * ga + b * gb
    qg01 = a * gb + b * gc
    qg10 = b * ga + c * gb
    qg11 = b * gb + c * gc
    r00 = -(qg00 * a + qg01 * b)
    r01 = -(qg00 * b + qg01 * c)
    r11 = -(qg10 * b + qg11 * c)
    return np.stack([r00, 2.0 * r01, r11], axis=1)


def project_backward(scene, proj, d_mean2d, d_cov2d, d_color, d_opacity):
    """Chain per-projected-Gaussian gradients back to the scene parameters.

    Returns a dict of arrays shaped like ``scene.params()``; culled Gaussians get zeros.
    """
    c = proj.cache
    idx = proj.source_index
    t, Rw, J, V, M, R, scale = c["t"], c["Rw"], c["J"], c["V"], c["M"], c["R"], c["scale"]
    fx, fy = c["fx"], c["fy"]
    x, y, z = t[:, 0], t[:, 1], t[:, 2]

    Gs = np.empty((len(idx), 2, 2), dtype=scene.dtype)
    Gs[:, 0, 0] = d_cov2d[:, 0]
    Gs[:, 0, 1] = Gs[:, 1, 0] = 0.5 * d_cov2d[:, 1]
    Gs[:, 1, 1] = d_cov2d[:, 2]
    Jt = np.swapaxes(J, 1, 2)
    dV = Jt @ Gs @ J
    dJ = 2.0 * Gs @ J @ V
    dcov3 = Rw.T @ dV @ Rw
    dM = 2.0 * dcov3 @ M
    d_scale = np.einsum("nrk,nrk->nk", dM, R)
    dR = dM * scale[:, None, :]
    d_rot = quat_to_rotmat_backward(scene.rot[idx], dR)

    z2 = z * z
    z3 = z2 * z
    dt = np.zeros_like(t)
    dt[:, 0] = dJ[:, 0, 2] * (-fx / z2) + d_mean2d[:, 0] * fx / z
    dt[:, 1] = dJ[:, 1, 2] * (-fy / z2) + d_mean2d[:, 1] * fy / z
    dt[:, 2] = (dJ[:, 0, 0] * (-fx / z2) + dJ[:, 0, 2] * (2.0 * fx * x / z3)
                + dJ[:, 1, 1] * (-fy / z2) + dJ[:, 1, 2] * (2.0 * fy * y / z3)
                - d_mean2d[:, 0] * fx * x / z2 - d_mean2d[:, 1] * fy * y / z2)
    d_mu = dt @ Rw

    d_raw = d_color * (c["raw"] > 0)
    basis, dbasis, dirs = c["basis"], c["dbasis"], c["dirs"]
    k = basis.shape[1]
    d_sh_vis = np.zeros_like(scene.sh[idx])
    d_sh_vis[:, :k, :] = basis[:, :, None] * d_raw[:, None, :]
    w = np.einsum("nkc,nc->nk", scene.sh[idx, :k, :], d_raw)
    d_dir = np.einsum("nkd,nk->nd", dbasis, w)
    d_mu += (d_dir - dirs * np.sum(dirs * d_dir, axis=1, keepdims=True)) / c["vnorm"]

    op = proj.opacity
    grads = {name: np.zeros_like(val) for name, val in scene.params().items()}
    grads["mu"][idx] = d_mu
    grads["rot"][idx] = d_rot
    grads["log_scale"][idx] = d_scale * scale
    grads["opacity_logit"][idx] = d_opacity * op * (1.0 - op)
    grads["sh"][idx] = d_sh_vis
    return grads
