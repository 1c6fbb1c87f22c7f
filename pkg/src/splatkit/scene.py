"""Gaussian scene representation, activations and 3D covariance construction."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from splatkit.sh import num_coeffs, rgb_to_dc

INIT_OPACITY = 0.1
_SINGLE_POINT_SCALE = 0.01


class InvalidParameterError(ValueError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p)
    return np.log(p / (1.0 - p))


def quat_to_rotmat(q):
    """(N, 4) quaternions in w,x,y,z order -> (N, 3, 3) rotation matrices.

    Quaternions are normalized here; callers pass raw parameters.
    """
    q = np.asarray(q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q, dR):
    """Gradient of a loss w.r.t. the raw quaternion given dL/dR."""
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2]
              - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
              - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    dy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
              + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    dz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
              - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    dqn = np.stack([dw, dx, dy, dz], axis=-1)
    # project out the radial component of the normalization
    return (dqn - qn * np.sum(qn * dqn, axis=-1, keepdims=True)) / norm


def covariance_3d_batch(rot, scale):
    """Batched R S S^T R^T; also returns R and M = R S for the backward pass."""
    R = quat_to_rotmat(rot)
    M = R * scale[:, None, :]
    return M @ np.swapaxes(M, -1, -2), R, M


def covariance_3d(rot, scale):
    """Covariance of a single Gaussian from a quaternion (w,x,y,z) and positive scales."""
    rot = np.asarray(rot, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(scale))):
        raise InvalidParameterError("non-finite rotation or scale")
    if np.any(scale <= 0):
        raise InvalidParameterError("scale must be strictly positive")
    if np.linalg.norm(rot) == 0:
        raise InvalidParameterError("zero quaternion")
    cov, _, _ = covariance_3d_batch(rot[None], scale[None])
    return cov[0]


@dataclass
class Gaussian3D:
    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh: np.ndarray


@dataclass
class Scene:
    """Struct-of-arrays container; parameters are stored pre-activation.

    Attributes:
        mu: (N, 3) world positions.
        rot: (N, 4) quaternions, w,x,y,z.
        log_scale: (N, 3).
        opacity_logit: (N,).
        sh: (N, (deg+1)**2, 3) SH coefficients, DC first.
        sh_degree: fixed per scene.
    """

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    sh_degree: int = 3

    PARAMS = ("mu", "rot", "log_scale", "opacity_logit", "sh")

    def __len__(self):
        return self.mu.shape[0]

    @property
    def dtype(self):
        return self.mu.dtype

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    def params(self):
        return {name: getattr(self, name) for name in self.PARAMS}

    def copy(self):
        return Scene(**{k: v.copy() for k, v in self.params().items()}, sh_degree=self.sh_degree)

    def astype(self, dtype):
        return Scene(**{k: v.astype(dtype) for k, v in self.params().items()}, sh_degree=self.sh_degree)

    def take(self, index):
        return Scene(**{k: v[index] for k, v in self.params().items()}, sh_degree=self.sh_degree)

    def gaussian(self, i):
        return Gaussian3D(self.mu[i].copy(), self.rot[i].copy(), self.log_scale[i].copy(),
                          float(self.opacity_logit[i]), self.sh[i].copy())

    @classmethod
    def concat(cls, scenes):
        first = scenes[0]
        return cls(**{k: np.concatenate([getattr(s, k) for s in scenes]) for k in cls.PARAMS},
                   sh_degree=first.sh_degree)

    @classmethod
    def from_gaussians(cls, gaussians, sh_degree):
        return cls(
            mu=np.array([g.mu for g in gaussians], dtype=np.float64),
            rot=np.array([g.rot for g in gaussians], dtype=np.float64),
            log_scale=np.array([g.log_scale for g in gaussians], dtype=np.float64),
            opacity_logit=np.array([g.opacity_logit for g in gaussians], dtype=np.float64),
            sh=np.array([g.sh for g in gaussians], dtype=np.float64),
            sh_degree=sh_degree,
        )


def init_from_points(positions, colors, sh_degree=3, dtype=np.float64):
    """One isotropic Gaussian per point.

    The scale is the mean distance to the three nearest neighbours (fewer when the
    cloud has fewer points); opacity starts at 0.1 and rotation at identity.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    n = positions.shape[0]
    if n == 0:
        raise ValueError("cannot initialize a scene from an empty point set")
    if colors.shape[0] != n:
        raise ValueError(f"{n} positions but {colors.shape[0]} colors")
    k = min(3, n - 1)
    if k == 0:
        dist = np.full(n, _SINGLE_POINT_SCALE)
    else:
        d, _ = cKDTree(positions).query(positions, k=k + 1)
        dist = np.maximum(d[:, 1:].mean(axis=1), 1e-7)
    sh = np.zeros((n, num_coeffs(sh_degree), 3))
    sh[:, 0, :] = rgb_to_dc(colors)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    scene = Scene(
        mu=positions.copy(),
        rot=rot,
        log_scale=np.repeat(np.log(dist)[:, None], 3, axis=1),
        opacity_logit=np.full(n, float(logit(INIT_OPACITY))),
        sh=sh,
        sh_degree=sh_degree,
    )
    return scene.astype(dtype)
