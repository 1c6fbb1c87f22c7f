"""Real spherical-harmonics color basis (degrees 0..3) with analytic direction derivatives.

Coefficient layout follows the usual splatting convention: index 0 is the DC term,
indices 1..3 degree one, 4..8 degree two, 9..15 degree three.
"""
import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def num_coeffs(degree):
    return (degree + 1) ** 2


def rgb_to_dc(rgb):
    return (np.asarray(rgb) - 0.5) / SH_C0


def dc_to_rgb(dc):
    return np.asarray(dc) * SH_C0 + 0.5


def sh_basis(dirs, degree):
    """Basis values and their gradients w.r.t. the (unnormalized) direction components.

    Args:
        dirs: (N, 3) unit directions.
        degree: maximum SH degree, 0..3.

    Returns:
        (basis, dbasis): arrays of shape (N, K) and (N, K, 3), K = (degree+1)**2.
    """
    dirs = np.asarray(dirs)
    n = dirs.shape[0]
    k = num_coeffs(degree)
    basis = np.zeros((n, k), dtype=dirs.dtype)
    grad = np.zeros((n, k, 3), dtype=dirs.dtype)
    basis[:, 0] = SH_C0
    if degree < 1:
        return basis, grad
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis[:, 1] = -SH_C1 * y
    basis[:, 2] = SH_C1 * z
    basis[:, 3] = -SH_C1 * x
    grad[:, 1, 1] = -SH_C1
    grad[:, 2, 2] = SH_C1
    grad[:, 3, 0] = -SH_C1
    if degree < 2:
        return basis, grad
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    basis[:, 4] = SH_C2[0] * xy
    basis[:, 5] = SH_C2[1] * yz
    basis[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    basis[:, 7] = SH_C2[3] * xz
    basis[:, 8] = SH_C2[4] * (xx - yy)
    grad[:, 4, 0] = SH_C2[0] * y
    grad[:, 4, 1] = SH_C2[0] * x
    grad[:, 5, 1] = SH_C2[1] * z
    grad[:, 5, 2] = SH_C2[1] * y
    grad[:, 6, 0] = -2.0 * SH_C2[2] * x
    grad[:, 6, 1] = -2.0 * SH_C2[2] * y
    grad[:, 6, 2] = 4.0 * SH_C2[2] * z
    grad[:, 7, 0] = SH_C2[3] * z
    grad[:, 7, 2] = SH_C2[3] * x
    grad[:, 8, 0] = 2.0 * SH_C2[4] * x
    grad[:, 8, 1] = -2.0 * SH_C2[4] * y
    if degree < 3:
        return basis, grad
    basis[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    basis[:, 10] = SH_C3[1] * xy * z
    basis[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    basis[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    basis[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    basis[:, 14] = SH_C3[5] * z * (xx - yy)
    basis[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    grad[:, 9, 0] = SH_C3[0] * 6.0 * xy
    grad[:, 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
    grad[:, 10, 0] = SH_C3[1] * yz
    grad[:, 10, 1] = SH_C3[1] * xz
    grad[:, 10, 2] = SH_C3[1] * xy
    grad[:, 11, 0] = SH_C3[2] * (-2.0 * xy)
    grad[:, 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
    grad[:, 11, 2] = SH_C3[2] * 8.0 * yz
    grad[:, 12, 0] = SH_C3[3] * (-6.0 * xz)
    grad[:, 12, 1] = SH_C3[3] * (-6.0 * yz)
    grad[:, 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    grad[:, 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
    grad[:, 13, 1] = SH_C3[4] * (-2.0 * xy)
    grad[:, 13, 2] = SH_C3[4] * 8.0 * xz
    grad[:, 14, 0] = SH_C3[5] * 2.0 * xz
    grad[:, 14, 1] = SH_C3[5] * (-2.0 * yz)
    grad[:, 14, 2] = SH_C3[5] * (xx - yy)
    grad[:, 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
    grad[:, 15, 1] = SH_C3[6] * (-6.0 * xy)
    return basis, grad


def eval_sh_colors(sh, dirs, degree):
    """Evaluate colors for many Gaussians.

    Returns ``(rgb, raw, basis, dbasis)`` where ``raw`` is the color before the
    clamp at zero; callers need it to route gradients.
    """
    basis, dbasis = sh_basis(dirs, degree)
    k = basis.shape[1]
    raw = np.einsum("nk,nkc->nc", basis, sh[:, :k, :]) + 0.5
    return np.maximum(raw, 0.0), raw, basis, dbasis


def evaluate_sh(sh, view_dir, degree):
    """Single-Gaussian SH color: ``sh`` is (K, 3), ``view_dir`` a unit 3-vector."""
    sh = np.asarray(sh, dtype=np.float64)
    d = np.asarray(view_dir, dtype=np.float64).reshape(1, 3)
    if not (np.all(np.isfinite(sh)) and np.all(np.isfinite(d))):
        raise ValueError("non-finite SH coefficients or view direction")
    if sh.shape[0] < num_coeffs(degree):
        raise ValueError(f"degree {degree} needs {num_coeffs(degree)} coefficients, got {sh.shape[0]}")
    rgb, _, _, _ = eval_sh_colors(sh[None], d, degree)
    return rgb[0]
