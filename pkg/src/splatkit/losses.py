"""Image losses and metrics: L1, SSIM (with analytic gradient), the training loss, PSNR."""
import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 100.0


def _check_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _gauss_1d(dtype):
    x = np.arange(SSIM_WINDOW, dtype=np.float64) - SSIM_WINDOW // 2
    g = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return (g / g.sum()).astype(dtype)


def _blur(img, kernel):
    # zero-padded 'same' correlation over the two spatial axes; symmetric kernel => self-adjoint
    out = correlate1d(img, kernel, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)


def ssim(a, b, return_grad=False):
    """Mean SSIM over pixels and channels of two H x W x C images in [0, 1].

    With ``return_grad`` also returns dSSIM/da.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    k = _gauss_1d(a.dtype)
    mu_a = _blur(a, k)
    mu_b = _blur(b, k)
    s_aa = _blur(a * a, k) - mu_a * mu_a
    s_bb = _blur(b * b, k) - mu_b * mu_b
    s_ab = _blur(a * b, k) - mu_a * mu_b
    A1 = 2 * mu_a * mu_b + SSIM_C1
    A2 = 2 * s_ab + SSIM_C2
    B1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    B2 = s_aa + s_bb + SSIM_C2
    smap = (A1 * A2) / (B1 * B2)
    value = float(smap.mean())
    if not return_grad:
        return value
    n = smap.size
    d_saa = -smap / B2
    d_sab = 2 * A1 / (B1 * B2)
    d_mu = 2 * mu_b * A2 / (B1 * B2) - smap * 2 * mu_a / B1
    # s_aa and s_ab depend on mu_a too
    d_mu = d_mu - 2 * mu_a * d_saa - mu_b * d_sab
    grad = (_blur(d_mu, k) + 2 * a * _blur(d_saa, k) + b * _blur(d_sab, k)) / n
    return value, grad


def l1(a, b):
    a, b = _check_pair(a, b)
    return float(np.abs(a - b).mean())


def training_loss(rendered, gt, lam=0.2):
    """(1 - lam) * L1 + lam * (1 - SSIM) and its gradient w.r.t. ``rendered``."""
    rendered, gt = _check_pair(rendered, gt)
    diff = rendered - gt
    l1_val = float(np.abs(diff).mean())
    s, ds = ssim(rendered, gt, return_grad=True)
    loss = (1 - lam) * l1_val + lam * (1 - s)
    grad = (1 - lam) * np.sign(diff) / diff.size - lam * ds.reshape(rendered.shape)
    return loss, grad.astype(rendered.dtype)


def psnr(a, b):
    a, b = _check_pair(a, b)
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
