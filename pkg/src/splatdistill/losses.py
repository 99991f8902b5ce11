"""Image losses with analytic gradients: L1, SSIM / D-SSIM, their blend,
the distillation objective, and PSNR.

The SSIM filter is an 11x11 Gaussian window (sigma 1.5) applied separably
with reflect padding; the backward pass uses the exact adjoint of that
padded filter rather than pretending the filter is self-adjoint at borders.
"""

import math
import numpy as np
from scipy.ndimage import correlate1d

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_HALF = SSIM_WINDOW // 2


def _gaussian_window():
    x = np.arange(SSIM_WINDOW, dtype=np.float64) - _HALF
    k = np.exp(-(x ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return k / k.sum()

_KERNEL = _gaussian_window()


def _filter2d(img):
    """Separable windowed mean over the two leading axes, reflect-padded."""
    out = correlate1d(img, _KERNEL, axis=0, mode="reflect")
    return correlate1d(out, _KERNEL, axis=1, mode="reflect")


def _conv_full(arr, axis):
    """Full 1D convolution with the window along `axis`: length grows by 2*_HALF."""
    n = arr.shape[axis]
    shape = list(arr.shape)
    shape[axis] = n + 2 * _HALF
    out = np.zeros(shape, dtype=np.float64)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    for t in range(SSIM_WINDOW):
        dst[axis] = slice(t, t + n)
        out[tuple(dst)] += _KERNEL[t] * arr
    return out


def _fold_reflect(arr, axis):
    """Adjoint of symmetric padding: fold the 2*_HALF border samples back in."""
    n = arr.shape[axis] - 2 * _HALF
    idx = [slice(None)] * arr.ndim

    idx[axis] = slice(_HALF, _HALF + n)
    core = arr[tuple(idx)].copy()

    idx[axis] = slice(None, _HALF)
    left = arr[tuple(idx)]
    idx[axis] = slice(_HALF + n, None)
    right = arr[tuple(idx)]

    flip = [slice(None)] * arr.ndim
    flip[axis] = slice(None, None, -1)
    dst = [slice(None)] * core.ndim
    dst[axis] = slice(None, _HALF)
    core[tuple(dst)] += left[tuple(flip)]
    dst[axis] = slice(n - _HALF, None)
    core[tuple(dst)] += right[tuple(flip)]
    return core


def _filter2d_adjoint(grad):
    """Exact adjoint of _filter2d (transpose of pad-then-correlate, per axis)."""
    out = _fold_reflect(_conv_full(grad, axis=1), axis=1)
    return _fold_reflect(_conv_full(out, axis=0), axis=0)


def l1_loss(pred, target):
    """Mean absolute error and its subgradient w.r.t. pred (sign(0) taken as 0)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


def _ssim_parts(pred, target):
    mu_p = _filter2d(pred)
    mu_t = _filter2d(target)
    e_pp = _filter2d(pred * pred)
    e_tt = _filter2d(target * target)
    e_pt = _filter2d(pred * target)
    var_p = e_pp - mu_p * mu_p
    var_t = e_tt - mu_t * mu_t
    cov = e_pt - mu_p * mu_t
    a1 = 2.0 * mu_p * mu_t + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = mu_p * mu_p + mu_t * mu_t + SSIM_C1
    b2 = var_p + var_t + SSIM_C2
    return mu_p, mu_t, a1, a2, b1, b2


def ssim(pred, target):
    """Mean structural similarity over all pixels and channels.

    Expects (H, W) or (H, W, C) images with H, W >= 11.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if min(pred.shape[0], pred.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"image sides must be >= {SSIM_WINDOW}")
    _, _, a1, a2, b1, b2 = _ssim_parts(pred, target)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def dssim_loss(pred, target):
    """Structural dissimilarity (1 - SSIM)/2 and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if min(pred.shape[0], pred.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"image sides must be >= {SSIM_WINDOW}")

    mu_p, mu_t, a1, a2, b1, b2 = _ssim_parts(pred, target)
    denom = b1 * b2
    ssim_map = a1 * a2 / denom
    loss = float((1.0 - np.mean(ssim_map)) / 2.0)

    # dL/dssim_map is constant; push through the rational map to the three
    # filtered moments that depend on pred, then apply the filter adjoint.
    gmap = np.full(ssim_map.shape, -0.5 / ssim_map.size)
    g_mu = gmap * (2.0 * mu_t * (a2 - a1) - ssim_map * 2.0 * mu_p * (b2 - b1)) / denom
    g_epp = gmap * (-ssim_map) / b2
    g_ept = gmap * 2.0 * a1 / denom

    grad = (
        _filter2d_adjoint(g_mu)
        + _filter2d_adjoint(g_epp) * 2.0 * pred
        + _filter2d_adjoint(g_ept) * target
    )
    return loss, grad


def color_loss(pred, target, lambda_dssim: float = 0.2):
    """(1 - w) * L1 + w * D-SSIM photometric loss; returns (value, grad wrt pred)."""
    l1, g1 = l1_loss(pred, target)
    if lambda_dssim == 0.0:
        return l1, g1
    ds, gs = dssim_loss(pred, target)
    value = (1.0 - lambda_dssim) * l1 + lambda_dssim * ds
    grad = (1.0 - lambda_dssim) * g1 + lambda_dssim * gs
    return value, grad


def kd_loss(pred, target, pseudo, lambda_kd: float = 1.0, lambda_dssim: float = 0.2):
    """Distillation objective: photometric loss to ground truth plus a weighted
    photometric loss to the fused teacher pseudo-label. Returns (value, grad)."""
    lg, gg = color_loss(pred, target, lambda_dssim)
    lp, gp = color_loss(pred, pseudo, lambda_dssim)
    return lg + lambda_kd * lp, gg + lambda_kd * gp


def psnr(pred, target):
    """Peak signal-to-noise ratio in dB for [0, 1] images; inf for identical inputs."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
