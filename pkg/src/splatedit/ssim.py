"""SSIM with an 11x11 Gaussian window (sigma 1.5) and its analytic gradient.

Statistics are computed with a separable valid-region correlation, so values
match reference implementations that crop the filter-radius border. The
gradient is with respect to the second image and flows through the local
mean, variance, and covariance terms.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve1d

WINDOW = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03
_RADIUS = WINDOW // 2


def _kernel() -> np.ndarray:
    x = np.arange(-_RADIUS, _RADIUS + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / SIGMA) ** 2)
    return k / k.sum()


_K = _kernel()


def _filt(img: np.ndarray) -> np.ndarray:
    """Separable valid correlation with the Gaussian window."""
    out = convolve1d(img, _K, axis=0, mode="constant")
    out = convolve1d(out, _K, axis=1, mode="constant")
    return out[_RADIUS:-_RADIUS, _RADIUS:-_RADIUS]


def _filt_adjoint(grad: np.ndarray, shape) -> np.ndarray:
    """Transpose of _filt: zero-embed the valid region, then correlate."""
    full = np.zeros(shape)
    full[_RADIUS:-_RADIUS, _RADIUS:-_RADIUS] = grad
    full = convolve1d(full, _K, axis=0, mode="constant")
    return convolve1d(full, _K, axis=1, mode="constant")


def _channel_stats(x, y):
    c1 = K1 * K1
    c2 = K2 * K2
    mx = _filt(x)
    my = _filt(y)
    sxx = _filt(x * x) - mx * mx
    syy = _filt(y * y) - my * my
    sxy = _filt(x * y) - mx * my
    a1 = 2 * mx * my + c1
    a2 = 2 * sxy + c2
    b1 = mx * mx + my * my + c1
    b2 = sxx + syy + c2
    return mx, my, a1, a2, b1, b2


def _as_channels(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[:, :, None]
    return img


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean structural similarity; masked variant averages the SSIM map
    under the mask (restricted to the valid interior)."""
    a = _as_channels(a)
    b = _as_channels(b)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    if min(a.shape[0], a.shape[1]) < WINDOW:
        raise ValueError(f"images must be at least {WINDOW}x{WINDOW}")
    vals = []
    for c in range(a.shape[2]):
        _, _, a1, a2, b1, b2 = _channel_stats(a[:, :, c], b[:, :, c])
        smap = (a1 * a2) / (b1 * b2)
        if mask is not None:
            inner = np.asarray(mask, bool)[_RADIUS:-_RADIUS, _RADIUS:-_RADIUS]
            if not inner.any():
                raise ValueError("mask empty within the valid interior")
            vals.append(float(smap[inner].mean()))
        else:
            vals.append(float(smap.mean()))
    return float(np.mean(vals))


def d_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural dissimilarity (1 - SSIM) / 2; zero iff images identical."""
    return (1.0 - ssim(a, b)) / 2.0


def ssim_and_grad(a: np.ndarray, b: np.ndarray):
    """(ssim value, d ssim / d b). Gradient has b's shape."""
    a = _as_channels(a)
    b = _as_channels(b)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    h, w, nch = a.shape
    vals = []
    grad = np.zeros_like(b)
    npix = (h - 2 * _RADIUS) * (w - 2 * _RADIUS) * nch
    for c in range(nch):
        x = a[:, :, c]
        y = b[:, :, c]
        mx, my, a1, a2, b1, b2 = _channel_stats(x, y)
        denom = b1 * b2
        smap = (a1 * a2) / denom
        vals.append(float(smap.mean()))
        # partials w.r.t. the filtered quantities G*y, G*(y^2), G*(x*y);
        # the mean partial already carries the variance/covariance chains
        g_my = (2 * mx * (a2 - a1)) / denom - smap * 2 * my * (b2 - b1) / denom
        g_sy2 = -smap / b2
        g_sxy = 2 * a1 / denom
        grad[:, :, c] = (_filt_adjoint(g_my, (h, w))
                         + 2 * y * _filt_adjoint(g_sy2, (h, w))
                         + x * _filt_adjoint(g_sxy, (h, w)))
    grad /= npix
    return float(np.mean(vals)), grad


def d_ssim_and_grad(a: np.ndarray, b: np.ndarray):
    """((1 - SSIM)/2, its gradient w.r.t. b)."""
    value, grad = ssim_and_grad(a, b)
    return (1.0 - value) / 2.0, -0.5 * grad
