"""Image containers and the shared numeric primitives.

Bicubic resampling, Sobel gradient magnitude and windowed SSIM all work
on plain 2-D float arrays; the containers add validation and metadata.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CUBIC_A = -0.5


# --- containers ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DepthMap:
    """Single-channel depth in [0, 1] with a validity mask.

    ``unit_scale`` is the number of raw units (e.g. millimetres) that
    correspond to 1.0.
    """

    values: np.ndarray
    valid_mask: np.ndarray = None
    unit_scale: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError(f"depth must be a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("depth values must be finite")
        mask = self.valid_mask
        mask = np.ones(values.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise ValueError(f"valid_mask shape {mask.shape} != values shape {values.shape}")
        v = values[mask]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("valid depth values must lie in [0, 1]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid_mask", mask)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class ColorImage:
    """Three-channel guidance image, ``values`` shaped (H, W, 3) in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != 3:
            raise ValueError(f"color image must be (H, W, 3), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("color values must be finite")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("color values must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape[:2]

    def luma(self):
        return self.values @ np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    values: np.ndarray
    name: str = field(default="")

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"feature map must be (C, H, W) with positive dims, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"feature map {self.name!r} has non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]


# --- bicubic ------------------------------------------------------------

def cubic_kernel(d, a=CUBIC_A):
    """Keys cubic convolution kernel evaluated at offsets ``d``."""
    d = np.abs(np.asarray(d, dtype=np.float64))
    d2 = d * d
    d3 = d2 * d
    near = (a + 2.0) * d3 - (a + 3.0) * d2 + 1.0
    far = a * d3 - 5.0 * a * d2 + 8.0 * a * d - 4.0 * a
    return np.where(d <= 1.0, near, np.where(d < 2.0, far, 0.0))


def _taps(n_in, n_out):
    scale = n_in / n_out
    x = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(x).astype(np.int64)
    offs = np.arange(-1, 3)
    pos = base[:, None] + offs[None, :]
    weights = cubic_kernel(x[:, None] - pos)
    return np.clip(pos, 0, n_in - 1), weights


def _resample_axis(src, n_out, axis):
    idx, wts = _taps(src.shape[axis], n_out)
    moved = np.moveaxis(src, axis, -1)
    gathered = moved[..., idx]  # (..., n_out, 4)
    anchor = gathered[..., 1]
    # anchored form keeps constant inputs exact
    out = anchor + ((gathered - anchor[..., None]) * wts).sum(axis=-1)
    return np.moveaxis(out, -1, axis)


def bicubic_resample(src, out_h, out_w):
    """Separable cubic-convolution resize (a=-0.5, half-pixel centres, edge clamp).

    The result is not clipped.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {src.shape}")
    if src.shape[0] < 2 or src.shape[1] < 2:
        raise ValueError(f"source must be at least 2x2, got {src.shape}")
    if int(out_h) < 1 or int(out_w) < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    if not np.all(np.isfinite(src)):
        raise ValueError("bicubic_resample input contains non-finite values")
    if (out_h, out_w) == src.shape:
        return src.copy()
    tmp = _resample_axis(src, int(out_h), 0)
    return _resample_axis(tmp, int(out_w), 1)


# --- sobel --------------------------------------------------------------

_SOBEL_1D = {
    3: (np.array([1.0, 2.0, 1.0]), np.array([-1.0, 0.0, 1.0])),
    5: (np.array([1.0, 4.0, 6.0, 4.0, 1.0]), np.array([-1.0, -2.0, 0.0, 2.0, 1.0])),
}


def sobel_kernels(k=5):
    """Return ``(kx, ky)``: horizontal and vertical derivative kernels."""
    if k not in _SOBEL_1D:
        raise ValueError(f"Sobel kernel size must be 3 or 5, got {k}")
    smooth, deriv = _SOBEL_1D[k]
    kx = np.outer(smooth, deriv)
    return kx, kx.T.copy()


def _smooth_valid(p, vec, axis):
    k = vec.shape[0]
    n = p.shape[axis] - k + 1
    p = np.moveaxis(p, axis, 0)
    out = sum(vec[t] * p[t:t + n] for t in range(k))
    return np.moveaxis(out, 0, axis)


def _diff_valid(p, vec, axis):
    # antisymmetric taps as paired differences: exact zero on flat regions
    k = vec.shape[0]
    r = k // 2
    n = p.shape[axis] - k + 1
    p = np.moveaxis(p, axis, 0)
    out = sum(vec[r + j] * (p[r + j:r + j + n] - p[r - j:r - j + n]) for j in range(1, r + 1))
    return np.moveaxis(out, 0, axis)


def sobel_gradients(img, k=5):
    """Edge-clamped Sobel responses ``(gx, gy)`` with the input's shape."""
    img = np.asarray(img, dtype=np.float64)
    if k % 2 == 0 or k not in _SOBEL_1D:
        raise ValueError(f"Sobel kernel size must be 3 or 5, got {k}")
    if img.ndim != 2 or img.shape[0] < k or img.shape[1] < k:
        raise ValueError(f"image {img.shape} is smaller than the {k}x{k} kernel")
    smooth, deriv = _SOBEL_1D[k]
    padded = np.pad(img, k // 2, mode="edge")
    gx = _diff_valid(_smooth_valid(padded, smooth, 0), deriv, 1)
    gy = _diff_valid(_smooth_valid(padded, smooth, 1), deriv, 0)
    return gx, gy


def sobel_magnitude(img, k=5):
    """L1 gradient magnitude ``|gx| + |gy|``."""
    gx, gy = sobel_gradients(img, k)
    return np.abs(gx) + np.abs(gy)


def sobel_adjoint(gx_grad, gy_grad, k=5):
    """Adjoint of :func:`sobel_gradients`, mapping output grads to the image."""
    kx, ky = sobel_kernels(k)
    r = k // 2
    h, w = gx_grad.shape
    gp = np.zeros((h + 2 * r, w + 2 * r))
    for i in range(k):
        for j in range(k):
            gp[i:i + h, j:j + w] += kx[i, j] * gx_grad + ky[i, j] * gy_grad
    # fold the edge-clamped border back onto the edge pixels
    gp[r, :] += gp[:r, :].sum(axis=0)
    gp[-r - 1, :] += gp[-r:, :].sum(axis=0)
    gp[:, r] += gp[:, :r].sum(axis=1)
    gp[:, -r - 1] += gp[:, -r:].sum(axis=1)
    return gp[r:-r, r:-r]


# --- ssim ---------------------------------------------------------------

def gaussian_window_1d(k=11, sigma=1.5):
    x = np.arange(k) - (k - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_window(k=11, sigma=1.5):
    g = gaussian_window_1d(k, sigma)
    return np.outer(g, g)


def _filter_valid(img, g):
    k = g.shape[0]
    tmp = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(tmp, k, axis=1) @ g


def _filter_full(img, g):
    """Adjoint of :func:`_filter_valid` for a symmetric window."""
    k = g.shape[0]
    return _filter_valid(np.pad(img, k - 1), g[::-1])


def default_constants(dynamic_range=1.0):
    return (0.01 * dynamic_range) ** 2, (0.03 * dynamic_range) ** 2


def _check_pair(a, b, k):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if k % 2 == 0:
        raise ValueError(f"window size must be odd, got {k}")
    if a.ndim != 2 or a.shape[0] < k or a.shape[1] < k:
        raise ValueError(f"images {a.shape} are smaller than the {k}x{k} window")
    return a, b


def _ssim_terms(a, b, k, c1, c2):
    g = gaussian_window_1d(k)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num1 = 2.0 * mu_a * mu_b + c1
    num2 = 2.0 * cov + c2
    den1 = mu_a * mu_a + mu_b * mu_b + c1
    den2 = var_a + var_b + c2
    return g, mu_a, mu_b, num1, num2, den1, den2


def ssim_map(a, b, k=11, c1=None, c2=None):
    """Per-window SSIM over valid window positions (Gaussian window, sigma 1.5)."""
    d1, d2 = default_constants()
    c1 = d1 if c1 is None else c1
    c2 = d2 if c2 is None else c2
    a, b = _check_pair(a, b, k)
    _, _, _, num1, num2, den1, den2 = _ssim_terms(a, b, k, c1, c2)
    return (num1 * num2) / (den1 * den2)


def ssim_mean(a, b, k=11, c1=None, c2=None):
    return float(ssim_map(a, b, k, c1, c2).mean())


def ssim_mean_grad(a, b, k=11, c1=None, c2=None):
    """Mean SSIM and its gradient with respect to ``a``."""
    d1, d2 = default_constants()
    c1 = d1 if c1 is None else c1
    c2 = d2 if c2 is None else c2
    a, b = _check_pair(a, b, k)
    g, mu_a, mu_b, num1, num2, den1, den2 = _ssim_terms(a, b, k, c1, c2)
    smap = (num1 * num2) / (den1 * den2)
    n = smap.size
    den = den1 * den2
    d_mu = (2.0 * mu_b * num2 / den - 2.0 * mu_a * smap / den1) / n
    d_var = -smap / den2 / n
    d_cov = 2.0 * num1 / den / n
    grad = (_filter_full(d_mu - 2.0 * mu_a * d_var - mu_b * d_cov, g)
            + 2.0 * a * _filter_full(d_var, g)
            + b * _filter_full(d_cov, g))
    return float(smap.mean()), grad
