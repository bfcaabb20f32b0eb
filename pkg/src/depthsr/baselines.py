"""Classical comparators: plain bicubic and guided-filter upsampling."""
import numpy as np

from .imaging import DepthMap, bicubic_resample


def bicubic_sr(sample):
    h, w = sample.hr_color.shape
    up = bicubic_resample(sample.lr_depth.values, h, w)
    return DepthMap(np.clip(up, 0.0, 1.0), unit_scale=sample.lr_depth.unit_scale)


def box_mean(img, radius):
    """Mean over the (2r+1)^2 window, truncated at the image border."""
    h, w = img.shape
    c = np.zeros((h + 1, w + 1))
    c[1:, 1:] = np.cumsum(np.cumsum(img, axis=0), axis=1)
    y0 = np.clip(np.arange(h) - radius, 0, h)
    y1 = np.clip(np.arange(h) + radius + 1, 0, h)
    x0 = np.clip(np.arange(w) - radius, 0, w)
    x1 = np.clip(np.arange(w) + radius + 1, 0, w)
    s = c[y1][:, x1] - c[y0][:, x1] - c[y1][:, x0] + c[y0][:, x0]
    n = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return s / n


def guided_filter(guide, src, radius=8, eps=1e-4):
    """Gray-guide guided filter."""
    guide = np.asarray(guide, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    if guide.shape != src.shape:
        raise ValueError(f"guide {guide.shape} and source {src.shape} differ")
    if radius < 1 or not eps > 0:
        raise ValueError("radius must be >= 1 and eps > 0")
    side = 2 * radius + 1
    if min(src.shape) < side:
        raise ValueError(f"image {src.shape} is smaller than the {side}x{side} window")
    mean_i = box_mean(guide, radius)
    mean_p = box_mean(src, radius)
    cov = box_mean(guide * src, radius) - mean_i * mean_p
    var = box_mean(guide * guide, radius) - mean_i * mean_i
    a = cov / (var + eps)
    b = mean_p - a * mean_i
    return box_mean(a, radius) * guide + box_mean(b, radius)


def guided_filter_sr(sample, radius=8, eps=1e-4):
    h, w = sample.hr_color.shape
    up = bicubic_resample(sample.lr_depth.values, h, w)
    out = guided_filter(sample.hr_color.luma(), up, radius, eps)
    return DepthMap(np.clip(out, 0.0, 1.0), unit_scale=sample.lr_depth.unit_scale)
