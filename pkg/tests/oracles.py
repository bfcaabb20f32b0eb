"""Slow, independent reference implementations used by the tests.

These loop over pixels and windows explicitly and share no code with the
package beyond numpy.
"""
import math

import numpy as np


def keys(d, a=-0.5):
    d = abs(d)
    if d <= 1.0:
        return (a + 2) * d ** 3 - (a + 3) * d ** 2 + 1
    if d < 2.0:
        return a * d ** 3 - 5 * a * d ** 2 + 8 * a * d - 4 * a
    return 0.0


def bicubic_scalar(src, out_h, out_w, a=-0.5):
    """Direct sum of w(dy) w(dx) src over the 4x4 clamped neighbourhood."""
    h, w = src.shape
    sy, sx = h / out_h, w / out_w
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        y = (i + 0.5) * sy - 0.5
        y0 = math.floor(y)
        for j in range(out_w):
            x = (j + 0.5) * sx - 0.5
            x0 = math.floor(x)
            acc = 0.0
            for m in range(y0 - 1, y0 + 3):
                wy = keys(y - m, a)
                mm = min(max(m, 0), h - 1)
                for n in range(x0 - 1, x0 + 3):
                    nn = min(max(n, 0), w - 1)
                    acc += wy * keys(x - n, a) * src[mm, nn]
            out[i, j] = acc
    return out


def sobel5():
    s = [1, 4, 6, 4, 1]
    d = [-1, -2, 0, 2, 1]
    kx = [[s[i] * d[j] for j in range(5)] for i in range(5)]
    ky = [[kx[j][i] for j in range(5)] for i in range(5)]
    return np.array(kx, float), np.array(ky, float)


def sobel_magnitude_dense(img, kx, ky):
    """Cross-correlation with explicit edge clamping, one pixel at a time."""
    h, w = img.shape
    r = kx.shape[0] // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            gx = gy = 0.0
            for i in range(-r, r + 1):
                for j in range(-r, r + 1):
                    v = img[min(max(y + i, 0), h - 1), min(max(x + j, 0), w - 1)]
                    gx += kx[i + r, j + r] * v
                    gy += ky[i + r, j + r] * v
            out[y, x] = abs(gx) + abs(gy)
    return out


def ssim_windows(a, b, k=11, sigma=1.5, c1=1e-4, c2=9e-4):
    """Mean SSIM computed window by window with a 2-D Gaussian."""
    ax = np.arange(k) - (k - 1) / 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    h, w = a.shape
    vals = []
    for y in range(h - k + 1):
        for x in range(w - k + 1):
            pa = a[y:y + k, x:x + k]
            pb = b[y:y + k, x:x + k]
            ma = (g * pa).sum()
            mb = (g * pb).sum()
            va = (g * (pa - ma) ** 2).sum()
            vb = (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2)
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def central_difference(f, x, step=1e-4):
    """Numerical gradient of scalar ``f`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        fp = f(x)
        x[idx] = old - step
        fm = f(x)
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * step)
    return grad


def patch_enumeration(h, w, size, stride):
    """Count top-left corners by walking the grid."""
    n = 0
    for r in range(0, h, stride):
        for c in range(0, w, stride):
            if r + size <= h and c + size <= w:
                n += 1
    return n
