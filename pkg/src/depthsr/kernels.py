"""Hot convolution and pooling kernels (NCHW layout).

Every kernel has a numba implementation and a pure-numpy one with the
same contract.  The active backend defaults to numba when available and
can be forced with ``DEPTHSR_DISABLE_NUMBA=1`` or :func:`set_backend`.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import HAVE_NUMBA, USE_NUMBA, njit, prange

_backend = "numba" if USE_NUMBA else "numpy"


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` for subsequent kernel calls."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


# --- numpy path ---------------------------------------------------------

def _conv_fwd_np(xp, w, b):
    k = w.shape[2]
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,C,H,W,k,k
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N,H,W,O
    out = out.transpose(0, 3, 1, 2)
    out += b[None, :, None, None]
    return np.ascontiguousarray(out)


def _conv_wgrad_np(xp, gout, k):
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.tensordot(gout, cols, axes=([0, 2, 3], [0, 2, 3]))


def _maxpool_fwd_np(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def _maxpool_bwd_np(gout, idx):
    n, c, h2, w2 = gout.shape
    g = np.zeros((n, c, h2, w2, 4), dtype=gout.dtype)
    np.put_along_axis(g, idx[..., None].astype(np.intp), gout[..., None], axis=-1)
    g = g.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return g.reshape(n, c, 2 * h2, 2 * w2)


# --- numba path ---------------------------------------------------------

@njit(parallel=True, cache=True)
def _conv_fwd_nb(xp, w, b):
    n_img, n_in, hp, wp = xp.shape
    n_out, _, k, _ = w.shape
    h = hp - k + 1
    wd = wp - k + 1
    out = np.empty((n_img, n_out, h, wd), dtype=xp.dtype)
    for job in prange(n_img * n_out):
        n = job // n_out
        o = job % n_out
        plane = out[n, o]
        plane[:, :] = b[o]
        for c in range(n_in):
            src = xp[n, c]
            for ky in range(k):
                for kx in range(k):
                    wv = w[o, c, ky, kx]
                    if wv == 0.0:
                        continue
                    for y in range(h):
                        row = src[y + ky]
                        for x in range(wd):
                            plane[y, x] += wv * row[x + kx]
    return out


# fastmath lets the scalar reduction vectorize; still deterministic run to run
@njit(parallel=True, cache=True, fastmath=True)
def _conv_wgrad_nb(xp, gout, k):
    n_img, n_in, hp, wp = xp.shape
    n_out = gout.shape[1]
    h = hp - k + 1
    wd = wp - k + 1
    gw = np.zeros((n_out, n_in, k, k), dtype=xp.dtype)
    for job in prange(n_out * n_in):
        o = job // n_in
        c = job % n_in
        for ky in range(k):
            for kx in range(k):
                acc = 0.0
                for n in range(n_img):
                    g = gout[n, o]
                    src = xp[n, c]
                    for y in range(h):
                        for x in range(wd):
                            acc += g[y, x] * src[y + ky, x + kx]
                gw[o, c, ky, kx] = acc
    return gw


@njit(parallel=True, cache=True)
def _maxpool_fwd_nb(x):
    n_img, n_ch, h, w = x.shape
    h2 = h // 2
    w2 = w // 2
    out = np.empty((n_img, n_ch, h2, w2), dtype=x.dtype)
    idx = np.empty((n_img, n_ch, h2, w2), dtype=np.int8)
    for job in prange(n_img * n_ch):
        n = job // n_ch
        c = job % n_ch
        for y in range(h2):
            for xx in range(w2):
                best = x[n, c, 2 * y, 2 * xx]
                arg = 0
                for j in range(1, 4):
                    v = x[n, c, 2 * y + j // 2, 2 * xx + j % 2]
                    if v > best:
                        best = v
                        arg = j
                out[n, c, y, xx] = best
                idx[n, c, y, xx] = arg
    return out, idx


@njit(parallel=True, cache=True)
def _maxpool_bwd_nb(gout, idx):
    n_img, n_ch, h2, w2 = gout.shape
    g = np.zeros((n_img, n_ch, 2 * h2, 2 * w2), dtype=gout.dtype)
    for job in prange(n_img * n_ch):
        n = job // n_ch
        c = job % n_ch
        for y in range(h2):
            for x in range(w2):
                j = idx[n, c, y, x]
                g[n, c, 2 * y + j // 2, 2 * x + j % 2] = gout[n, c, y, x]
    return g


# --- public dispatch ----------------------------------------------------

def conv2d(x, w, b):
    """Zero-padded 'same' cross-correlation: ``(N,C,H,W) -> (N,O,H,W)``."""
    xp = _pad(x, w.shape[2] // 2)
    if _backend == "numba":
        return _conv_fwd_nb(xp, w, b)
    return _conv_fwd_np(xp, w, b)


def conv2d_backward(x, w, gout):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv2d`."""
    k = w.shape[2]
    p = k // 2
    w_adj = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zero = np.zeros(w.shape[1], dtype=w.dtype)
    xp = _pad(x, p)
    gp = _pad(gout, p)
    if _backend == "numba":
        gw = _conv_wgrad_nb(xp, np.ascontiguousarray(gout), k)
        gx = _conv_fwd_nb(gp, w_adj, zero)
    else:
        gw = _conv_wgrad_np(xp, gout, k)
        gx = _conv_fwd_np(gp, w_adj, zero)
    gb = gout.sum(axis=(0, 2, 3))
    return gx, gw, gb


def maxpool2(x):
    """2x2 stride-2 max pooling; returns ``(out, argmax_index)``."""
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"max-pool needs even spatial dims, got {x.shape[2:]}")
    if _backend == "numba":
        return _maxpool_fwd_nb(np.ascontiguousarray(x))
    return _maxpool_fwd_np(x)


def maxpool2_backward(gout, idx):
    if _backend == "numba":
        return _maxpool_bwd_nb(np.ascontiguousarray(gout), idx)
    return _maxpool_bwd_np(gout, idx)


def upsample2(x):
    """Nearest-neighbour 2x upsampling."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(gout):
    n, c, h, w = gout.shape
    return gout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def conv_transpose2(x, w, b):
    """Stride-2, 2x2-kernel transposed convolution; ``w`` is ``(C,O,2,2)``.

    Numpy only on both backends: it is a single BLAS contraction.
    """
    n, _, h, wd = x.shape
    out = np.tensordot(x, w, axes=([1], [0]))  # n,h,w,o,i,j
    out = out.transpose(0, 3, 1, 4, 2, 5).reshape(n, w.shape[1], 2 * h, 2 * wd)
    out += b[None, :, None, None]
    return out


def conv_transpose2_backward(x, w, gout):
    n, o, h2, w2 = gout.shape
    g = gout.reshape(n, o, h2 // 2, 2, w2 // 2, 2)
    gx = np.tensordot(g, w, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)  # n,h,w,c
    gw = np.tensordot(x, g, axes=([0, 2, 3], [0, 2, 4]))  # c,o,i,j
    return np.ascontiguousarray(gx), gw, gout.sum(axis=(0, 2, 3))
