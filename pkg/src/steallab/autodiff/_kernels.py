"""Hot inner loops for convolution and resampling.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy version
with identical semantics. ``STEALLAB_NUMBA=0`` in the environment forces the
numpy path; otherwise numba is used when it imports cleanly.

Column layout shared by ``im2col``/``col2im``: row ``n*OH*OW + oh*OW + ow``,
column ``c*KH*KW + i*KW + j``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


def _env_wants_numba() -> bool:
    return os.environ.get("STEALLAB_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = _HAVE_NUMBA and _env_wants_numba()


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def im2col_numpy(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, oh, ow, c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
            cols[:, :, :, :, i, j] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n * oh * ow, c * kh * kw)


def col2im_numpy(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols6 = cols.reshape(n, oh, ow, c, kh, kw)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def _bilinear_weights(size_in: int, size_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers, edge-clamped (align_corners=False convention)
    scale = size_in / size_out
    src = (np.arange(size_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, size_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size_in - 1)
    frac = src - lo
    return lo, hi, frac


def _interp_matrix(size_in: int, size_out: int) -> np.ndarray:
    lo, hi, frac = _bilinear_weights(size_in, size_out)
    m = np.zeros((size_out, size_in))
    rows = np.arange(size_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def upsample_bilinear_numpy(x: np.ndarray, factor: int) -> np.ndarray:
    _, _, h, w = x.shape
    mh = _interp_matrix(h, h * factor)
    mw = _interp_matrix(w, w * factor)
    return np.einsum("ph,nchw,qw->ncpq", mh, x, mw, optimize=True)


def upsample_bilinear_backward_numpy(g: np.ndarray, in_hw: tuple[int, int], factor: int) -> np.ndarray:
    h, w = in_hw
    mh = _interp_matrix(h, h * factor)
    mw = _interp_matrix(w, w * factor)
    return np.einsum("ph,ncpq,qw->nchw", mh, g, mw, optimize=True)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _im2col_nb(x, kh, kw, stride, pad):
        n, c, h, w = x.shape
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (w + 2 * pad - kw) // stride + 1
        cols = np.zeros((n * oh * ow, c * kh * kw))
        for b in range(n):
            for p in range(oh):
                for q in range(ow):
                    row = (b * oh + p) * ow + q
                    for ch in range(c):
                        for i in range(kh):
                            y = p * stride + i - pad
                            if y < 0 or y >= h:
                                continue
                            for j in range(kw):
                                xx = q * stride + j - pad
                                if xx < 0 or xx >= w:
                                    continue
                                cols[row, (ch * kh + i) * kw + j] = x[b, ch, y, xx]
        return cols

    @numba.njit(cache=True)
    def _col2im_nb(cols, n, c, h, w, kh, kw, stride, pad):
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (w + 2 * pad - kw) // stride + 1
        out = np.zeros((n, c, h, w))
        for b in range(n):
            for p in range(oh):
                for q in range(ow):
                    row = (b * oh + p) * ow + q
                    for ch in range(c):
                        for i in range(kh):
                            y = p * stride + i - pad
                            if y < 0 or y >= h:
                                continue
                            for j in range(kw):
                                xx = q * stride + j - pad
                                if xx < 0 or xx >= w:
                                    continue
                                out[b, ch, y, xx] += cols[row, (ch * kh + i) * kw + j]
        return out

    @numba.njit(cache=True)
    def _bilinear_fwd_nb(x, lo_h, hi_h, fr_h, lo_w, hi_w, fr_w):
        n, c, _, _ = x.shape
        oh = lo_h.shape[0]
        ow = lo_w.shape[0]
        out = np.empty((n, c, oh, ow))
        for b in range(n):
            for ch in range(c):
                for p in range(oh):
                    a0 = lo_h[p]
                    a1 = hi_h[p]
                    fa = fr_h[p]
                    for q in range(ow):
                        b0 = lo_w[q]
                        b1 = hi_w[q]
                        fb = fr_w[q]
                        top = x[b, ch, a0, b0] * (1.0 - fb) + x[b, ch, a0, b1] * fb
                        bot = x[b, ch, a1, b0] * (1.0 - fb) + x[b, ch, a1, b1] * fb
                        out[b, ch, p, q] = top * (1.0 - fa) + bot * fa
        return out

    @numba.njit(cache=True)
    def _bilinear_bwd_nb(g, h, w, lo_h, hi_h, fr_h, lo_w, hi_w, fr_w):
        n, c, oh, ow = g.shape
        out = np.zeros((n, c, h, w))
        for b in range(n):
            for ch in range(c):
                for p in range(oh):
                    a0 = lo_h[p]
                    a1 = hi_h[p]
                    fa = fr_h[p]
                    for q in range(ow):
                        b0 = lo_w[q]
                        b1 = hi_w[q]
                        fb = fr_w[q]
                        v = g[b, ch, p, q]
                        out[b, ch, a0, b0] += v * (1.0 - fa) * (1.0 - fb)
                        out[b, ch, a0, b1] += v * (1.0 - fa) * fb
                        out[b, ch, a1, b0] += v * fa * (1.0 - fb)
                        out[b, ch, a1, b1] += v * fa * fb
        return out


def im2col_numba(x, kh, kw, stride, pad):
    return _im2col_nb(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride, pad)


def col2im_numba(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    return _col2im_nb(np.ascontiguousarray(cols, dtype=np.float64), n, c, h, w, kh, kw, stride, pad)


def upsample_bilinear_numba(x, factor):
    _, _, h, w = x.shape
    lh, hh, fh = _bilinear_weights(h, h * factor)
    lw, hw, fw = _bilinear_weights(w, w * factor)
    return _bilinear_fwd_nb(np.ascontiguousarray(x, dtype=np.float64), lh, hh, fh, lw, hw, fw)


def upsample_bilinear_backward_numba(g, in_hw, factor):
    h, w = in_hw
    lh, hh, fh = _bilinear_weights(h, h * factor)
    lw, hw, fw = _bilinear_weights(w, w * factor)
    return _bilinear_bwd_nb(np.ascontiguousarray(g, dtype=np.float64), h, w, lh, hh, fh, lw, hw, fw)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def im2col(x, kh, kw, stride=1, pad=0):
    if USE_NUMBA:
        return im2col_numba(x, kh, kw, stride, pad)
    return im2col_numpy(x, kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride=1, pad=0):
    if USE_NUMBA:
        return col2im_numba(cols, x_shape, kh, kw, stride, pad)
    return col2im_numpy(cols, x_shape, kh, kw, stride, pad)


def upsample_bilinear(x, factor):
    if USE_NUMBA:
        return upsample_bilinear_numba(x, factor)
    return upsample_bilinear_numpy(x, factor)


def upsample_bilinear_backward(g, in_hw, factor):
    if USE_NUMBA:
        return upsample_bilinear_backward_numba(g, in_hw, factor)
    return upsample_bilinear_backward_numpy(g, in_hw, factor)
