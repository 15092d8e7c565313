"""Hot convolution kernels: im2col gather and col2im scatter-add.

Two implementations exist for each kernel. The numba ones are compiled with
``@njit``; the numpy ones are vectorised over the kernel window. Both visit
contributions to an output pixel in the same (ki, kj) order, so col2im gives
bitwise-identical results whichever path is active.

Set ``BINFOGAN_NUMBA=0`` to force the pure-numpy path.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("BINFOGAN_NUMBA", "1") != "0"


def im2col_numpy(xp, kh, kw, stride, oh, ow):
    """Gather sliding windows of a padded ``(N, C, Hp, Wp)`` array.

    Returns ``(N, C*kh*kw, oh*ow)`` with rows ordered (c, ki, kj).
    """
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        i_end = i + stride * oh
        for j in range(kw):
            j_end = j + stride * ow
            cols[:, :, i, j] = xp[:, :, i:i_end:stride, j:j_end:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def col2im_numpy(cols, c, hp, wp, kh, kw, stride, oh, ow):
    """Scatter-add columns back into a padded ``(N, C, Hp, Wp)`` array."""
    n = cols.shape[0]
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        i_end = i + stride * oh
        for j in range(kw):
            j_end = j + stride * ow
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    return out


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _im2col_nb(xp, kh, kw, stride, oh, ow):
        n, c = xp.shape[0], xp.shape[1]
        cols = np.empty((n, c * kh * kw, oh * ow), dtype=xp.dtype)
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(oh):
                            yy = y * stride + i
                            for x in range(ow):
                                cols[b, row, y * ow + x] = xp[b, ch, yy, x * stride + j]
        return cols

    @numba.njit(cache=True)
    def _col2im_nb(cols, c, hp, wp, kh, kw, stride, oh, ow):
        n = cols.shape[0]
        out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        row = (ch * kh + i) * kw + j
                        for y in range(oh):
                            yy = y * stride + i
                            for x in range(ow):
                                out[b, ch, yy, x * stride + j] += cols[b, row, y * ow + x]
        return out

    def im2col_numba(xp, kh, kw, stride, oh, ow):
        return _im2col_nb(np.ascontiguousarray(xp), kh, kw, stride, oh, ow)

    def col2im_numba(cols, c, hp, wp, kh, kw, stride, oh, ow):
        return _col2im_nb(np.ascontiguousarray(cols), c, hp, wp, kh, kw, stride, oh, ow)

else:  # pragma: no cover
    im2col_numba = im2col_numpy
    col2im_numba = col2im_numpy


def im2col(xp, kh, kw, stride, oh, ow):
    if USE_NUMBA:
        return im2col_numba(xp, kh, kw, stride, oh, ow)
    return im2col_numpy(xp, kh, kw, stride, oh, ow)


def col2im(cols, c, hp, wp, kh, kw, stride, oh, ow):
    if USE_NUMBA:
        return col2im_numba(cols, c, hp, wp, kh, kw, stride, oh, ow)
    return col2im_numpy(cols, c, hp, wp, kh, kw, stride, oh, ow)


def backend():
    return "numba" if USE_NUMBA else "numpy"
