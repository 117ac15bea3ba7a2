"""Pure numpy versions of the compiled kernels.

Outputs are bitwise identical to ``_native``: the accumulation order in
``col2im`` and the arithmetic in ``resize_bilinear_u8`` mirror the C loops.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride, out_h, out_w):
    n_img, chans = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * out_h : stride, : stride * out_w : stride]
    # (N, C, Ho, Wo, k, k) -> (C, k, k, N, Ho, Wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(
        chans * k * k, n_img * out_h * out_w
    )


def col2im(cols, n_img, chans, hp, wp, k, stride, out_h, out_w):
    d = cols.reshape(chans, k, k, n_img, out_h, out_w)
    out = np.zeros((n_img, chans, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += d[
                :, i, j
            ].transpose(1, 0, 2, 3)
    return out


def _axis_coords(roi, out):
    scale = roi / out
    src = np.clip((np.arange(out) + 0.5) * scale - 0.5, 0.0, roi - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, roi - 1)
    return i0, i1, src - i0


def resize_bilinear_u8(src, y0, x0, roi_h, roi_w, out_h, out_w):
    win = src[y0 : y0 + roi_h, x0 : x0 + roi_w].astype(np.float64)
    iy0, iy1, fy = _axis_coords(roi_h, out_h)
    ix0, ix1, fx = _axis_coords(roi_w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    rows0 = win[iy0]
    rows1 = win[iy1]
    top = (1.0 - fx) * rows0[:, ix0] + fx * rows0[:, ix1]
    bot = (1.0 - fx) * rows1[:, ix0] + fx * rows1[:, ix1]
    v = (1.0 - fy) * top + fy * bot
    r = np.floor(v)
    r += (v - r) >= 0.5
    return np.clip(r, 0.0, 255.0).astype(np.uint8)
