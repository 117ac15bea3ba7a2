# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: patch extraction for convolution and u8 bilinear resampling.

Every routine here has a numpy twin in ``_fallback`` that produces bitwise
identical output; keep the floating-point expression order in sync.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] xp, int k, int stride, int out_h, int out_w):
    """Unfold padded ``(N, C, Hp, Wp)`` into ``(C*k*k, N*out_h*out_w)``."""
    cdef Py_ssize_t n_img = xp.shape[0], chans = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t n, c, i, j, h, w
    dtype = np.float32 if floating is float else np.float64
    cols_arr = np.empty((chans * k * k, n_img * out_h * out_w), dtype=dtype)
    if cols_arr.size == 0:
        return cols_arr
    cdef floating[:, ::1] cols = cols_arr
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for c in range(chans):
            for i in range(k):
                for j in range(k):
                    dst = &cols[(c * k + i) * k + j, 0]
                    for n in range(n_img):
                        for h in range(out_h):
                            src = &xp[n, c, i + h * stride, j]
                            if stride == 1:
                                for w in range(out_w):
                                    dst[w] = src[w]
                            else:
                                for w in range(out_w):
                                    dst[w] = src[w * stride]
                            dst += out_w
    return cols_arr


def col2im(floating[:, ::1] cols, int n_img, int chans, int hp, int wp,
           int k, int stride, int out_h, int out_w):
    """Scatter-add columns back into a zero ``(N, C, Hp, Wp)`` buffer."""
    cdef Py_ssize_t n, c, i, j, h, w
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((n_img, chans, hp, wp), dtype=dtype)
    if cols.shape[0] == 0 or cols.shape[1] == 0:
        return out_arr
    cdef floating[:, :, :, ::1] out = out_arr
    cdef floating* dst
    cdef const floating* src
    with nogil:
        # same (n, c, i, j) order as the fallback, so sums round identically
        for n in range(n_img):
            for c in range(chans):
                for i in range(k):
                    for j in range(k):
                        src = &cols[(c * k + i) * k + j, n * out_h * out_w]
                        for h in range(out_h):
                            dst = &out[n, c, i + h * stride, j]
                            if stride == 1:
                                for w in range(out_w):
                                    dst[w] += src[w]
                            else:
                                for w in range(out_w):
                                    dst[w * stride] += src[w]
                            src += out_w
    return out_arr


cdef inline double _clamp(double v, double hi) nogil:
    if v < 0.0:
        return 0.0
    if v > hi:
        return hi
    return v


def resize_bilinear_u8(const unsigned char[:, :, ::1] src, int y0, int x0,
                       int roi_h, int roi_w, int out_h, int out_w):
    """Resample the ``roi_h x roi_w`` window at ``(y0, x0)`` to ``out_h x out_w``."""
    cdef Py_ssize_t chans = src.shape[2]
    cdef Py_ssize_t oy, ox, ch
    cdef int iy0, iy1
    cdef double sy, sx, fy, fx, v, r, top, bot
    cdef double scale_y = <double>roi_h / <double>out_h
    cdef double scale_x = <double>roi_w / <double>out_w
    out_arr = np.empty((out_h, out_w, chans), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] out = out_arr
    # clamped coordinates are non-negative, so truncation equals floor
    xi0_arr = np.empty(out_w, dtype=np.intp)
    xi1_arr = np.empty(out_w, dtype=np.intp)
    xf_arr = np.empty(out_w, dtype=np.float64)
    cdef Py_ssize_t[::1] xi0 = xi0_arr
    cdef Py_ssize_t[::1] xi1 = xi1_arr
    cdef double[::1] xf = xf_arr
    with nogil:
        for ox in range(out_w):
            sx = _clamp((ox + 0.5) * scale_x - 0.5, roi_w - 1)
            xi0[ox] = <Py_ssize_t>sx
            xi1[ox] = xi0[ox] + 1 if xi0[ox] + 1 < roi_w else roi_w - 1
            xf[ox] = sx - xi0[ox]
            xi0[ox] += x0
            xi1[ox] += x0
        for oy in range(out_h):
            sy = _clamp((oy + 0.5) * scale_y - 0.5, roi_h - 1)
            iy0 = <int>sy
            iy1 = iy0 + 1 if iy0 + 1 < roi_h else roi_h - 1
            fy = sy - iy0
            iy0 += y0
            iy1 += y0
            for ox in range(out_w):
                fx = xf[ox]
                for ch in range(chans):
                    top = (1.0 - fx) * src[iy0, xi0[ox], ch] + fx * src[iy0, xi1[ox], ch]
                    bot = (1.0 - fx) * src[iy1, xi0[ox], ch] + fx * src[iy1, xi1[ox], ch]
                    v = (1.0 - fy) * top + fy * bot
                    r = <double>(<int>v)
                    if v - r >= 0.5:
                        r = r + 1.0
                    if r > 255.0:
                        r = 255.0
                    out[oy, ox, ch] = <unsigned char>r
    return out_arr
