# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Convolutions use a C-filled im2col/col2im buffer around BLAS matrix products;
pooling is direct loops. Same contracts as kernels.python_ops (NHWC, float64,
same padding, stride 1). The padded-buffer and scatter work is where the
numpy fallback loses time, so that is what lives in C here.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"


cdef void _im2col_fill(const double[:, :, :, ::1] x, double[:, ::1] cols,
                       Py_ssize_t kh, Py_ssize_t kw) noexcept nogil:
    cdef Py_ssize_t bs = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t n, i, j, ki, kj, ci, ii, jj, row, base
    for n in range(bs):
        for i in range(h):
            for j in range(wd):
                row = (n * h + i) * wd + j
                for ki in range(kh):
                    ii = i + ki - ph
                    for kj in range(kw):
                        jj = j + kj - pw
                        base = (ki * kw + kj) * cin
                        if 0 <= ii < h and 0 <= jj < wd:
                            for ci in range(cin):
                                cols[row, base + ci] = x[n, ii, jj, ci]
                        else:
                            for ci in range(cin):
                                cols[row, base + ci] = 0.0


cdef void _col2im_one(const double[:, ::1] dcols, double[:, :, ::1] dx,
                      Py_ssize_t kh, Py_ssize_t kw) noexcept nogil:
    # One image: dcols rows are that image's output cells. Reads stream through
    # dcols in row order; writes scatter into the (cache-resident) dx image.
    cdef Py_ssize_t h = dx.shape[0], wd = dx.shape[1], cin = dx.shape[2]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t i, j, ki, kj, ci, ii, jj, row, base
    for i in range(h):
        for j in range(wd):
            row = i * wd + j
            for ki in range(kh):
                ii = i + ki - ph
                if ii < 0 or ii >= h:
                    continue
                for kj in range(kw):
                    jj = j + kj - pw
                    if jj < 0 or jj >= wd:
                        continue
                    base = (ki * kw + kj) * cin
                    for ci in range(cin):
                        dx[ii, jj, ci] += dcols[row, base + ci]


def conv2d_forward(x, w, b):
    """Same-padding stride-1 correlation of x (B,H,W,Cin) with w (KH,KW,Cin,Cout)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t bs = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    if w.shape[2] != cin:
        raise ValueError(f"channel mismatch: input {cin}, weights {w.shape[2]}")

    cols = np.empty((bs * h * wd, kh * kw * cin))
    _im2col_fill(x, cols, kh, kw)
    out = cols.dot(w.reshape(kh * kw * cin, cout))
    out += b
    return out.reshape(bs, h, wd, cout)


def conv2d_backward(x, w, dy, bint compute_dx=True):
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t bs = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]

    dy_flat = dy.reshape(bs * h * wd, cout)
    db = dy_flat.sum(axis=0)

    cols = np.empty((bs * h * wd, kh * kw * cin))
    _im2col_fill(x, cols, kh, kw)
    dw = cols.T.dot(dy_flat).reshape(kh, kw, cin, cout)

    if not compute_dx:
        return None, dw, db

    # Per-image chunks keep the gemm output cache-resident for the col2im pass.
    wt = np.ascontiguousarray(w.reshape(kh * kw * cin, cout).T)
    dy_img = dy.reshape(bs, h * wd, cout)
    dx = np.zeros((bs, h, wd, cin))
    for n in range(bs):
        _col2im_one(dy_img[n].dot(wt), dx[n], kh, kw)
    return dx, dw, db


def maxpool2_forward(x):
    """2x2/stride-2 max pooling; ties resolve to the first element in window
    order (0,0),(0,1),(1,0),(1,1), matching the fallback's argmax."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] xv = x
    cdef Py_ssize_t bs = xv.shape[0], h = xv.shape[1], wd = xv.shape[2], c = xv.shape[3]
    if h % 2 or wd % 2:
        raise ValueError(f"pooling needs even spatial dims, got {h}x{wd}")
    cdef Py_ssize_t oh = h // 2, ow = wd // 2

    out_arr = np.empty((bs, oh, ow, c))
    sw_arr = np.empty((bs, oh, ow, c), dtype=np.uint8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] sw = sw_arr

    cdef Py_ssize_t n, i, j, ch, k
    cdef double best, v
    cdef unsigned char arg

    with nogil:
        for n in range(bs):
            for i in range(oh):
                for j in range(ow):
                    for ch in range(c):
                        best = xv[n, 2 * i, 2 * j, ch]
                        arg = 0
                        for k in range(1, 4):
                            v = xv[n, 2 * i + (k >> 1), 2 * j + (k & 1), ch]
                            if v > best:
                                best = v
                                arg = <unsigned char> k
                        out[n, i, j, ch] = best
                        sw[n, i, j, ch] = arg
    return out_arr, sw_arr


def maxpool2_backward(dy, sw):
    """Scatter pooled gradients back to the positions recorded in switches."""
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    sw = np.ascontiguousarray(sw, dtype=np.uint8)
    cdef double[:, :, :, ::1] dyv = dy
    cdef unsigned char[:, :, :, ::1] swv = sw
    cdef Py_ssize_t bs = dyv.shape[0], oh = dyv.shape[1], ow = dyv.shape[2], c = dyv.shape[3]

    dx_arr = np.zeros((bs, 2 * oh, 2 * ow, c))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, i, j, ch
    cdef unsigned char k

    with nogil:
        for n in range(bs):
            for i in range(oh):
                for j in range(ow):
                    for ch in range(c):
                        k = swv[n, i, j, ch]
                        dx[n, 2 * i + (k >> 1), 2 * j + (k & 1), ch] = dyv[n, i, j, ch]
    return dx_arr
