# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``.

Operation order matches the numpy versions so the resampling kernels agree
bit-for-bit (build with -ffp-contract=off; see setup.py).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef fused real:
    float
    double

cdef enum:
    CLAMP = 0
    ZERO = 1


cdef inline Py_ssize_t _clip(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


def shift_x(const real[:, :, :, ::1] src, const double[:, ::1] shifts, int boundary=CLAMP):
    cdef Py_ssize_t n = src.shape[0], h = src.shape[1], w = src.shape[2], v = src.shape[3]
    out_arr = np.empty((n, h, w, v), dtype=np.asarray(src).dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t a, y, x, k, i0, i1
    cdef double pos, x0, frac, va, vb
    with nogil:
        for a in range(n):
            for y in range(h):
                for x in range(w):
                    for k in range(v):
                        pos = <double>x + shifts[a, k]
                        x0 = floor(pos)
                        frac = pos - x0
                        i0 = <Py_ssize_t>x0
                        i1 = i0 + 1
                        if boundary == ZERO and (i0 < 0 or i0 >= w):
                            va = 0.0
                        else:
                            va = src[a, y, _clip(i0, w), k]
                        if boundary == ZERO and (i1 < 0 or i1 >= w):
                            vb = 0.0
                        else:
                            vb = src[a, y, _clip(i1, w), k]
                        out[a, y, x, k] = <real>((1.0 - frac) * va + frac * vb)
    return out_arr


def shift_x_adjoint(const real[:, :, :, ::1] grad, const double[:, ::1] shifts, int boundary=CLAMP):
    cdef Py_ssize_t n = grad.shape[0], h = grad.shape[1], w = grad.shape[2], v = grad.shape[3]
    acc_arr = np.zeros((n, h, w, v), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t a, y, x, k, i0, i1
    cdef double pos, x0, frac, g
    with nogil:
        for a in range(n):
            for y in range(h):
                for x in range(w):
                    for k in range(v):
                        pos = <double>x + shifts[a, k]
                        x0 = floor(pos)
                        frac = pos - x0
                        i0 = <Py_ssize_t>x0
                        i1 = i0 + 1
                        g = grad[a, y, x, k]
                        if not (boundary == ZERO and (i0 < 0 or i0 >= w)):
                            acc[a, y, _clip(i0, w), k] += (1.0 - frac) * g
                        if not (boundary == ZERO and (i1 < 0 or i1 >= w)):
                            acc[a, y, _clip(i1, w), k] += frac * g
    return acc_arr.astype(np.asarray(grad).dtype)


def im2col3d(const real[:, :, :, :, ::1] xpad, out_shape, strides):
    cdef Py_ssize_t n = xpad.shape[0], c = xpad.shape[4]
    cdef Py_ssize_t ho = out_shape[0], wo = out_shape[1], vo = out_shape[2]
    cdef Py_ssize_t sh = strides[0], sw = strides[1], sv = strides[2]
    cols_arr = np.empty((n, ho, wo, vo, 27, c), dtype=np.asarray(xpad).dtype)
    cdef real[:, :, :, :, :, ::1] cols = cols_arr
    cdef Py_ssize_t a, y, x, z, i, j, l, k, ch
    with nogil:
        for a in range(n):
            for y in range(ho):
                for x in range(wo):
                    for z in range(vo):
                        k = 0
                        for i in range(3):
                            for j in range(3):
                                for l in range(3):
                                    for ch in range(c):
                                        cols[a, y, x, z, k, ch] = xpad[a, y * sh + i, x * sw + j, z * sv + l, ch]
                                    k = k + 1
    return cols_arr


def col2im3d(const real[:, :, :, :, :, ::1] cols, padded_shape, strides):
    cdef Py_ssize_t n = cols.shape[0], ho = cols.shape[1], wo = cols.shape[2], vo = cols.shape[3]
    cdef Py_ssize_t c = cols.shape[5]
    cdef Py_ssize_t sh = strides[0], sw = strides[1], sv = strides[2]
    out_arr = np.zeros((n, padded_shape[1], padded_shape[2], padded_shape[3], c),
                       dtype=np.asarray(cols).dtype)
    cdef real[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t a, y, x, z, i, j, l, k, ch
    # offset-major order keeps accumulation order identical to the numpy twin
    with nogil:
        k = 0
        for i in range(3):
            for j in range(3):
                for l in range(3):
                    for a in range(n):
                        for y in range(ho):
                            for x in range(wo):
                                for z in range(vo):
                                    for ch in range(c):
                                        out[a, y * sh + i, x * sw + j, z * sv + l, ch] += cols[a, y, x, z, k, ch]
                    k = k + 1
    return out_arr


def shift2d_accumulate(const double[:, :, ::1] views, const double[::1] dy, const double[::1] dx):
    cdef Py_ssize_t nk = views.shape[0], h = views.shape[1], w = views.shape[2]
    acc_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    cdef Py_ssize_t k, y, x, y0, y1, x0, x1
    cdef double py, px, fy, fx, fly, flx, top, bot
    with nogil:
        for k in range(nk):
            for y in range(h):
                py = <double>y + dy[k]
                fly = floor(py)
                fy = py - fly
                y0 = _clip(<Py_ssize_t>fly, h)
                y1 = _clip(<Py_ssize_t>fly + 1, h)
                for x in range(w):
                    px = <double>x + dx[k]
                    flx = floor(px)
                    fx = px - flx
                    x0 = _clip(<Py_ssize_t>flx, w)
                    x1 = _clip(<Py_ssize_t>flx + 1, w)
                    top = (1.0 - fx) * views[k, y0, x0] + fx * views[k, y0, x1]
                    bot = (1.0 - fx) * views[k, y1, x0] + fx * views[k, y1, x1]
                    acc[y, x] += (1.0 - fy) * top + fy * bot
        for y in range(h):
            for x in range(w):
                acc[y, x] = acc[y, x] / nk
    return acc_arr
