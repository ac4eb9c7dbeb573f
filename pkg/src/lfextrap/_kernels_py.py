"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same
signature and the same floating-point operation order, so the two
backends agree bit-for-bit on the forward resampling kernels.
"""

import numpy as np

CLAMP = 0
ZERO = 1


def _lerp_indices(width, shifts):
    # shifts: [N, V] -> positions [N, 1, W, V]
    pos = np.arange(width, dtype=np.float64)[None, None, :, None] + shifts[:, None, None, :]
    x0 = np.floor(pos)
    frac = pos - x0
    i0 = x0.astype(np.int64)
    i1 = i0 + 1
    return i0, i1, frac


def shift_x(src, shifts, boundary=CLAMP):
    """Resample ``src[n, h, :, v]`` at ``x + shifts[n, v]`` with linear weights.

    src : [N, H, W, V] float32/float64, shifts : [N, V] float64.
    """
    n, h, w, v = src.shape
    i0, i1, frac = _lerp_indices(w, np.asarray(shifts, dtype=np.float64))
    c0 = np.clip(i0, 0, w - 1)
    c1 = np.clip(i1, 0, w - 1)
    shape = (n, h, w, v)
    a = np.take_along_axis(src, np.broadcast_to(c0, shape), axis=2).astype(np.float64)
    b = np.take_along_axis(src, np.broadcast_to(c1, shape), axis=2).astype(np.float64)
    if boundary == ZERO:
        a = np.where((i0 >= 0) & (i0 < w), a, 0.0)
        b = np.where((i1 >= 0) & (i1 < w), b, 0.0)
    out = (1.0 - frac) * a + frac * b
    return out.astype(src.dtype)


def shift_x_adjoint(grad, shifts, boundary=CLAMP):
    """Adjoint of :func:`shift_x`: scatter-add ``grad`` back to source positions."""
    n, h, w, v = grad.shape
    i0, i1, frac = _lerp_indices(w, np.asarray(shifts, dtype=np.float64))
    g = grad.astype(np.float64)
    w0 = np.broadcast_to(1.0 - frac, g.shape) * g
    w1 = np.broadcast_to(frac, g.shape) * g
    if boundary == ZERO:
        w0 = np.where((i0 >= 0) & (i0 < w), w0, 0.0)
        w1 = np.where((i1 >= 0) & (i1 < w), w1, 0.0)
    c0 = np.broadcast_to(np.clip(i0, 0, w - 1), g.shape)
    c1 = np.broadcast_to(np.clip(i1, 0, w - 1), g.shape)
    # flat index of (n, h, x, v) with x replaced by the source column
    nn, hh, _, vv = np.indices(g.shape, sparse=True)
    base = (nn * h + hh) * w
    f0 = ((base + c0) * v + vv).ravel()
    f1 = ((base + c1) * v + vv).ravel()
    size = g.size
    out = np.bincount(f0, weights=w0.ravel(), minlength=size)
    out += np.bincount(f1, weights=w1.ravel(), minlength=size)
    return out.reshape(g.shape).astype(grad.dtype)


def im2col3d(xpad, out_shape, strides):
    """Gather 3x3x3 neighbourhoods: [N, Hp, Wp, Vp, C] -> [N, Ho, Wo, Vo, 27, C]."""
    n, _, _, _, c = xpad.shape
    ho, wo, vo = out_shape
    sh, sw, sv = strides
    cols = np.empty((n, ho, wo, vo, 27, c), dtype=xpad.dtype)
    k = 0
    for i in range(3):
        for j in range(3):
            for l in range(3):
                cols[:, :, :, :, k, :] = xpad[
                    :,
                    i : i + sh * (ho - 1) + 1 : sh,
                    j : j + sw * (wo - 1) + 1 : sw,
                    l : l + sv * (vo - 1) + 1 : sv,
                    :,
                ]
                k += 1
    return cols


def col2im3d(cols, padded_shape, strides):
    """Adjoint of :func:`im2col3d`: accumulate columns into a padded volume."""
    n, ho, wo, vo, _, c = cols.shape
    sh, sw, sv = strides
    out = np.zeros(tuple(padded_shape[:4]) + (c,), dtype=cols.dtype)
    k = 0
    for i in range(3):
        for j in range(3):
            for l in range(3):
                out[
                    :,
                    i : i + sh * (ho - 1) + 1 : sh,
                    j : j + sw * (wo - 1) + 1 : sw,
                    l : l + sv * (vo - 1) + 1 : sv,
                    :,
                ] += cols[:, :, :, :, k, :]
                k += 1
    return out


def _axis_lerp(size, shift):
    pos = np.arange(size, dtype=np.float64) + shift
    x0 = np.floor(pos)
    frac = pos - x0
    i0 = x0.astype(np.int64)
    return np.clip(i0, 0, size - 1), np.clip(i0 + 1, 0, size - 1), frac


def shift2d_accumulate(views, dy, dx):
    """Mean of bilinear-resampled views, ``views[k]`` sampled at ``(y + dy[k], x + dx[k])``.

    views : [K, H, W] float64; clamp-to-edge boundary.
    """
    k, h, w = views.shape
    acc = np.zeros((h, w), dtype=np.float64)
    for idx in range(k):
        y0, y1, fy = _axis_lerp(h, float(dy[idx]))
        x0, x1, fx = _axis_lerp(w, float(dx[idx]))
        img = views[idx]
        top = (1.0 - fx) * img[y0][:, x0] + fx * img[y0][:, x1]
        bot = (1.0 - fx) * img[y1][:, x0] + fx * img[y1][:, x1]
        acc += (1.0 - fy)[:, None] * top + fy[:, None] * bot
    return acc / k
