"""3x3x3 convolutions over channels-last ``[N, H, W, V, C]`` volumes.

Both ops use "same" zero padding in the TensorFlow convention: a stride-s
convolution maps size ``n`` to ``ceil(n / s)``, and the transposed
convolution is the exact adjoint of that map (size ``n`` to ``n * s``).
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .tensor import Tensor

KERNEL = 3


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    strides: tuple = (1, 1, 1)
    transpose: bool = False

    def __post_init__(self):
        if len(self.strides) != 3 or any(s not in (1, 2) for s in self.strides):
            raise ValueError(f"strides must be a triple over {{1, 2}}, got {self.strides}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def weight_shape(self):
        if self.transpose:
            return (KERNEL, KERNEL, KERNEL, self.out_channels, self.in_channels)
        return (KERNEL, KERNEL, KERNEL, self.in_channels, self.out_channels)

    @property
    def n_params(self):
        return KERNEL**3 * self.in_channels * self.out_channels + self.out_channels

    def output_shape(self, spatial):
        if self.transpose:
            return tuple(n * s for n, s in zip(spatial, self.strides))
        return tuple(-(-n // s) for n, s in zip(spatial, self.strides))


def same_padding(size, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + KERNEL - size, 0)
    return out, total // 2, total - total // 2


def _geometry(spatial, strides):
    outs, pads = [], []
    for n, s in zip(spatial, strides):
        out, before, after = same_padding(n, s)
        outs.append(out)
        pads.append((before, after))
    return tuple(outs), pads


def conv3d(x, weight, bias, strides=(1, 1, 1)):
    """Cross-correlation with a ``[3, 3, 3, Cin, Cout]`` kernel plus bias."""
    n, h, w, v, cin = x.shape
    if weight.shape[:3] != (3, 3, 3) or weight.shape[3] != cin:
        raise ValueError(f"conv3d: weight {weight.shape} does not match input channels {cin}")
    cout = weight.shape[4]
    if bias.shape != (cout,):
        raise ValueError(f"conv3d: bias {bias.shape} does not match {cout} filters")
    outs, pads = _geometry((h, w, v), strides)
    xpad = np.pad(x.data, [(0, 0)] + pads + [(0, 0)])
    cols = kernels.im2col3d(xpad, outs, tuple(strides)).reshape(-1, 27 * cin)
    wm = weight.data.reshape(27 * cin, cout)
    out = (cols @ wm + bias.data).reshape((n,) + outs + (cout,))

    def backward(g):
        gm = g.reshape(-1, cout)
        gw = (cols.T @ gm).reshape(weight.shape)
        if not x.requires_grad:
            return None, gw, gm.sum(axis=0)
        gcols = np.ascontiguousarray((gm @ wm.T).reshape((n,) + outs + (27, cin)))
        gpad = kernels.col2im3d(gcols, xpad.shape, tuple(strides))
        gx = gpad[:, pads[0][0] : pads[0][0] + h, pads[1][0] : pads[1][0] + w, pads[2][0] : pads[2][0] + v]
        return np.ascontiguousarray(gx), gw, gm.sum(axis=0)

    return Tensor._make(out, (x, weight, bias), backward, "conv3d")


def conv3d_transpose(x, weight, bias, strides=(2, 2, 2)):
    """Adjoint of :func:`conv3d` with a ``[3, 3, 3, Cout, Cin]`` kernel, plus bias.

    Output spatial size is the input size times the stride.
    """
    n, h, w, v, cin = x.shape
    if weight.shape[:3] != (3, 3, 3) or weight.shape[4] != cin:
        raise ValueError(f"conv3d_transpose: weight {weight.shape} does not match input channels {cin}")
    cout = weight.shape[3]
    if bias.shape != (cout,):
        raise ValueError(f"conv3d_transpose: bias {bias.shape} does not match {cout} filters")
    big = (h * strides[0], w * strides[1], v * strides[2])
    outs, pads = _geometry(big, strides)
    assert outs == (h, w, v)
    padded = (n,) + tuple(b + p[0] + p[1] for b, p in zip(big, pads))
    xm = x.data.reshape(-1, cin)
    wm = weight.data.reshape(27 * cout, cin)
    cols = np.ascontiguousarray((xm @ wm.T).reshape((n, h, w, v, 27, cout)))
    full = kernels.col2im3d(cols, padded, tuple(strides))
    crop = (
        slice(None),
        slice(pads[0][0], pads[0][0] + big[0]),
        slice(pads[1][0], pads[1][0] + big[1]),
        slice(pads[2][0], pads[2][0] + big[2]),
    )
    out = full[crop] + bias.data

    def backward(g):
        gpad = np.pad(g, [(0, 0)] + pads + [(0, 0)])
        gcols = kernels.im2col3d(gpad, (h, w, v), tuple(strides)).reshape(-1, 27 * cout)
        gx = (gcols @ wm).reshape(x.shape)
        gw = (gcols.T @ xm).reshape(weight.shape)
        return gx, gw, g.reshape(-1, cout).sum(axis=0)

    return Tensor._make(np.ascontiguousarray(out), (x, weight, bias), backward, "conv3d_transpose")
