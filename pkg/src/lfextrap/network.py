"""The two-stage extrapolation network.

Stage one is a 3-D U-Net applied with shared weights to each sheared EPI
volume ``[H, W, V]``; it emits ``V/2`` candidate views per shear, in that
shear's frame. Stage two stacks, per shear, the inputs plus two copies of
the candidates (``2V`` views), backward-shears them, stacks the shears as
channels and predicts softmax confidences over shears. The output is the
confidence-weighted sum of the backward-sheared candidates.

All volumes are channels-last: ``[batch, H, W, views, channels]``.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, conv3d, conv3d_transpose, shift_x, softmax
from .autodiff.conv import ConvSpec
from .shear import ramp

FORMAT_VERSION = 1

S1 = (1, 1, 1)
S2 = (2, 2, 2)
SV = (1, 1, 2)

EXTRAP_LAYERS = (
    ("conv1_1", ConvSpec(1, 8)),
    ("conv1_2", ConvSpec(8, 8)),
    ("conv_d1", ConvSpec(8, 16, S2)),
    ("conv2_1", ConvSpec(16, 16)),
    ("conv2_2", ConvSpec(16, 16)),
    ("conv_d2", ConvSpec(16, 32, S2)),
    ("conv3_1", ConvSpec(32, 32)),
    ("conv3_2", ConvSpec(32, 32)),
    ("deconv1", ConvSpec(32, 16, S2, transpose=True)),
    ("conv4_1", ConvSpec(32, 16)),
    ("conv4_2", ConvSpec(16, 16)),
    ("deconv2", ConvSpec(16, 8, S2, transpose=True)),
    ("conv5_1", ConvSpec(16, 8)),
    ("conv5_2", ConvSpec(8, 8)),
    ("conv_d3", ConvSpec(8, 16, SV)),
    ("candidate", ConvSpec(16, 1)),
)


def fusion_layers(n_shears):
    return (
        ("conv6_1", ConvSpec(n_shears, 8)),
        ("conv6_2", ConvSpec(8, 8)),
        ("conv_d3", ConvSpec(8, 16, S2)),
        ("conv7_1", ConvSpec(16, 16)),
        ("conv7_2", ConvSpec(16, 16)),
        ("conv_d4", ConvSpec(16, 32, S2)),
        ("conv8_1", ConvSpec(32, 32)),
        ("conv8_2", ConvSpec(32, 32)),
        ("deconv3", ConvSpec(32, 32, S2, transpose=True)),
        ("conv4_1", ConvSpec(48, 16)),
        ("conv4_2", ConvSpec(16, 16)),
        ("deconv4", ConvSpec(16, 8, S2, transpose=True)),
        ("conv9_1", ConvSpec(16, 16)),
        ("conv9_2", ConvSpec(16, 16)),
        ("conv_d5", ConvSpec(16, 8, SV)),
        ("conv_d6", ConvSpec(8, 16, SV)),
        ("conv10", ConvSpec(16, n_shears)),
    )


def layer_table(n_shears):
    """``[(qualified name, ConvSpec)]`` for both sub-networks."""
    return [("extrap/" + n, s) for n, s in EXTRAP_LAYERS] + [
        ("fusion/" + n, s) for n, s in fusion_layers(n_shears)
    ]


@dataclass
class SenetParams:
    """Named weight/bias tensors plus the configuration they were built for."""

    tensors: dict
    views_in: int = 4
    n_shears: int = 7
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.views_in % 4:
            raise ValueError("views_in must be divisible by 4")
        if self.n_shears % 2 != 1:
            raise ValueError("n_shears must be odd")
        for name, spec in layer_table(self.n_shears):
            w, b = self.tensors.get(name + "/w"), self.tensors.get(name + "/b")
            if w is None or b is None:
                continue
            if tuple(w.shape) != spec.weight_shape or tuple(b.shape) != (spec.out_channels,):
                raise ValueError(f"{name}: parameter shapes {w.shape}/{b.shape} do not match the layer table")

    def __getitem__(self, name):
        return self.tensors[name]

    def arrays(self):
        return {k: t.data for k, t in self.tensors.items()}

    def grads(self):
        return {k: t.grad for k, t in self.tensors.items()}

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def metadata(self):
        return {"views_in": self.views_in, "n_shears": self.n_shears, "format_version": self.version}

    @classmethod
    def from_arrays(cls, arrays, metadata):
        tensors = {k: Tensor(np.array(v, dtype=np.float32), requires_grad=True, name=k) for k, v in arrays.items()}
        return cls(
            tensors=tensors,
            views_in=int(metadata["views_in"]),
            n_shears=int(metadata["n_shears"]),
            version=int(metadata.get("format_version", FORMAT_VERSION)),
        )


def init_params(views_in=4, n_shears=7, seed=0, dtype=np.float32):
    """He-uniform kernels (fan-in ``27 * Cin``) and zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, spec in layer_table(n_shears):
        fan_in = 27 * spec.in_channels
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, spec.weight_shape).astype(dtype)
        tensors[name + "/w"] = Tensor(w, requires_grad=True, name=name + "/w")
        tensors[name + "/b"] = Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True, name=name + "/b")
    return SenetParams(tensors=tensors, views_in=views_in, n_shears=n_shears)


def count_parameters(params):
    """Exact number of scalar parameters, biases included."""
    if isinstance(params, SenetParams):
        params = params.tensors
    return int(sum(np.asarray(getattr(t, "data", t)).size for t in params.values()))


# -- forward passes ---------------------------------------------------------

def _layer(params, prefix, name, spec, x, relu=True, trace=None):
    w, b = params[f"{prefix}/{name}/w"], params[f"{prefix}/{name}/b"]
    if spec.transpose:
        y = conv3d_transpose(x, w, b, spec.strides)
    else:
        y = conv3d(x, w, b, spec.strides)
    if relu:
        y = y.relu()
    if trace is not None:
        trace.append((f"{prefix}/{name}", tuple(y.shape[1:])))
    return y


def extrapolation_net(x, params, trace=None):
    """``[N, H, W, V, 1] -> [N, H, W, V/2, 1]`` candidate views."""
    specs = dict(EXTRAP_LAYERS)

    def f(name, inp, relu=True):
        return _layer(params, "extrap", name, specs[name], inp, relu, trace)

    c1 = f("conv1_2", f("conv1_1", x))
    c2 = f("conv2_2", f("conv2_1", f("conv_d1", c1)))
    c3 = f("conv3_2", f("conv3_1", f("conv_d2", c2)))
    cat1 = concat([f("deconv1", c3), c2], axis=-1)
    c4 = f("conv4_2", f("conv4_1", cat1))
    cat2 = concat([f("deconv2", c4), c1], axis=-1)
    c5 = f("conv5_2", f("conv5_1", cat2))
    return f("candidate", f("conv_d3", c5), relu=False)


def fusion_net(z, params, trace=None):
    """``[B, H, W, 2V, S] -> [B, H, W, V/2, S]`` confidence logits."""
    specs = dict(fusion_layers(params.n_shears))

    def f(name, inp, relu=True):
        return _layer(params, "fusion", name, specs[name], inp, relu, trace)

    c6 = f("conv6_2", f("conv6_1", z))
    c7 = f("conv7_2", f("conv7_1", f("conv_d3", c6)))
    c8 = f("conv8_2", f("conv8_1", f("conv_d4", c7)))
    cat3 = concat([f("deconv3", c8), c7], axis=-1)
    c4 = f("conv4_2", f("conv4_1", cat3))
    cat4 = concat([f("deconv4", c4), c6], axis=-1)
    c9 = f("conv9_2", f("conv9_1", cat4))
    return f("conv10", f("conv_d6", f("conv_d5", c9)), relu=False)


def check_input_shape(shape, views_in):
    if len(shape) != 5:
        raise ValueError(f"expected [B, S, H, W, V] shear stacks, got {shape}")
    _, _, h, w, v = shape
    if v != views_in:
        raise ValueError(f"network built for {views_in} input views, got {v}")
    if h % 4 or w % 4:
        raise ValueError(f"H and W must be divisible by 4, got {h}x{w}")
    if v % 4:
        raise ValueError(f"number of views must be divisible by 4, got {v}")


def extrapolate_candidates(stacks, params, trace=None):
    """Run the extrapolation net on every shear of ``[B, S, H, W, V]``: ``-> [B, S, H, W, V/2]``."""
    stacks = stacks if isinstance(stacks, Tensor) else Tensor(np.asarray(stacks, dtype=np.float32))
    check_input_shape(stacks.shape, params.views_in)
    b, s, h, w, v = stacks.shape
    out = extrapolation_net(stacks.reshape(b * s, h, w, v, 1), params, trace)
    return out.reshape(b, s, h, w, v // 2)


def candidate_offsets(view_offsets, n_new):
    last = int(view_offsets[-1])
    return tuple(range(last + 1, last + 1 + n_new))


def fuse_candidates(
    stacks,
    cands,
    shear_values,
    params,
    view_offsets=None,
    ref_view=0,
    boundary="clamp",
    fusion=True,
    backward_shear=True,
    trace=None,
):
    """Merge per-shear candidates into ``[B, H, W, V/2]`` views.

    Returns ``(views, weights)`` where ``weights`` is ``[B, H, W, V/2, S]``
    and sums to one over the last axis.
    """
    stacks = stacks if isinstance(stacks, Tensor) else Tensor(np.asarray(stacks, dtype=np.float32))
    b, s, h, w, v = stacks.shape
    half = cands.shape[-1]
    if cands.shape != (b, s, h, w, half) or len(shear_values) != s:
        raise ValueError(f"candidate shape {cands.shape} inconsistent with stack {stacks.shape}")
    offsets = tuple(range(v)) if view_offsets is None else tuple(view_offsets)
    new = candidate_offsets(offsets, half)
    d = np.asarray(shear_values, dtype=np.float64)

    if backward_shear:
        cand_shift = -d[:, None] * ramp(new, 1.0, ref_view)[None, :]
        flat = cands.reshape(b * s, h, w, half)
        unsheared = shift_x(flat, np.tile(cand_shift, (b, 1)), boundary).reshape(b, s, h, w, half)
    else:
        unsheared = cands
    unsheared = unsheared.transpose(0, 2, 3, 4, 1)

    if fusion:
        extended = concat([stacks, cands, cands], axis=-1)
        if backward_shear:
            ext_offsets = offsets + new + new
            ext_shift = -d[:, None] * ramp(ext_offsets, 1.0, ref_view)[None, :]
            extended = shift_x(
                extended.reshape(b * s, h, w, 2 * v), np.tile(ext_shift, (b, 1)), boundary
            ).reshape(b, s, h, w, 2 * v)
        z = extended.transpose(0, 2, 3, 4, 1)
        if trace is not None:
            trace.append(("fusion/input", tuple(z.shape[1:])))
        weights = softmax(fusion_net(z, params, trace), axis=-1)
    else:
        weights = Tensor(np.full((b, h, w, half, s), 1.0 / s, dtype=unsheared.dtype))
    out = (weights * unsheared).sum(axis=-1)
    return out, weights
