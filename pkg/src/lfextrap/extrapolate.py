"""Inference: one extrapolation step on an EPI volume, and iterative
baseline extension of whole light fields in both angular directions.

Rightward extrapolation continues past the last view. Leftward reuses the
same network on the view-reversed volume. Vertical directions run the
horizontal procedure on the transposed light field and transpose back, so
both axes share one model. Colour channels are processed independently.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .lightfield import EpiVolume
from .shear import ShearConfig
from .training import PipelineOptions, pipeline_forward

DIRECTIONS = ("left", "right", "up", "down")
DEFAULT_ITERATION_CAP = 3


@dataclass(frozen=True)
class ExtrapolationPlan:
    """Which sides to extend and how many iterations per side.

    Every iteration adds ``views_in / 2`` views on each requested side; the
    next window is the last ``views_in`` views of the growing sequence.
    """

    directions: tuple = DIRECTIONS
    iterations: int = 1
    views_in: int = 4
    cap: int = DEFAULT_ITERATION_CAP

    def __post_init__(self):
        dirs = tuple(self.directions)
        bad = [d for d in dirs if d not in DIRECTIONS]
        if bad or not dirs:
            raise ValueError(f"directions must be a non-empty subset of {DIRECTIONS}, got {dirs}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.iterations > self.cap:
            raise ValueError(f"{self.iterations} iterations exceed the safety cap of {self.cap} per side")
        if self.views_in < 2 or self.views_in % 2:
            raise ValueError("views_in must be even")
        object.__setattr__(self, "directions", dirs)

    @property
    def added_per_side(self):
        return self.iterations * self.views_in // 2


def _pad_to(x, multiple, axis):
    extra = (-x.shape[axis]) % multiple
    if not extra:
        return x
    pad = [(0, 0)] * x.ndim
    pad[axis] = (0, extra)
    return np.pad(x, pad, mode="edge")


def predict_views(params, inputs, cfg=None, options=None, batch=8):
    """New views for a batch of EPI volumes ``[N, H, W, Nv_in] -> [N, H, W, Nv_in/2]``.

    Spatial sizes that are not multiples of 4 are edge-padded and cropped
    back. Outputs are clipped to the intensity range [0, 1].
    """
    cfg = cfg or ShearConfig()
    options = options or PipelineOptions()
    inputs = np.asarray(inputs, dtype=np.float32)
    n, h, w, _ = inputs.shape
    padded = _pad_to(_pad_to(inputs, 4, 1), 4, 2)
    outs = []
    with no_grad():
        for i in range(0, n, batch):
            views, _ = pipeline_forward(params, padded[i : i + batch], cfg, options)
            outs.append(views.data[:, :h, :w])
    return np.clip(np.concatenate(outs), 0.0, 1.0)


def extrapolate_once(epi, cfg, params, options=None, side="right"):
    """Predict ``Nv_in / 2`` views beyond one end of ``epi``.

    ``epi`` must hold exactly ``params.views_in`` views. The returned
    volume carries the continued view offsets on the requested side.
    """
    if epi.n_views != params.views_in:
        raise ValueError(f"network takes {params.views_in} views, volume has {epi.n_views}")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    data = np.asarray(epi.data)
    if side == "left":
        data = data[:, :, ::-1]
    new = predict_views(params, data[None], cfg, options)[0]
    half = new.shape[-1]
    if side == "left":
        new = new[:, :, ::-1]
        offsets = tuple(range(epi.view_offsets[0] - half, epi.view_offsets[0]))
    else:
        offsets = tuple(range(epi.view_offsets[-1] + 1, epi.view_offsets[-1] + 1 + half))
    return EpiVolume(data=new, axis=epi.axis, index=epi.index, view_offsets=offsets, origin=epi.origin)


def extend_lines(lines, params, cfg, options, iterations, sides):
    """Extend ``[N, H, W, V]`` view sequences along the last axis on ``sides``."""
    nv = params.views_in
    if lines.shape[-1] < nv:
        raise ValueError(f"need at least {nv} views along the extrapolation axis, got {lines.shape[-1]}")
    seq = np.asarray(lines, dtype=np.float32)
    for side in ("left", "right"):
        if side not in sides:
            continue
        work = seq[..., ::-1] if side == "left" else seq
        for _ in range(iterations):
            new = predict_views(params, work[..., -nv:], cfg, options)
            work = np.concatenate([work, new], axis=-1)
        seq = work[..., ::-1] if side == "left" else work
    return seq


def _extend_horizontal(views, synthetic, params, cfg, options, iterations, sides):
    u, v, h, w, c = views.shape
    lines = views.transpose(0, 4, 2, 3, 1).reshape(u * c, h, w, v)
    ext = extend_lines(lines, params, cfg, options, iterations, sides)
    v2 = ext.shape[-1]
    out = ext.reshape(u, c, h, w, v2).transpose(0, 4, 2, 3, 1)
    left = iterations * params.views_in // 2 if "left" in sides else 0
    mask = np.ones((u, v2), dtype=bool)
    mask[:, left : left + v] = synthetic
    return out, mask


def extend_baseline(lf, plan, cfg, params, options=None):
    """Enlarge the angular grid of ``lf`` by iterative extrapolation.

    Horizontal sides are extended first, then vertical sides on the
    already widened grid. Views produced by the network are flagged in
    the returned light field's ``synthetic`` mask.
    """
    if plan.views_in != params.views_in:
        raise ValueError("plan and network disagree on the number of input views")
    horiz = tuple(d for d in plan.directions if d in ("left", "right"))
    vert = tuple({"up": "left", "down": "right"}[d] for d in plan.directions if d in ("up", "down"))
    if horiz and lf.grid_cols < plan.views_in:
        raise ValueError(f"horizontal extension needs {plan.views_in} columns, grid has {lf.grid_cols}")
    if vert and lf.grid_rows < plan.views_in:
        raise ValueError(f"vertical extension needs {plan.views_in} rows, grid has {lf.grid_rows}")
    views = np.asarray(lf.views, dtype=np.float32)
    synthetic = np.asarray(lf.synthetic, dtype=bool)
    if horiz:
        views, synthetic = _extend_horizontal(views, synthetic, params, cfg, options, plan.iterations, horiz)
    if vert:
        vt, st = _extend_horizontal(
            views.transpose(1, 0, 3, 2, 4), synthetic.T, params, cfg, options, plan.iterations, vert
        )
        views, synthetic = vt.transpose(1, 0, 3, 2, 4), st.T
    return lf.with_views(np.asarray(views, dtype=np.float64), synthetic=synthetic)
