"""Forward/backward shearing of EPI volumes and multi-shear stacks.

Forward shearing by ``d`` resamples view ``v`` at ``x + (v - v_ref) * d``;
a scene plane of disparity ``d`` (content moving ``+d`` pixels per view)
becomes constant along the view axis. Backward shearing applies the
opposite ramp. Resampling is 1-D linear along x with a clamp-to-edge or
zero boundary.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .lightfield import EpiVolume


@dataclass(frozen=True)
class ShearConfig:
    K: int = 3
    spacing: float = 1.0
    boundary: str = "clamp"
    interpolation: str = "linear"
    ref_view: int = 0

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if not self.spacing > 0:
            raise ValueError("shear spacing must be positive")
        kernels.boundary_code(self.boundary)
        if self.interpolation != "linear":
            raise ValueError("only linear interpolation is supported")

    @property
    def n_shears(self):
        return 2 * self.K + 1

    @property
    def shear_values(self):
        return tuple(float(k * self.spacing) for k in range(-self.K, self.K + 1))

    def covers(self, disparity_range):
        lo, hi = disparity_range
        return -self.K * self.spacing <= lo and hi <= self.K * self.spacing


@dataclass(frozen=True)
class ShearStack:
    volumes: np.ndarray
    shear_values: tuple
    ref_view: int = 0
    view_offsets: tuple = None

    def __post_init__(self):
        vols = np.asarray(self.volumes)
        if vols.ndim != 4:
            raise ValueError(f"shear stack must be [S, H, W, Nv], got {vols.shape}")
        s = vols.shape[0]
        if s % 2 != 1 or len(self.shear_values) != s:
            raise ValueError("shear stack needs an odd number S = 2K+1 of shears matching shear_values")
        vals = np.asarray(self.shear_values, dtype=np.float64)
        if s > 1:
            steps = np.diff(vals)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0]):
                raise ValueError("shear values must be evenly spaced and strictly increasing")
            if not np.isclose(vals[0] + vals[-1], 2 * vals[s // 2]):
                raise ValueError("shear values must be symmetric about their midpoint")
        offsets = tuple(range(vols.shape[3])) if self.view_offsets is None else tuple(self.view_offsets)
        object.__setattr__(self, "volumes", vols)
        object.__setattr__(self, "shear_values", tuple(float(v) for v in vals))
        object.__setattr__(self, "view_offsets", offsets)

    @property
    def n_shears(self):
        return self.volumes.shape[0]


def ramp(view_offsets, d, ref_view=0):
    """Per-view x displacement ``(v - v_ref) * d``."""
    return (np.asarray(view_offsets, dtype=np.float64) - ref_view) * d


def shear_array(data, shifts, boundary="clamp"):
    """Resample ``data[..., h, w, v]`` at ``w + shifts[..., v]``.

    ``data`` is ``[N, H, W, V]`` and ``shifts`` ``[N, V]``; a plain
    ``[H, W, V]`` volume with ``[V]`` shifts is accepted too.
    """
    single = data.ndim == 3
    if single:
        data = data[None]
        shifts = np.asarray(shifts)[None]
    out = kernels.shift_x(
        np.ascontiguousarray(data),
        np.ascontiguousarray(shifts, dtype=np.float64),
        kernels.boundary_code(boundary),
    )
    return out[0] if single else out


def _shear(epi, d, sign, ref_view, boundary):
    shifts = sign * ramp(epi.view_offsets, d, ref_view)
    return EpiVolume(
        data=shear_array(epi.data, shifts, boundary),
        axis=epi.axis,
        index=epi.index,
        view_offsets=epi.view_offsets,
        origin=epi.origin,
    )


def forward_shear(epi, d, ref_view=0, boundary="clamp"):
    """``out(v, x) = in(v, x + (v - v_ref) * d)``."""
    return _shear(epi, d, 1.0, ref_view, boundary)


def backward_shear(epi, d, ref_view=0, boundary="clamp"):
    """``out(v, x) = in(v, x - (v - v_ref) * d)``, using the volume's own view offsets."""
    return _shear(epi, d, -1.0, ref_view, boundary)


def shear_many(data, view_offsets, shear_values, ref_view=0, boundary="clamp", sign=1.0):
    """Shear a batch ``[N, H, W, V]`` by every value: returns ``[N, S, H, W, V]``."""
    n, h, w, v = data.shape
    s = len(shear_values)
    base = np.asarray(view_offsets, dtype=np.float64) - ref_view
    shifts = sign * np.asarray(shear_values, dtype=np.float64)[:, None] * base[None, :]
    rep = np.repeat(data[:, None], s, axis=1).reshape(n * s, h, w, v)
    out = kernels.shift_x(
        np.ascontiguousarray(rep),
        np.ascontiguousarray(np.tile(shifts, (n, 1))),
        kernels.boundary_code(boundary),
    )
    return out.reshape(n, s, h, w, v)


def build_shear_stack(epi, cfg=None, disparity_range=None):
    """Forward-shear ``epi`` by each of the ``2K+1`` configured shear values."""
    cfg = cfg or ShearConfig()
    if disparity_range is not None and not cfg.covers(disparity_range):
        warnings.warn(
            f"shears {cfg.shear_values[0]:+.2f}..{cfg.shear_values[-1]:+.2f} do not cover "
            f"disparity range {tuple(disparity_range)}",
            UserWarning,
            stacklevel=2,
        )
    vols = shear_many(
        epi.data[None], epi.view_offsets, cfg.shear_values, cfg.ref_view, cfg.boundary
    )[0]
    return ShearStack(
        volumes=vols, shear_values=cfg.shear_values, ref_view=cfg.ref_view, view_offsets=epi.view_offsets
    )
