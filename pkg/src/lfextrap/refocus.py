"""Shift-and-add refocusing, focal stacks, depth of field and axial
refocusing precision.

Refocusing at ``alpha`` samples view ``(u, v)`` at
``(y + alpha (u - u_c), x + alpha (v - v_c))`` and averages; content whose
position moves by ``+delta`` pixels per view is in focus at
``alpha = delta``.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np
import yaml
from PIL import Image
from scipy.ndimage import laplace

from . import kernels
from .metrics import crop_border, ssim


@dataclass(frozen=True)
class OpticsParams:
    """Wavelength (um), refraction index, numerical aperture and angular view count."""

    wavelength: float
    refraction_index: float = 1.0
    numerical_aperture: float = 0.5
    angular_views: int = 1

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if self.refraction_index < 1:
            raise ValueError("refraction index must be >= 1")
        if not 0 < self.numerical_aperture < self.refraction_index:
            raise ValueError("numerical aperture must lie in (0, n)")
        if self.angular_views < 0:
            raise ValueError("angular view count must be non-negative")


def dof(optics):
    """Depth of field ``lambda n / NA^2 * (1 + N_u / 2)``, in the wavelength's unit."""
    wave = optics.wavelength * optics.refraction_index / optics.numerical_aperture**2
    return wave * (1.0 + optics.angular_views / 2.0)


def refocus(lf, alpha):
    """Shift-and-add image ``[H, W, C]`` focused at disparity ``alpha``."""
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    u, v, h, w, c = lf.shape
    uu, vv = np.meshgrid(np.arange(u) - (u - 1) / 2.0, np.arange(v) - (v - 1) / 2.0, indexing="ij")
    dy = np.ascontiguousarray(alpha * uu.ravel())
    dx = np.ascontiguousarray(alpha * vv.ravel())
    flat = np.asarray(lf.views, dtype=np.float64).reshape(u * v, h, w, c)
    out = np.empty((h, w, c))
    for k in range(c):
        out[..., k] = kernels.shift2d_accumulate(np.ascontiguousarray(flat[..., k]), dy, dx)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class FocalStack:
    alphas: np.ndarray
    images: np.ndarray
    label: str = "1.0X"

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        images = np.asarray(self.images)
        if alphas.ndim != 1 or len(alphas) != len(images):
            raise ValueError("one image per alpha is required")
        if np.any(np.diff(alphas) <= 0):
            raise ValueError("alphas must be strictly increasing")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "images", images)

    def __len__(self):
        return len(self.alphas)

    def index_of(self, alpha, tol=1e-9):
        i = int(np.argmin(np.abs(self.alphas - alpha)))
        if abs(self.alphas[i] - alpha) > tol:
            raise ValueError(f"alpha {alpha} is not on the stack grid")
        return i


def focal_stack(lf, alpha_min=-3.0, alpha_max=3.0, n_planes=61, label="1.0X"):
    """Refocus on ``n_planes`` evenly spaced disparities, endpoints included."""
    if n_planes < 2:
        raise ValueError("a focal stack needs at least 2 planes")
    if not alpha_max > alpha_min:
        raise ValueError("alpha_max must exceed alpha_min")
    alphas = np.linspace(alpha_min, alpha_max, n_planes)
    return FocalStack(alphas=alphas, images=np.stack([refocus(lf, a) for a in alphas]), label=label)


def _gray(img):
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def laplacian_variance(img, crop=0):
    """Sharpness score: variance of the discrete Laplacian (mean over channels first)."""
    return float(np.var(crop_border(laplace(_gray(img), mode="nearest"), crop)))


def sharpness_curve(stack, crop=0):
    return np.array([laplacian_variance(img, crop) for img in stack.images])


@dataclass(frozen=True)
class PrecisionCurve:
    alpha_mid: np.ndarray
    ssim: np.ndarray
    label: str = "1.0X"


def precision_curve(stack, crop=0):
    """SSIM between each adjacent pair of slices, reported at the alpha midpoint."""
    if len(stack) < 2:
        raise ValueError("need at least two slices")
    vals = [ssim(stack.images[i], stack.images[i + 1], crop=crop) for i in range(len(stack) - 1)]
    mids = 0.5 * (stack.alphas[:-1] + stack.alphas[1:])
    return PrecisionCurve(alpha_mid=mids, ssim=np.asarray(vals), label=stack.label)


@dataclass(frozen=True)
class ArpBracket:
    """Nearest distinguishable planes below and above ``alpha0``.

    An open side (nothing crosses the threshold) reports the stack end and
    sets its ``open_*`` flag.
    """

    alpha0: float
    lower: float
    upper: float
    open_lower: bool
    open_upper: bool

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def is_open(self):
        return self.open_lower or self.open_upper


def arp_estimate(stack, alpha0, eps_ssim, crop=0):
    """Scan outward from ``alpha0`` for the first slices with SSIM against it below ``1 - eps_ssim``."""
    if not 0.0 <= eps_ssim < 1.0:
        raise ValueError("eps_ssim must lie in [0, 1)")
    i0 = stack.index_of(alpha0)
    ref = stack.images[i0]
    threshold = 1.0 - eps_ssim

    def scan(indices):
        for i in indices:
            if eps_ssim == 0.0 or ssim(ref, stack.images[i], crop=crop) < threshold:
                return float(stack.alphas[i]), False
        last = indices[-1] if len(indices) else i0
        return float(stack.alphas[last]), True

    lower, open_lower = scan(list(range(i0 - 1, -1, -1)))
    upper, open_upper = scan(list(range(i0 + 1, len(stack))))
    return ArpBracket(float(stack.alphas[i0]), lower, upper, open_lower, open_upper)


# -- files --------------------------------------------------------------------

def refocus_filename(alpha):
    return f"refocus_{alpha:+.2f}.png"


def save_focal_stack(stack, out_dir):
    """Write one 8-bit PNG per slice plus ``index.yaml``; returns the index path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for alpha, img in zip(stack.alphas, stack.images):
        name = refocus_filename(alpha)
        arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(arr[..., 0] if arr.shape[-1] == 1 else arr).save(os.path.join(out_dir, name))
        entries.append({"alpha": round(float(alpha), 6), "file": name})
    index = os.path.join(out_dir, "index.yaml")
    with open(index, "w") as fh:
        yaml.safe_dump({"label": stack.label, "planes": len(stack), "slices": entries}, fh, sort_keys=False)
    return index


def save_curve_csv(curves, path):
    """One CSV with ``alpha_mid`` then one SSIM column per curve label."""
    curves = list(curves)
    mids = curves[0].alpha_mid
    for c in curves[1:]:
        if not np.allclose(c.alpha_mid, mids):
            raise ValueError("curves to overlay must share the alpha grid")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if len(curves) == 1:
            writer.writerow(["alpha_mid", "ssim"])
        else:
            writer.writerow(["alpha_mid"] + [f"ssim_{c.label}" for c in curves])
        for i, a in enumerate(mids):
            writer.writerow([f"{a:.4f}"] + [f"{c.ssim[i]:.8f}" for c in curves])
    return path
