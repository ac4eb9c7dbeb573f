"""Image quality metrics, error maps and noise injection.

All images are floating point with peak 1.0. SSIM uses the standard
11x11 Gaussian window (sigma 1.5) with k1 = 0.01, k2 = 0.03, evaluated on
fully-overlapping windows only; multi-channel images average per-channel
SSIM maps.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

PSNR_INF = float("inf")
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _same_shape(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def crop_border(img, crop):
    """Drop ``crop`` pixels from each side of the two leading (spatial) axes."""
    if crop <= 0:
        return img
    if 2 * crop >= min(img.shape[0], img.shape[1]):
        raise ValueError(f"crop of {crop}px leaves nothing of a {img.shape[:2]} image")
    return img[crop:-crop, crop:-crop]


def psnr(a, b, crop=0):
    """``10 log10(1 / MSE)``; identical images give :data:`PSNR_INF`."""
    a, b = _same_shape(a, b, "psnr")
    a, b = crop_border(a, crop), crop_border(b, crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * np.log10(1.0 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    half = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[half : img.shape[0] - half, half : img.shape[1] - half]


def ssim_map(a, b, peak=1.0):
    """Per-window SSIM of two 2-D images (valid windows only)."""
    a, b = _same_shape(a, b, "ssim")
    if a.ndim != 2:
        raise ValueError("ssim_map expects 2-D images")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}px SSIM window")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, crop=0, peak=1.0):
    """Mean SSIM; ``[H, W, C]`` inputs average the per-channel maps."""
    a, b = _same_shape(a, b, "ssim")
    a, b = crop_border(a, crop), crop_border(b, crop)
    if a.ndim == 2:
        return float(np.mean(ssim_map(a, b, peak)))
    if a.ndim == 3:
        return float(np.mean([np.mean(ssim_map(a[..., k], b[..., k], peak)) for k in range(a.shape[2])]))
    raise ValueError("ssim expects [H, W] or [H, W, C] images")


def error_map(gt, pred, gain=1.0):
    """Absolute difference, optionally gain-scaled and clipped to [0, 1] for display.

    Returns ``(raw, display)``.
    """
    gt, pred = _same_shape(getattr(gt, "data", gt), getattr(pred, "data", pred), "error_map")
    raw = np.abs(gt - pred)
    return raw, np.clip(raw * gain, 0.0, 1.0)


# -- noise --------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """``kind`` is ``salt-and-pepper`` (``percent`` of pixels) or ``gaussian``
    (``sigma`` on the 0-255 scale, zero mean)."""

    kind: str = "gaussian"
    percent: float = 0.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("salt-and-pepper", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.percent <= 100.0:
            raise ValueError("percent must lie in [0, 100]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def level(self):
        return self.percent if self.kind == "salt-and-pepper" else self.sigma


def noise_array(views, spec, rng=None):
    """Noisy copy of an array of views ``[..., H, W, C]``; a pixel is one ``(y, x)``
    site, so salt-and-pepper sets all channels of a chosen pixel together."""
    views = np.asarray(views, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if spec.kind == "gaussian":
        if spec.sigma == 0:
            return views.copy()
        return np.clip(views + rng.normal(0.0, spec.sigma / 255.0, views.shape), 0.0, 1.0)
    out = views.copy()
    if spec.percent == 0:
        return out
    sites = views.shape[:-1]
    hit = rng.random(sites) < spec.percent / 100.0
    salt = rng.random(sites) < 0.5
    out[hit] = salt[hit][:, None].astype(np.float64)
    return out


def inject_noise(lf, spec):
    """Light field with noise applied to every view; deterministic under ``spec.seed``."""
    return lf.with_views(noise_array(lf.views, spec))
