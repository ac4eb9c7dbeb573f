"""Layered synthetic light fields with exact disparity ground truth.

Each layer is a texture times an opacity mask living on a fronto-parallel
plane. View ``(u, v)`` sees the layer translated by ``delta * (v - v_c)``
pixels along x and ``delta * (u - u_c)`` along y, with ``(u_c, v_c)`` the
grid centre, i.e. ``view(y, x) = layer(y - delta*(u - u_c), x - delta*(v - v_c))``.
Layers are composited back to front in order of increasing disparity
(larger disparity is nearer).

Textures are evaluated analytically at continuous coordinates, so
fractional disparities are rendered exactly rather than interpolated.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import yaml
from PIL import Image

from .lightfield import LightField

TEXTURES = ("noise", "checker", "image")
MASK_SHAPES = ("full", "rect", "disk")


@dataclass(frozen=True)
class MaskSpec:
    """Opacity footprint in central-view pixel coordinates relative to the image centre."""

    shape: str = "full"
    center: tuple = (0.0, 0.0)
    size: tuple = (0.0, 0.0)
    radius: float = 0.0
    softness: float = 1.0

    def __post_init__(self):
        if self.shape not in MASK_SHAPES:
            raise ValueError(f"mask shape must be one of {MASK_SHAPES}, got {self.shape!r}")
        if self.softness < 0:
            raise ValueError("mask softness must be non-negative")

    def evaluate(self, ly, lx):
        if self.shape == "full":
            return np.ones(np.broadcast(ly, lx).shape)
        cy, cx = self.center
        if self.shape == "rect":
            hy, hx = self.size[0] / 2.0, self.size[1] / 2.0
            sd = np.minimum(hy - np.abs(ly - cy), hx - np.abs(lx - cx))
        else:
            sd = self.radius - np.hypot(ly - cy, lx - cx)
        if self.softness == 0:
            return (sd >= 0).astype(np.float64)
        return np.clip(0.5 + sd / self.softness, 0.0, 1.0)


@dataclass(frozen=True)
class LayerSpec:
    disparity: float
    texture: str = "noise"
    mask: MaskSpec = field(default_factory=MaskSpec)
    max_frequency: float = 0.12
    components: int = 48
    contrast: float = 0.18
    period: float = 8.0
    image_path: str = None

    def __post_init__(self):
        if self.texture not in TEXTURES:
            raise ValueError(f"texture must be one of {TEXTURES}, got {self.texture!r}")
        if self.texture == "image" and not self.image_path:
            raise ValueError("image texture needs image_path")
        if not 0 < self.max_frequency <= 0.5:
            raise ValueError("max_frequency must be in (0, 0.5] cycles per pixel")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    layers: tuple
    grid: tuple = (8, 8)
    size: tuple = (128, 128)
    seed: int = 0
    disparity_range: tuple = (-3.0, 3.0)
    channels: int = 1
    name: str = "synthetic"

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("scene needs at least one layer")
        dmin, dmax = self.disparity_range
        if dmin > dmax:
            raise ValueError("disparity range is inverted")
        for layer in layers:
            if not dmin <= layer.disparity <= dmax:
                raise ValueError(
                    f"layer disparity {layer.disparity} outside declared range [{dmin}, {dmax}]"
                )
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if min(self.grid) < 1 or min(self.size) < 1:
            raise ValueError("grid and size must be positive")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))


class _Texture:
    """Continuous texture ``f(y, x) -> [0, 1]`` for one layer and channel."""

    def __init__(self, layer, rng):
        self.layer = layer
        if layer.texture == "noise":
            k = layer.components
            freq = rng.uniform(0.1 * layer.max_frequency, layer.max_frequency, k)
            theta = rng.uniform(0.0, np.pi, k)
            self.phase = rng.uniform(0.0, 2 * np.pi, k)
            amp = 1.0 / freq
            # std of a sum of random-phase cosines is sqrt(sum(a^2) / 2)
            self.amp = amp / np.sqrt(np.sum(amp**2) / 2.0)
            self.ky = 2 * np.pi * freq * np.sin(theta)
            self.kx = 2 * np.pi * freq * np.cos(theta)
            self.mean = rng.uniform(0.4, 0.6)
        elif layer.texture == "checker":
            self.level = rng.uniform(0.15, 0.35), rng.uniform(0.65, 0.85)
        else:
            with Image.open(layer.image_path) as im:
                self.image = np.asarray(im.convert("L"), dtype=np.float64) / 255.0

    def __call__(self, ly, lx):
        layer = self.layer
        if layer.texture == "noise":
            acc = np.zeros(np.broadcast(ly, lx).shape)
            for a, ky, kx, ph in zip(self.amp, self.ky, self.kx, self.phase):
                acc += a * np.cos(ky * ly + kx * lx + ph)
            return np.clip(self.mean + layer.contrast * acc, 0.0, 1.0)
        if layer.texture == "checker":
            parity = (np.floor(ly / layer.period) + np.floor(lx / layer.period)) % 2
            lo, hi = self.level
            return np.where(parity == 0, lo, hi)
        return _bilinear_clamped(self.image, ly + self.image.shape[0] / 2.0, lx + self.image.shape[1] / 2.0)


def _bilinear_clamped(img, y, x):
    h, w = img.shape
    y = np.clip(y, 0, h - 1)
    x = np.clip(x, 0, w - 1)
    y0 = np.minimum(np.floor(y).astype(int), h - 2 if h > 1 else 0)
    x0 = np.minimum(np.floor(x).astype(int), w - 2 if w > 1 else 0)
    fy, fx = y - y0, x - x0
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1 - fy) * top + fy * bot


def layer_coordinates(spec, u, v, y, x, disparity):
    """Layer-plane coordinates seen at pixel ``(y, x)`` of view ``(u, v)`` (centre-relative)."""
    rows, cols = spec.grid
    uc, vc = (rows - 1) / 2.0, (cols - 1) / 2.0
    h, w = spec.size
    ly = (y - (h - 1) / 2.0) - disparity * (u - uc)
    lx = (x - (w - 1) / 2.0) - disparity * (v - vc)
    return ly, lx


def build_textures(spec):
    """Per-layer, per-channel texture callables, seeded deterministically from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    return [[_Texture(layer, rng) for _ in range(spec.channels)] for layer in spec.layers]


def compositing_order(spec):
    return sorted(range(len(spec.layers)), key=lambda i: spec.layers[i].disparity)


def generate_synthetic(spec):
    """Render ``spec``; returns ``(LightField, per-layer disparities)``."""
    rows, cols = spec.grid
    h, w = spec.size
    for layer in spec.layers:
        d = abs(layer.disparity)
        if d * (cols - 1) / 2.0 >= w or d * (rows - 1) / 2.0 >= h:
            raise ValueError(f"layer with disparity {layer.disparity} leaves the frame entirely")
    textures = build_textures(spec)
    order = compositing_order(spec)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    views = np.zeros((rows, cols, h, w, spec.channels))
    for u in range(rows):
        for v in range(cols):
            out = np.zeros((h, w, spec.channels))
            for i in order:
                layer = spec.layers[i]
                ly, lx = layer_coordinates(spec, u, v, yy, xx, layer.disparity)
                alpha = layer.mask.evaluate(ly, lx)[..., None]
                tex = np.stack([t(ly, lx) for t in textures[i]], axis=-1)
                out = alpha * tex + (1.0 - alpha) * out
            views[u, v] = out
    lf = LightField(views=np.clip(views, 0.0, 1.0), disparity_range=spec.disparity_range, name=spec.name)
    return lf, np.array([layer.disparity for layer in spec.layers])


def single_plane_scene(disparity, grid=(8, 8), size=(128, 128), seed=0, texture="noise", **kw):
    layer = LayerSpec(disparity=disparity, texture=texture, **kw)
    return SyntheticSceneSpec(layers=(layer,), grid=grid, size=size, seed=seed, name=f"plane_{disparity:+.2f}")


def two_plane_scene(back, front, grid=(8, 8), size=(128, 128), seed=0, front_mask=None, **kw):
    """Textured background plus an opaque foreground rectangle."""
    h, w = size
    if front_mask is None:
        front_mask = MaskSpec(shape="rect", center=(0.0, 0.0), size=(0.5 * h, 0.5 * w), softness=1.0)
    layers = (
        LayerSpec(disparity=back, **kw),
        LayerSpec(disparity=front, mask=front_mask, **kw),
    )
    return SyntheticSceneSpec(
        layers=layers, grid=grid, size=size, seed=seed, name=f"two_plane_{back:+.2f}_{front:+.2f}"
    )


def random_scene(rng, grid, size, disparity_range=(-3.0, 3.0), two_plane_prob=0.5, **kw):
    """Draw a single- or two-plane scene with disparities uniform in ``disparity_range``."""
    lo, hi = disparity_range
    seed = int(rng.integers(0, 2**31 - 1))
    if rng.random() < two_plane_prob:
        d = np.sort(rng.uniform(lo, hi, 2))
        h, w = size
        mask = MaskSpec(
            shape=("rect", "disk")[int(rng.integers(0, 2))],
            center=(float(rng.uniform(-h / 6, h / 6)), float(rng.uniform(-w / 6, w / 6))),
            size=(float(rng.uniform(0.3, 0.6) * h), float(rng.uniform(0.3, 0.6) * w)),
            radius=float(rng.uniform(0.15, 0.3) * min(h, w)),
            softness=1.0,
        )
        spec = two_plane_scene(float(d[0]), float(d[1]), grid=grid, size=size, seed=seed, front_mask=mask, **kw)
    else:
        spec = single_plane_scene(float(rng.uniform(lo, hi)), grid=grid, size=size, seed=seed, **kw)
    return SyntheticSceneSpec(
        layers=spec.layers, grid=spec.grid, size=spec.size, seed=spec.seed,
        disparity_range=disparity_range, channels=spec.channels, name=spec.name,
    )


# -- spec files --------------------------------------------------------------

def _mask_from_dict(d):
    if d is None or d == "full":
        return MaskSpec()
    d = dict(d)
    for key in ("center", "size"):
        if key in d:
            d[key] = tuple(float(x) for x in d[key])
    return MaskSpec(**d)


def _scene_from_dict(d):
    d = dict(d)
    layers = []
    for ld in d.pop("layers"):
        ld = dict(ld)
        ld["mask"] = _mask_from_dict(ld.get("mask"))
        layers.append(LayerSpec(**ld))
    for key in ("grid", "size", "disparity_range"):
        if key in d:
            d[key] = tuple(d[key])
    return SyntheticSceneSpec(layers=tuple(layers), **d)


def scene_to_dict(spec):
    def mask(m):
        return {"shape": m.shape, "center": list(m.center), "size": list(m.size),
                "radius": m.radius, "softness": m.softness}

    return {
        "name": spec.name,
        "grid": list(spec.grid),
        "size": list(spec.size),
        "seed": spec.seed,
        "disparity_range": [float(x) for x in spec.disparity_range],
        "channels": spec.channels,
        "layers": [
            {
                "disparity": float(layer.disparity),
                "texture": layer.texture,
                "mask": mask(layer.mask),
                "max_frequency": layer.max_frequency,
                "components": layer.components,
                "contrast": layer.contrast,
                "period": layer.period,
                "image_path": layer.image_path,
            }
            for layer in spec.layers
        ],
    }


def load_scene_specs(path):
    """Read one scene (a mapping) or several (``scenes: [...]``) from a YAML file."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: scene spec must be a mapping")
    try:
        if "scenes" in doc:
            return [_scene_from_dict(s) for s in doc["scenes"]]
        return [_scene_from_dict(doc)]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: invalid scene spec: {exc}") from exc


def save_scene_specs(specs, path):
    with open(path, "w") as fh:
        yaml.safe_dump({"scenes": [scene_to_dict(s) for s in specs]}, fh, sort_keys=False)


def make_dataset(n_scenes, grid, size, disparity_range=(-3.0, 3.0), two_plane_prob=0.5, seed=0, prefix="scene"):
    """``n_scenes`` random single/two-plane light fields, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_scenes):
        spec = random_scene(rng, grid, size, disparity_range, two_plane_prob)
        lf, _ = generate_synthetic(replace(spec, name=f"{prefix}{i:03d}"))
        out.append(lf)
    return out
