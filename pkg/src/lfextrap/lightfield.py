"""Light-field data model, manifest I/O, EPI volumes and patch tiling.

A light field is a grid of sub-aperture views stored as one array of
shape ``[U, V, H, W, C]`` (angular rows, angular columns, height, width,
channels) with intensities in ``[0, 1]``.

On disk a light field is a directory of ``view_{row:02}_{col:02}.png``
files plus a YAML manifest carrying the grid size, disparity range,
pixel pitch and the view list.
"""

import os
from dataclasses import dataclass, replace

import numpy as np
import yaml
from PIL import Image

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MANIFEST_NAME = "manifest.yaml"
MANIFEST_FORMAT = "lfextrap-lightfield"
MANIFEST_VERSION = 1


class LightFieldFormatError(ValueError):
    """Raised for malformed manifests, missing views, holes or size mismatches."""


def _readonly(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LightField:
    views: np.ndarray
    disparity_range: tuple = (-3.0, 3.0)
    name: str = "lightfield"
    pixel_pitch: float = 1.0
    synthetic: np.ndarray = None

    def __post_init__(self):
        views = np.asarray(self.views, dtype=np.float64)
        if views.ndim != 5:
            raise ValueError(f"views must be [U, V, H, W, C], got shape {views.shape}")
        u, v, h, w, c = views.shape
        if min(u, v, h, w) < 1:
            raise ValueError(f"empty light field {views.shape}")
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if not np.all(np.isfinite(views)):
            raise ValueError("light field contains non-finite values")
        if views.min() < 0.0 or views.max() > 1.0:
            raise ValueError("light field intensities must lie in [0, 1]")
        dmin, dmax = (float(d) for d in self.disparity_range)
        if dmin > dmax:
            raise ValueError(f"disparity range ({dmin}, {dmax}) is inverted")
        synthetic = self.synthetic
        if synthetic is None:
            synthetic = np.zeros((u, v), dtype=bool)
        synthetic = np.asarray(synthetic, dtype=bool)
        if synthetic.shape != (u, v):
            raise ValueError("synthetic mask must match the angular grid")
        object.__setattr__(self, "views", _readonly(views))
        object.__setattr__(self, "disparity_range", (dmin, dmax))
        object.__setattr__(self, "synthetic", _readonly(synthetic))

    @property
    def grid_rows(self):
        return self.views.shape[0]

    @property
    def grid_cols(self):
        return self.views.shape[1]

    @property
    def height(self):
        return self.views.shape[2]

    @property
    def width(self):
        return self.views.shape[3]

    @property
    def channels(self):
        return self.views.shape[4]

    @property
    def shape(self):
        return self.views.shape

    def with_views(self, views, **changes):
        return replace(self, views=views, **changes)

    def transposed(self):
        """Swap the angular axes and the spatial axes together (u<->v, y<->x)."""
        return replace(
            self,
            views=self.views.transpose(1, 0, 3, 2, 4),
            synthetic=self.synthetic.T,
        )

    def crop_grid(self, rows, cols):
        """Sub-grid by angular slices, e.g. the central 4x4 of an 8x8 grid."""
        return replace(self, views=self.views[rows, cols], synthetic=self.synthetic[rows, cols])


@dataclass(frozen=True)
class EpiVolume:
    """Views of one angular line stacked as ``[H, W, Nv]``.

    Vertical volumes hold transposed views, so vertical disparity runs along
    the second axis exactly like horizontal disparity does.
    """

    data: np.ndarray
    axis: str = "horizontal"
    index: int = 0
    view_offsets: tuple = None
    origin: tuple = (0, 0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if data.ndim != 3:
            raise ValueError(f"EPI volume must be [H, W, Nv], got {data.shape}")
        nv = data.shape[2]
        if nv < 2:
            raise ValueError("EPI volume needs at least 2 views")
        if not np.all(np.isfinite(data)):
            raise ValueError("EPI volume contains non-finite values")
        if self.axis not in ("horizontal", "vertical"):
            raise ValueError(f"axis must be horizontal or vertical, got {self.axis!r}")
        offsets = tuple(range(nv)) if self.view_offsets is None else tuple(int(o) for o in self.view_offsets)
        if len(offsets) != nv:
            raise ValueError("view_offsets length must equal the number of views")
        if any(b - a != 1 for a, b in zip(offsets, offsets[1:])):
            raise ValueError(f"view offsets must be consecutive increasing integers, got {offsets}")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "view_offsets", offsets)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_views(self):
        return self.data.shape[2]


def to_grayscale(lf):
    """Rec.601 luma for RGB light fields; single-channel input is returned as is."""
    if lf.channels == 1:
        return lf
    gray = np.tensordot(lf.views, np.asarray(LUMA_WEIGHTS), axes=([4], [0]))[..., None]
    return lf.with_views(np.clip(gray, 0.0, 1.0))


def extract_epi_volume(lf, axis, index):
    """Stack the views of angular row ``index`` (horizontal) or column (vertical)."""
    if lf.channels != 1:
        raise ValueError("EPI extraction needs a grayscale light field; call to_grayscale first")
    if axis == "horizontal":
        if not 0 <= index < lf.grid_rows:
            raise IndexError(f"row {index} outside grid of {lf.grid_rows} rows")
        data = lf.views[index, :, :, :, 0].transpose(1, 2, 0)
    elif axis == "vertical":
        if not 0 <= index < lf.grid_cols:
            raise IndexError(f"column {index} outside grid of {lf.grid_cols} columns")
        # transposing each view turns vertical disparity into horizontal disparity
        data = lf.views[:, index, :, :, 0].transpose(2, 1, 0)
    else:
        raise ValueError(f"axis must be horizontal or vertical, got {axis!r}")
    return EpiVolume(data=data, axis=axis, index=index)


def _anchors(size, patch, stride):
    starts = list(range(0, size - patch + 1, stride))
    if starts[-1] != size - patch:
        starts.append(size - patch)
    return starts


def extract_patches(epi, patch_h, patch_w, stride):
    """Tile an EPI volume spatially; the last patch per axis is anchored to the border."""
    h, w, _ = epi.shape
    if patch_h > h or patch_w > w:
        raise ValueError(f"patch {patch_h}x{patch_w} larger than volume {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be positive")
    patches = []
    for y in _anchors(h, patch_h, stride):
        for x in _anchors(w, patch_w, stride):
            patches.append(
                EpiVolume(
                    data=epi.data[y : y + patch_h, x : x + patch_w],
                    axis=epi.axis,
                    index=epi.index,
                    view_offsets=epi.view_offsets,
                    origin=(epi.origin[0] + y, epi.origin[1] + x),
                )
            )
    return patches


# -- file I/O -------------------------------------------------------------

def view_filename(row, col):
    return f"view_{row:02}_{col:02}.png"


def _encode(img, bit_depth):
    if bit_depth == 8:
        q = np.round(img * 255.0).astype(np.uint8)
        return Image.fromarray(q[..., 0] if q.shape[-1] == 1 else q)
    if bit_depth == 16:
        if img.shape[-1] != 1:
            raise ValueError("16-bit emission is supported for grayscale light fields only")
        q = np.round(img[..., 0] * 65535.0).astype(np.uint16)
        return Image.fromarray(q)
    raise ValueError(f"bit depth must be 8 or 16, got {bit_depth}")


def _decode(path):
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            peak = 65535.0
        else:
            if mode == "LA":
                im = im.convert("L")
            elif mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
            peak = 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return np.clip(arr / peak, 0.0, 1.0)


def save_lightfield(lf, out_dir, bit_depth=8, extra=None):
    """Write views and manifest to ``out_dir``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for r in range(lf.grid_rows):
        for c in range(lf.grid_cols):
            fname = view_filename(r, c)
            _encode(lf.views[r, c], bit_depth).save(os.path.join(out_dir, fname))
            entries.append({"row": r, "col": c, "file": fname, "synthetic": bool(lf.synthetic[r, c])})
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "name": lf.name,
        "grid": {"rows": lf.grid_rows, "cols": lf.grid_cols},
        "size": {"height": lf.height, "width": lf.width},
        "channels": lf.channels,
        "bit_depth": bit_depth,
        "disparity_range": [float(d) for d in lf.disparity_range],
        "pixel_pitch": float(lf.pixel_pitch),
        "views": entries,
    }
    if extra:
        manifest["extra"] = extra
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    return path


def load_lightfield(manifest_path):
    """Read a light field from its manifest (or from a directory holding one)."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        try:
            manifest = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise LightFieldFormatError(f"malformed manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise LightFieldFormatError(f"malformed manifest {manifest_path}: expected a mapping")
    try:
        rows = int(manifest["grid"]["rows"])
        cols = int(manifest["grid"]["cols"])
        entries = manifest["views"]
        drange = tuple(float(d) for d in manifest.get("disparity_range", (-3.0, 3.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise LightFieldFormatError(f"malformed manifest {manifest_path}: {exc}") from exc
    if rows < 1 or cols < 1 or not isinstance(entries, list):
        raise LightFieldFormatError(f"malformed manifest {manifest_path}: bad grid or view list")
    base = os.path.dirname(os.path.abspath(manifest_path))
    slots = {}
    for entry in entries:
        try:
            r, c, fname = int(entry["row"]), int(entry["col"]), str(entry["file"])
        except (KeyError, TypeError, ValueError) as exc:
            raise LightFieldFormatError(f"malformed view entry {entry!r}") from exc
        if not (0 <= r < rows and 0 <= c < cols):
            raise LightFieldFormatError(f"view ({r},{c}) outside {rows}x{cols} grid")
        if (r, c) in slots:
            raise LightFieldFormatError(f"duplicate view ({r},{c})")
        slots[(r, c)] = (fname, bool(entry.get("synthetic", False)))
    for r in range(rows):
        for c in range(cols):
            if (r, c) not in slots:
                raise LightFieldFormatError(f"grid hole at ({r},{c})")
    views = None
    synthetic = np.zeros((rows, cols), dtype=bool)
    for (r, c), (fname, synth) in slots.items():
        path = os.path.join(base, fname)
        if not os.path.exists(path):
            raise LightFieldFormatError(f"missing view file {path}")
        img = _decode(path)
        if views is None:
            views = np.empty((rows, cols) + img.shape, dtype=np.float64)
        elif img.shape != views.shape[2:]:
            raise LightFieldFormatError(
                f"view ({r},{c}) has shape {img.shape}, expected {views.shape[2:]}"
            )
        views[r, c] = img
        synthetic[r, c] = synth
    return LightField(
        views=views,
        disparity_range=drange,
        name=str(manifest.get("name", os.path.basename(base))),
        pixel_pitch=float(manifest.get("pixel_pitch", 1.0)),
        synthetic=synthetic,
    )


__all__ = [
    "EpiVolume",
    "LUMA_WEIGHTS",
    "LightField",
    "LightFieldFormatError",
    "extract_epi_volume",
    "extract_patches",
    "load_lightfield",
    "save_lightfield",
    "to_grayscale",
    "view_filename",
]
