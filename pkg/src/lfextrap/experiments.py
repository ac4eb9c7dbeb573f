"""Evaluation protocols over held-out light fields.

``row``         one extrapolation step per angular row: views 0..Nv_in-1 in,
                the next Nv_in/2 views scored against ground truth.
``side``        central 4x4 of an 8x8 grid extended by one iteration on every
                side; the 1.6X and 2.3X rings are scored.
``noise``       the row protocol with noisy inputs and clean ground truth.
``iterations``  repeated rightward extension along long rows; each
                iteration's new views are scored separately.
``ablation``    the row protocol for each named pipeline variant.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .extrapolate import ExtrapolationPlan, extend_baseline, extend_lines, predict_views
from .lightfield import to_grayscale
from .metrics import PSNR_INF, NoiseSpec, noise_array, psnr, ssim

PROTOCOLS = ("row", "side", "noise", "iterations", "ablation")
CSV_FIELDS = ("scene", "protocol", "level", "view_id", "psnr_db", "ssim", "config_hash", "seed")


@dataclass
class EvalReport:
    protocol: str
    rows: list = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0
    checkpoint: str = ""

    def add(self, scene, level, view_id, gt, pred, crop):
        self.rows.append({
            "scene": scene,
            "protocol": self.protocol,
            "level": str(level),
            "view_id": view_id,
            "psnr_db": psnr(gt, pred, crop=crop),
            "ssim": ssim(gt, pred, crop=crop),
        })

    def levels(self):
        seen = []
        for r in self.rows:
            if r["level"] not in seen:
                seen.append(r["level"])
        return seen

    def mean_psnr(self, level=None):
        """Mean over finite PSNR values; exact matches (the infinity sentinel) are excluded."""
        vals = [r["psnr_db"] for r in self.rows if level is None or r["level"] == str(level)]
        finite = [v for v in vals if math.isfinite(v)]
        if not vals:
            raise ValueError(f"no rows at level {level!r}")
        return float(np.mean(finite)) if finite else PSNR_INF

    def mean_ssim(self, level=None):
        return float(np.mean([r["ssim"] for r in self.rows if level is None or r["level"] == str(level)]))

    def summary(self):
        return {lvl: (self.mean_psnr(lvl), self.mean_ssim(lvl)) for lvl in self.levels()}

    def write_csv(self, path, append=False):
        new = not append
        with open(path, "a" if append else "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            if new:
                writer.writeheader()
            for r in self.rows:
                writer.writerow({**r, "psnr_db": f"{r['psnr_db']:.6f}", "ssim": f"{r['ssim']:.6f}",
                                 "config_hash": self.config_hash, "seed": self.seed})
        return path


@dataclass
class Model:
    params: object
    cfg: object
    options: object


def _row_windows(lightfields, views_in, need):
    """``(scene, line id, views [H, W, need] per channel)`` for each horizontal line with enough views."""
    for lf in lightfields:
        if lf.grid_cols < need:
            continue
        for u in range(lf.grid_rows):
            for c in range(lf.channels):
                yield lf.name, f"r{u:02d}c{c}", np.asarray(lf.views[u, :need, :, :, c]).transpose(1, 2, 0)


def _check(lightfields):
    lightfields = list(lightfields)
    if not lightfields:
        raise ValueError("evaluation needs at least one light field")
    return lightfields


def eval_rows(model, lightfields, crop, protocol="row", level="1", noise=None, report=None):
    lightfields = _check(lightfields)
    nv = model.params.views_in
    half = nv // 2
    report = report or EvalReport(protocol)
    items = list(_row_windows(lightfields, nv, nv + half))
    if not items:
        raise ValueError(f"no light field has {nv + half} views in a row")
    stack = np.stack([v for _, _, v in items]).astype(np.float32)
    inputs = stack[..., :nv]
    if noise is not None:
        inputs = noise_array(inputs[..., None], noise)[..., 0].astype(np.float32)
    pred = predict_views(model.params, inputs, model.cfg, model.options)
    for (scene, line, _), p, gt in zip(items, pred, stack[..., nv:]):
        for k in range(half):
            report.add(scene, level, f"{line}v{nv + k}", gt[..., k], p[..., k], crop)
    return report


def eval_noise(model, lightfields, crop, percents, sigmas, seed=0):
    report = EvalReport("noise")
    for p in percents:
        spec = NoiseSpec("salt-and-pepper", percent=float(p), seed=seed)
        eval_rows(model, lightfields, crop, level=f"sp:{p:g}", noise=spec, report=report)
    for s in sigmas:
        spec = NoiseSpec("gaussian", sigma=float(s), seed=seed)
        eval_rows(model, lightfields, crop, level=f"gauss:{s:g}", noise=spec, report=report)
    return report


def eval_iterations(model, lightfields, crop, max_iterations):
    lightfields = _check(lightfields)
    nv = model.params.views_in
    half = nv // 2
    need = nv + half * max_iterations
    items = list(_row_windows(lightfields, nv, need))
    if not items:
        raise ValueError(f"iteration sweep needs rows of {need} views")
    stack = np.stack([v for _, _, v in items]).astype(np.float32)
    ext = extend_lines(stack[..., :nv], model.params, model.cfg, model.options, max_iterations, ("right",))
    report = EvalReport("iterations")
    for (scene, line, _), e, gt in zip(items, ext, stack):
        for it in range(1, max_iterations + 1):
            for k in range(nv + half * (it - 1), nv + half * it):
                report.add(scene, it, f"{line}v{k}", gt[..., k], e[..., k], crop)
    return report


def ring_of(index, lo, hi):
    """Angular distance of a grid index outside the central block ``[lo, hi)``."""
    if index < lo:
        return lo - index
    if index >= hi:
        return index - hi + 1
    return 0


def eval_side(model, lightfields, crop):
    """Central 4x4 of an 8x8 grid, one iteration per side, rings scored as 1.6X / 2.3X."""
    lightfields = _check(lightfields)
    nv = model.params.views_in
    half = nv // 2
    report = EvalReport("side")
    plan = ExtrapolationPlan(iterations=1, views_in=nv)
    factor = {1: "1.6X", 2: "2.3X"}
    for lf in lightfields:
        full = nv + 2 * half
        if lf.grid_rows < full or lf.grid_cols < full:
            raise ValueError(f"{lf.name}: side protocol needs a {full}x{full} grid")
        r0 = (lf.grid_rows - full) // 2 + half
        c0 = (lf.grid_cols - full) // 2 + half
        centre = lf.crop_grid(slice(r0, r0 + nv), slice(c0, c0 + nv))
        ext = extend_baseline(centre, plan, model.cfg, model.params, model.options)
        gt = lf.views[r0 - half : r0 + nv + half, c0 - half : c0 + nv + half]
        for i in range(full):
            for j in range(full):
                ring = max(ring_of(i, half, half + nv), ring_of(j, half, half + nv))
                if ring == 0:
                    continue
                level = factor.get(ring, f"ring{ring}")
                report.add(lf.name, level, f"u{i}v{j}", gt[i, j], ext.views[i, j], crop)
    return report


def run_experiment(protocol, models, lightfields, metric_cfg, config_hash="", seed=0, checkpoint=""):
    """Run one named protocol; ``models`` maps variant names to :class:`Model`.

    Every protocol except ``ablation`` uses the ``full`` model (or the only one given).
    Returns a list of reports (one per variant for ``ablation``).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    if not models:
        raise ValueError("no model given")
    lightfields = _check(lightfields)
    main = models.get("full") or next(iter(models.values()))
    crop = metric_cfg.crop
    if protocol == "row":
        reports = [eval_rows(main, lightfields, crop)]
    elif protocol == "side":
        reports = [eval_side(main, lightfields, crop)]
    elif protocol == "noise":
        reports = [eval_noise(main, lightfields, crop, metric_cfg.noise_percent, metric_cfg.noise_sigma, seed)]
    elif protocol == "iterations":
        reports = [eval_iterations(main, lightfields, crop, metric_cfg.max_iterations)]
    else:
        reports = []
        for name, model in models.items():
            reports.append(eval_rows(model, lightfields, crop, protocol="ablation", level=name))
    for r in reports:
        r.config_hash, r.seed, r.checkpoint = config_hash, seed, checkpoint
    return reports


def grayscale_all(lightfields):
    return [to_grayscale(lf) for lf in lightfields]
