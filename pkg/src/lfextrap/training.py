"""Two-stage training of the extrapolation network.

Stage ``A`` fits the extrapolation net alone: every shear's candidates are
compared against the target views forward-sheared into that shear's frame.
Stage ``B`` fits fusion and extrapolation end to end on the fused output.

Samples are horizontal strips spanning the full view width, cut from
windows of ``Nv_in + Nv_in/2`` consecutive views. Shearing happens on the
full strip, and a column margin is excluded from the loss so the clamp
bands of forward and backward shearing never enter the objective.

Every step draws its batch from ``default_rng([seed, stage, step])``, so a
run resumed from any checkpoint replays the uninterrupted loss curve.
"""

import json
import math
import os
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, halving_schedule, load_checkpoint, loss_l1_grad, save_checkpoint
from .lightfield import extract_epi_volume, to_grayscale
from .network import SenetParams, extrapolate_candidates, fuse_candidates, init_params
from .shear import ShearConfig, shear_many

STAGES = ("A", "B")
_STAGE_ID = {"A": 1, "B": 2}


class TrainingDivergedError(RuntimeError):
    """Raised on a non-finite loss or gradient; ``checkpoint`` names the last good state."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class PipelineOptions:
    """Ablation switches. ``shear=False`` collapses the stack to one unsheared volume."""

    fusion: bool = True
    backward_shear: bool = True
    shear: bool = True

    def effective_shear(self, cfg):
        if self.shear:
            return cfg
        return replace(cfg, K=0)


ABLATIONS = {
    "full": PipelineOptions(),
    "no-fusion": PipelineOptions(fusion=False),
    "no-backward-shear": PipelineOptions(backward_shear=False),
    "no-shear": PipelineOptions(shear=False),
}


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-4
    lr_period: int = 200
    eps: float = 1e-4
    batch: int = 8
    patch_h: int = 64
    gamma: float = 2.0
    seed: int = 0
    steps_a: int = 2000
    steps_b: int = 2000
    loss_margin: int = -1
    supervise: str = "all"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if self.batch < 1 or self.patch_h < 4 or self.patch_h % 4:
            raise ValueError("batch must be >= 1 and patch_h a positive multiple of 4")
        if self.steps_a < 0 or self.steps_b < 0:
            raise ValueError("step budgets must be non-negative")
        if self.supervise not in ("all", "best"):
            raise ValueError("supervise must be 'all' or 'best'")


def auto_margin(cfg, views_in):
    """Columns excluded on each side of a strip: the widest shear displacement used."""
    last = views_in + views_in // 2 - 1
    reach = max(abs(last - cfg.ref_view), abs(cfg.ref_view))
    return int(math.ceil(cfg.K * cfg.spacing * reach))


# -- data ---------------------------------------------------------------------

class TrainingSet:
    """Windows of consecutive grayscale views drawn from horizontal and vertical EPI volumes."""

    def __init__(self, lightfields, views_in=4, axes=("horizontal", "vertical"), reverse=True):
        self.views_in = views_in
        self.window = views_in + views_in // 2
        self.reverse = reverse
        self.volumes = []
        for lf in lightfields:
            gray = to_grayscale(lf)
            for axis in axes:
                count = gray.grid_rows if axis == "horizontal" else gray.grid_cols
                lines = gray.grid_cols if axis == "horizontal" else gray.grid_rows
                if lines < self.window:
                    continue
                for i in range(count):
                    self.volumes.append(np.asarray(extract_epi_volume(gray, axis, i).data, dtype=np.float32))
        if not self.volumes:
            raise ValueError(f"no EPI line has the {self.window} views a training window needs")
        widths = {v.shape[1] for v in self.volumes}
        if len(widths) != 1:
            raise ValueError("training volumes must share one width")
        self.width = widths.pop()
        self.windows = [(i, s) for i, v in enumerate(self.volumes) for s in range(v.shape[2] - self.window + 1)]

    def __len__(self):
        return len(self.windows)

    def strips_per_epoch(self, patch_h):
        return sum(self.volumes[i].shape[0] // patch_h for i, _ in self.windows) * (2 if self.reverse else 1)

    def sample(self, rng, batch, patch_h):
        """``(inputs [B, ph, W, Nv_in], targets [B, ph, W, Nv_in/2])``."""
        xs = np.empty((batch, patch_h, self.width, self.window), dtype=np.float32)
        for b in range(batch):
            vi, start = self.windows[int(rng.integers(len(self.windows)))]
            vol = self.volumes[vi]
            y0 = int(rng.integers(vol.shape[0] - patch_h + 1))
            block = vol[y0 : y0 + patch_h, :, start : start + self.window]
            if self.reverse and rng.random() < 0.5:
                block = block[:, :, ::-1]
            xs[b] = block
        return xs[..., : self.views_in], xs[..., self.views_in :]


# -- forward pass and loss ----------------------------------------------------

def pipeline_forward(params, inputs, cfg, options, stage="B"):
    """Forward pass on ``[B, H, W, Nv_in]`` strips.

    Stage ``A`` returns candidates ``[B, S, H, W, Nv_in/2]``; stage ``B``
    returns ``(views [B, H, W, Nv_in/2], weights)``.
    """
    cfg = options.effective_shear(cfg)
    v = inputs.shape[-1]
    offsets = tuple(range(v))
    stacks = shear_many(inputs, offsets, cfg.shear_values, cfg.ref_view, cfg.boundary)
    cands = extrapolate_candidates(stacks, params)
    if stage == "A":
        return cands
    return fuse_candidates(
        stacks, cands, cfg.shear_values, params, view_offsets=offsets, ref_view=cfg.ref_view,
        boundary=cfg.boundary, fusion=options.fusion, backward_shear=options.backward_shear,
    )


def stage_a_targets(targets, cfg, options, views_in):
    """Targets in each candidate's frame: ``[B, S, H, W, Nv_in/2]``."""
    cfg = options.effective_shear(cfg)
    if not options.backward_shear:
        return np.repeat(targets[:, None], cfg.n_shears, axis=1)
    new = tuple(range(views_in, views_in + targets.shape[-1]))
    return shear_many(targets, new, cfg.shear_values, cfg.ref_view, cfg.boundary)


def step_loss(params, inputs, targets, cfg, options, hyper, stage, margin):
    b, h, w, half = targets.shape
    cols = slice(margin, w - margin)
    if stage == "A":
        cands = pipeline_forward(params, inputs, cfg, options, "A")
        tgt = stage_a_targets(targets, cfg, options, inputs.shape[-1])
        s = tgt.shape[1]
        pred = cands[:, :, :, cols].reshape(b * s, h, w - 2 * margin, half)
        gt = np.ascontiguousarray(tgt[:, :, :, cols]).reshape(b * s, h, w - 2 * margin, half)
        if hyper.supervise == "best" and s > 1:
            err = np.abs(cands.data[:, :, :, cols] - tgt[:, :, :, cols]).mean(axis=(2, 3, 4))
            mask = np.zeros((b, s, 1, 1, 1), dtype=np.float32)
            mask[np.arange(b), err.argmin(axis=1)] = 1.0
            mask = np.broadcast_to(mask, (b, s, h, w - 2 * margin, half)).reshape(pred.shape)
            return loss_l1_grad(pred * Tensor(mask), gt * mask, hyper.gamma) * float(s)
        return loss_l1_grad(pred, gt, hyper.gamma)
    out, _ = pipeline_forward(params, inputs, cfg, options, "B")
    return loss_l1_grad(out[:, :, cols], np.ascontiguousarray(targets[:, :, cols]), hyper.gamma)


# -- loop -------------------------------------------------------------------

@dataclass
class TrainResult:
    params: SenetParams
    losses: list
    checkpoint: str
    log_path: str


def _stage_names(params, stage):
    if stage == "A":
        return [k for k in params.tensors if k.startswith("extrap/")]
    return list(params.tensors)


def _metadata(params, cfg, options, hyper, stage, step, extra):
    meta = params.metadata()
    meta.update(
        stage=stage, step=step, shear=asdict(cfg), options=asdict(options), hyper=asdict(hyper), **(extra or {})
    )
    return meta


def train(
    dataset,
    cfg=None,
    hyper=None,
    options=None,
    out_dir=None,
    views_in=4,
    params=None,
    resume=None,
    stages=STAGES,
    metadata=None,
    log=None,
):
    """Run stage A then stage B; returns a :class:`TrainResult`.

    ``dataset`` is a :class:`TrainingSet` or a list of light fields.
    ``resume`` names a checkpoint written by a previous call; training
    continues from its stage and step with its Adam state. ``params``
    seeds the weights (e.g. a shared stage-A result) when not resuming.
    """
    cfg = cfg or ShearConfig()
    hyper = hyper or TrainHyper()
    options = options or PipelineOptions()
    data = dataset if isinstance(dataset, TrainingSet) else TrainingSet(dataset, views_in)
    views_in = data.views_in
    eff = options.effective_shear(cfg)
    margin = auto_margin(eff, views_in) if hyper.loss_margin < 0 else hyper.loss_margin
    if data.width - 2 * margin < 2:
        raise ValueError(f"strip width {data.width} leaves no columns after a {margin}px margin")

    adam, start_stage, start_step = None, stages[0], 0
    if resume is not None:
        arrays, meta, adam = load_checkpoint(resume)
        params = SenetParams.from_arrays(arrays, meta)
        start_stage, start_step = meta["stage"], int(meta["step"])
    elif params is None:
        params = init_params(views_in, eff.n_shears, seed=hyper.seed)
    if params.n_shears != eff.n_shears or params.views_in != views_in:
        raise ValueError("parameters do not match the configured shear count / view count")

    ckpt_path = log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "checkpoint.bin")
        log_path = os.path.join(out_dir, "train_log.jsonl")

    steps_per_epoch = max(1, math.ceil(data.strips_per_epoch(hyper.patch_h) / hyper.batch))
    budgets = {"A": hyper.steps_a, "B": hyper.steps_b}
    losses = []
    last_good = resume
    for stage in stages[stages.index(start_stage):]:
        first = start_step if stage == start_stage else 0
        if stage != start_stage or adam is None:
            adam = AdamState(lr=hyper.lr, eps=hyper.eps)
        names = _stage_names(params, stage)
        for step in range(first, budgets[stage]):
            epoch = step // steps_per_epoch + 1
            adam.lr = halving_schedule(epoch, hyper.lr, hyper.lr_period)
            rng = np.random.default_rng([hyper.seed, _STAGE_ID[stage], step])
            inputs, targets = data.sample(rng, hyper.batch, hyper.patch_h)
            t0 = time.perf_counter()
            try:
                loss = step_loss(params, inputs, targets, eff, options, hyper, stage, margin)
                params.zero_grad()
                loss.backward()
                grads = {k: params[k].grad for k in names}
                adam_step({k: params[k].data for k in names}, grads, adam)
            except FloatingPointError as exc:
                raise TrainingDivergedError(f"stage {stage} step {step}: {exc}", last_good) from exc
            value = loss.item()
            losses.append(value)
            record = {"step": step, "stage": stage, "epoch": epoch, "loss": value, "lr": adam.lr,
                      "seconds": round(time.perf_counter() - t0, 4)}
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps(record) + "\n")
            if log is not None:
                log(record)
            done = step + 1
            end_epoch = done % steps_per_epoch == 0
            periodic = hyper.checkpoint_every and done % hyper.checkpoint_every == 0
            if ckpt_path is not None and (end_epoch or periodic or done == budgets[stage]):
                meta = _metadata(params, cfg, options, hyper, stage, done, metadata)
                save_checkpoint(ckpt_path, params.arrays(), meta, adam)
                last_good = ckpt_path
    params.zero_grad()
    if ckpt_path is not None:
        final = _metadata(params, cfg, options, hyper, stages[-1], budgets[stages[-1]], metadata)
        save_checkpoint(ckpt_path, params.arrays(), final, adam)
    return TrainResult(params=params, losses=losses, checkpoint=ckpt_path, log_path=log_path)


def load_model(path):
    """``(params, shear config, pipeline options, metadata)`` from a training checkpoint."""
    arrays, meta, _ = load_checkpoint(path)
    params = SenetParams.from_arrays(arrays, meta)
    cfg = ShearConfig(**meta["shear"]) if "shear" in meta else ShearConfig()
    options = PipelineOptions(**meta["options"]) if "options" in meta else PipelineOptions()
    return params, cfg, options, meta


def train_variants(dataset, cfg, hyper, variants=tuple(ABLATIONS), out_dir=None, views_in=4, log=None):
    """Train each named ablation variant under the same step budgets.

    ``full`` and ``no-fusion`` run an identical stage A, so it is computed
    once and shared. Returns ``{name: TrainResult}``.
    """
    data = dataset if isinstance(dataset, TrainingSet) else TrainingSet(dataset, views_in)
    results = {}
    shared = None

    def sub(name):
        return None if out_dir is None else os.path.join(out_dir, name)

    for name in variants:
        options = ABLATIONS[name]
        if name in ("full", "no-fusion"):
            if shared is None:
                shared = train(data, cfg, hyper, ABLATIONS["full"], sub("stage-a"), stages=("A",), log=log)
            start = SenetParams.from_arrays({k: v.copy() for k, v in shared.params.arrays().items()},
                                            shared.params.metadata())
            res = train(data, cfg, hyper, options, sub(name), params=start, stages=("B",),
                        metadata={"variant": name}, log=log)
            res.losses = shared.losses + res.losses
        else:
            res = train(data, cfg, hyper, options, sub(name), metadata={"variant": name}, log=log)
        results[name] = res
    return results
