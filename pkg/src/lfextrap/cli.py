"""``lfextrap`` command line: generate, train, extrapolate, refocus,
precision, evaluate and ablate.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Every command writes ``stamp.yaml`` into its output directory with the
config hash, seed and serial flag.
"""

import contextlib
import csv
import glob
import os
import sys
import warnings

import click
import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, ExperimentConfig, config_hash, load_config, save_config
from .experiments import PROTOCOLS, Model, run_experiment
from .extrapolate import ExtrapolationPlan, extend_baseline
from .lightfield import MANIFEST_NAME, LightFieldFormatError, load_lightfield, save_lightfield
from .refocus import arp_estimate, focal_stack, precision_curve, save_curve_csv, save_focal_stack
from .synthetic import generate_synthetic, load_scene_specs, make_dataset
from .training import ABLATIONS, TrainingSet, load_model, train, train_variants

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _State:
    def __init__(self, cfg, serial, out):
        self.cfg = cfg
        self.serial = serial
        self.out = out


def _limits(serial):
    return threadpool_limits(limits=1) if serial else contextlib.nullcontext()


def _stamp(state, command, **extra):
    os.makedirs(state.out, exist_ok=True)
    stamp = {"command": command, "config_hash": config_hash(state.cfg), "seed": state.cfg.seed,
             "serial": state.serial, "version": __version__, **extra}
    with open(os.path.join(state.out, "stamp.yaml"), "w") as fh:
        yaml.safe_dump(stamp, fh, sort_keys=True)
    save_config(state.cfg, os.path.join(state.out, "config.yaml"))


def _find_lightfields(paths):
    found = []
    for p in paths:
        if os.path.isfile(p) or os.path.isfile(os.path.join(p, MANIFEST_NAME)):
            found.append(p)
        else:
            found.extend(sorted(os.path.dirname(m) for m in glob.glob(os.path.join(p, "*", MANIFEST_NAME))))
    return [load_lightfield(p) for p in found]


def dataset_from_config(cfg, split):
    """Light fields listed in the config, or the seeded synthetic set it describes."""
    d = cfg.data
    dirs = d.train_dirs if split == "train" else d.eval_dirs
    if dirs:
        lfs = _find_lightfields(dirs)
        if not lfs:
            raise click.UsageError(f"no light fields found under {list(dirs)}")
        return lfs
    n = d.n_train if split == "train" else d.n_eval
    seed = d.seed if split == "train" else d.seed + 1000
    if n < 1:
        raise click.UsageError(f"data.n_{split} must be >= 1")
    return make_dataset(n, d.grid, d.size, d.disparity_range, d.two_plane_prob, seed, prefix=f"{split}")


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Experiment config (YAML).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--serial", is_flag=True, help="Single-threaded, bitwise-reproducible execution.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def cli(ctx, config_path, seed, serial, out):
    """Light-field baseline extension by sheared-EPI extrapolation."""
    if config_path is not None and not os.path.exists(config_path):
        raise click.UsageError(f"config file {config_path} does not exist")
    cfg = load_config(config_path) if config_path else ExperimentConfig()
    if seed is not None:
        cfg = cfg.with_seed(seed)
    ctx.obj = _State(cfg, serial, out or cfg.out_dir)
    ctx.with_resource(_limits(serial))


@cli.command()
@click.argument("spec_file", required=False, type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def generate(state, spec_file):
    """Render synthetic scenes (SPEC_FILE, or the config's data section) to light-field directories."""
    cfg = state.cfg
    shear = cfg.shear
    if spec_file:
        try:
            specs = load_scene_specs(spec_file)
        except ValueError as exc:
            raise click.BadParameter(str(exc), param_hint="SPEC_FILE") from exc
        scenes = [generate_synthetic(s)[0] for s in specs]
    else:
        scenes = dataset_from_config(cfg, "train") + dataset_from_config(cfg, "eval")
    for lf in scenes:
        if not shear.covers(lf.disparity_range):
            warnings.warn(f"{lf.name}: disparity range {lf.disparity_range} exceeds shear coverage")
        save_lightfield(lf, os.path.join(state.out, lf.name))
    _stamp(state, "generate", scenes=[lf.name for lf in scenes])
    click.echo(f"wrote {len(scenes)} light fields to {state.out}")


@cli.command("train")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), help="Resume from this checkpoint.")
@click.option("--variant", type=click.Choice(list(ABLATIONS)), default="full")
@click.option("--quiet", is_flag=True)
@click.pass_obj
def train_cmd(state, checkpoint, variant, quiet):
    """Two-stage training; writes checkpoint.bin and train_log.jsonl."""
    cfg = state.cfg
    data = TrainingSet(dataset_from_config(cfg, "train"), cfg.network.views_in)
    log = None if quiet else (lambda r: click.echo(f"{r['stage']} {r['step']:6d} loss={r['loss']:.6f} lr={r['lr']:.2e}"))
    res = train(data, cfg.shear, cfg.train, ABLATIONS[variant], state.out, cfg.network.views_in,
                resume=checkpoint, metadata={"variant": variant, "config_hash": config_hash(cfg)}, log=log)
    _stamp(state, "train", variant=variant, checkpoint=res.checkpoint)
    click.echo(f"checkpoint: {res.checkpoint}")


def _model(path):
    params, shear, options, _ = load_model(path)
    return Model(params, shear, options)


@cli.command()
@click.argument("lf_path", type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--iterations", type=int, default=None, help="Iterations per side (defaults to the config plan).")
@click.pass_obj
def extrapolate(state, lf_path, checkpoint, iterations):
    """Extend the angular baseline of the light field at LF_PATH."""
    cfg = state.cfg
    model = _model(checkpoint)
    try:
        plan = ExtrapolationPlan(cfg.plan.directions, iterations or cfg.plan.iterations,
                                 model.params.views_in, cfg.plan.cap)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--iterations") from exc
    lf = load_lightfield(lf_path)
    ext = extend_baseline(lf, plan, model.cfg, model.params, model.options)
    save_lightfield(ext, state.out, extra={"source": os.path.abspath(lf_path), "iterations": plan.iterations})
    _stamp(state, "extrapolate", checkpoint=os.path.abspath(checkpoint))
    click.echo(f"{lf.grid_rows}x{lf.grid_cols} -> {ext.grid_rows}x{ext.grid_cols} views in {state.out}")


def _stack(cfg, lf, label):
    m = cfg.metrics
    return focal_stack(lf, m.alpha_min, m.alpha_max, m.n_planes, label=label)


@cli.command("refocus")
@click.argument("lf_path", type=click.Path(exists=True))
@click.pass_obj
def refocus_cmd(state, lf_path):
    """Focal stack over the configured disparity sweep."""
    lf = load_lightfield(lf_path)
    stack = _stack(state.cfg, lf, "1.0X")
    save_focal_stack(stack, state.out)
    _stamp(state, "refocus", source=os.path.abspath(lf_path))
    click.echo(f"{len(stack)} refocus planes in {state.out}")


@cli.command()
@click.argument("lf_paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--label", "labels", multiple=True, help="Curve label per light field (e.g. 1.0X, 4.0X).")
@click.option("--alpha0", type=float, multiple=True, help="Planes for axial-precision brackets.")
@click.pass_obj
def precision(state, lf_paths, labels, alpha0):
    """Adjacent-plane SSIM curves; two or more light fields also give an overlay CSV."""
    cfg = state.cfg
    labels = list(labels) or [f"lf{i}" for i in range(len(lf_paths))]
    if len(labels) != len(lf_paths):
        raise click.UsageError("give one --label per light field")
    os.makedirs(state.out, exist_ok=True)
    curves, brackets = [], []
    for path, label in zip(lf_paths, labels):
        stack = _stack(cfg, load_lightfield(path), label)
        curve = precision_curve(stack, crop=cfg.metrics.crop)
        save_curve_csv([curve], os.path.join(state.out, f"precision_{label}.csv"))
        curves.append(curve)
        for a in alpha0:
            b = arp_estimate(stack, a, cfg.metrics.eps_ssim, crop=cfg.metrics.crop)
            brackets.append([label, a, b.lower, b.upper, b.open_lower, b.open_upper])
    if len(curves) > 1:
        save_curve_csv(curves, os.path.join(state.out, "precision_overlay.csv"))
    if brackets:
        with open(os.path.join(state.out, "arp.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "alpha0", "lower", "upper", "open_lower", "open_upper"])
            w.writerows(brackets)
    _stamp(state, "precision", sources=[os.path.abspath(p) for p in lf_paths])
    click.echo(f"wrote {len(curves)} precision curves to {state.out}")


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--protocol", type=click.Choice([p for p in PROTOCOLS if p != "ablation"]), default="row")
@click.option("--data", "data_paths", multiple=True, type=click.Path(exists=True),
              help="Evaluation light fields (defaults to the config's eval set).")
@click.pass_obj
def evaluate(state, checkpoint, protocol, data_paths):
    """Score a checkpoint with one evaluation protocol; writes report.csv."""
    cfg = state.cfg
    lfs = _find_lightfields(data_paths) if data_paths else dataset_from_config(cfg, "eval")
    if not lfs:
        raise click.UsageError("empty evaluation dataset")
    reports = run_experiment(protocol, {"full": _model(checkpoint)}, lfs, cfg.metrics,
                             config_hash(cfg), cfg.seed, os.path.abspath(checkpoint))
    os.makedirs(state.out, exist_ok=True)
    reports[0].write_csv(os.path.join(state.out, "report.csv"))
    _stamp(state, "evaluate", protocol=protocol, checkpoint=os.path.abspath(checkpoint))
    for level, (p, s) in reports[0].summary().items():
        click.echo(f"{protocol} {level}: psnr={p:.3f} dB ssim={s:.4f}")


@cli.command()
@click.option("--model", "models", multiple=True, metavar="NAME=CHECKPOINT",
              help="Pre-trained variant; when omitted all four variants are trained.")
@click.option("--data", "data_paths", multiple=True, type=click.Path(exists=True))
@click.pass_obj
def ablate(state, models, data_paths):
    """Full / no-fusion / no-backward-shear / no-shear comparison; writes ablation.csv."""
    cfg = state.cfg
    if models:
        chosen = {}
        for item in models:
            name, sep, path = item.partition("=")
            if not sep or name not in ABLATIONS:
                raise click.UsageError(f"--model expects NAME=CHECKPOINT with NAME in {list(ABLATIONS)}")
            chosen[name] = _model(path)
    else:
        data = TrainingSet(dataset_from_config(cfg, "train"), cfg.network.views_in)
        results = train_variants(data, cfg.shear, cfg.train, out_dir=state.out, views_in=cfg.network.views_in)
        chosen = {n: Model(r.params, cfg.shear, ABLATIONS[n]) for n, r in results.items()}
    lfs = _find_lightfields(data_paths) if data_paths else dataset_from_config(cfg, "eval")
    reports = run_experiment("ablation", chosen, lfs, cfg.metrics, config_hash(cfg), cfg.seed)
    os.makedirs(state.out, exist_ok=True)
    for i, r in enumerate(reports):
        r.write_csv(os.path.join(state.out, "ablation_views.csv"), append=i > 0)
    with open(os.path.join(state.out, "ablation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "psnr_db", "ssim", "config_hash", "seed"])
        for r in reports:
            level = r.levels()[0]
            w.writerow([level, f"{r.mean_psnr():.6f}", f"{r.mean_ssim():.6f}", r.config_hash, r.seed])
            click.echo(f"{level:18s} psnr={r.mean_psnr():.3f} dB ssim={r.mean_ssim():.4f}")
    _stamp(state, "ablate", variants=list(chosen))


def main(argv=None):
    """Console entry point with the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="lfextrap", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.BadParameter, ConfigError, click.Abort) as exc:
        click.echo(f"error: {getattr(exc, 'format_message', lambda: str(exc))()}", err=True)
        return EXIT_USAGE
    except (LightFieldFormatError, FileNotFoundError, ValueError, RuntimeError, FloatingPointError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
