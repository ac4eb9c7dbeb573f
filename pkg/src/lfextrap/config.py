"""Experiment configuration: one YAML document driving every command.

The config round-trips through YAML exactly, and :func:`config_hash`
stamps outputs so runs with equal hash and seed can be compared.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .extrapolate import DEFAULT_ITERATION_CAP, DIRECTIONS
from .shear import ShearConfig
from .training import TrainHyper


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class DataConfig:
    """Synthetic data drawn by the generator, or light-field directories on disk."""

    train_dirs: tuple = ()
    eval_dirs: tuple = ()
    n_train: int = 32
    n_eval: int = 8
    grid: tuple = (1, 6)
    size: tuple = (64, 64)
    disparity_range: tuple = (-3.0, 3.0)
    two_plane_prob: float = 0.5
    seed: int = 1


@dataclass(frozen=True)
class NetworkConfig:
    views_in: int = 4


@dataclass(frozen=True)
class PlanConfig:
    directions: tuple = DIRECTIONS
    iterations: int = 1
    cap: int = DEFAULT_ITERATION_CAP


@dataclass(frozen=True)
class MetricConfig:
    crop: int = 8
    eps_ssim: float = 0.05
    alpha_min: float = -3.0
    alpha_max: float = 3.0
    n_planes: int = 61
    noise_percent: tuple = (0.1, 0.5, 1.0, 1.5, 2.0)
    noise_sigma: tuple = (5.0, 10.0, 20.0, 30.0)
    max_iterations: int = 6


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    shear: ShearConfig = field(default_factory=ShearConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    plan: PlanConfig = field(default_factory=PlanConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    out_dir: str = "runs/default"
    seed: int = 0

    @property
    def n_shears(self):
        return self.shear.n_shears

    def validate(self):
        if self.network.views_in < 4 or self.network.views_in % 4:
            raise ConfigError("network.views_in must be a positive multiple of 4")
        if self.n_shears % 2 != 1:
            raise ConfigError("the shear count must be odd")
        if self.plan.iterations < 1 or self.plan.iterations > self.plan.cap:
            raise ConfigError(f"plan.iterations must lie in [1, {self.plan.cap}]")
        bad = [d for d in self.plan.directions if d not in DIRECTIONS]
        if bad:
            raise ConfigError(f"unknown directions {bad}")
        lo, hi = self.data.disparity_range
        if lo > hi:
            raise ConfigError("data.disparity_range is inverted")
        if self.metrics.n_planes < 2 or self.metrics.alpha_max <= self.metrics.alpha_min:
            raise ConfigError("invalid refocus sweep")
        if not 0 <= self.metrics.eps_ssim < 1:
            raise ConfigError("metrics.eps_ssim must lie in [0, 1)")
        if self.data.grid[1] < self.network.views_in + self.network.views_in // 2 and not self.data.train_dirs:
            raise ConfigError("synthetic grid rows are too short for one training window")
        return self

    def with_seed(self, seed):
        return replace(self, seed=seed, train=replace(self.train, seed=seed))


_SECTIONS = {
    "data": DataConfig,
    "shear": ShearConfig,
    "network": NetworkConfig,
    "train": TrainHyper,
    "plan": PlanConfig,
    "metrics": MetricConfig,
}


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg):
    return {k: (_plain_dict(v) if isinstance(v, dict) else _plain(v)) for k, v in asdict(cfg).items()}


def _plain_dict(d):
    return {k: _plain(v) for k, v in d.items()}


def _section(cls, raw):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section for {cls.__name__} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def from_dict(raw):
    raw = dict(raw or {})
    unknown = set(raw) - set(_SECTIONS) - {"out_dir", "seed"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    sections = {name: _section(cls, raw.get(name)) for name, cls in _SECTIONS.items()}
    cfg = ExperimentConfig(out_dir=str(raw.get("out_dir", "runs/default")), seed=int(raw.get("seed", 0)), **sections)
    return cfg.validate()


def dumps(cfg):
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def loads(text):
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(raw)


def load_config(path):
    with open(path) as fh:
        return loads(fh.read())


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))
    return path


def config_hash(cfg):
    """Short SHA-256 of the canonical JSON form, ignoring the output directory."""
    d = to_dict(cfg)
    d.pop("out_dir", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
