"""Adam with bias correction and a step-halving learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-4
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.t < 0:
            raise ValueError("step count must be non-negative")


def halving_schedule(epoch, base_lr=1e-4, period=200):
    """Learning rate for a 1-based ``epoch``: ``base_lr`` for the first
    ``period`` epochs, then halved every further ``period`` epochs."""
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    return base_lr * 0.5 ** ((epoch - 1) // period)


def adam_step(params, grads, state):
    """Apply one Adam update in place.

    ``params`` and ``grads`` map names to arrays. A missing gradient counts
    as zero. Non-finite gradients abort the step before anything changes.
    Returns ``(params, state)``.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}; step aborted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p, dtype=np.float64)
            v = np.zeros_like(p, dtype=np.float64)
        else:
            v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g, dtype=np.float64)
        state.m[name] = m
        state.v[name] = v
        update = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p -= update.astype(p.dtype)
    return params, state
