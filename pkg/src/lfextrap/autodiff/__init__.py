"""Minimal reverse-mode autodiff: the op set of the extrapolation networks."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .conv import ConvSpec, conv3d, conv3d_transpose
from .loss import loss_l1_grad
from .optim import AdamState, adam_step, halving_schedule
from .tensor import Tensor, concat, no_grad, shift_x, softmax

__all__ = [
    "AdamState",
    "CheckpointError",
    "ConvSpec",
    "Tensor",
    "adam_step",
    "concat",
    "conv3d",
    "conv3d_transpose",
    "halving_schedule",
    "load_checkpoint",
    "loss_l1_grad",
    "no_grad",
    "save_checkpoint",
    "shift_x",
    "softmax",
]
