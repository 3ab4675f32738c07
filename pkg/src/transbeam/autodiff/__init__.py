"""Minimal reverse-mode automatic differentiation."""
from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, adam_step, clip_grad_norm
from .tensor import Tape, Tensor, as_tensor, backward, current_tape, no_grad, use_tape

__all__ = [
    "Adam",
    "Tape",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "clip_grad_norm",
    "current_tape",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
    "use_tape",
]
