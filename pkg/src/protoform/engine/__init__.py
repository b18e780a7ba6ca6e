"""Reverse-mode autodiff over dense numpy arrays, plus the optimizer,
schedule, gradient checker, and checkpoint I/O used by the reconstructor."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import EPSILON, TOLERANCE, grad_check, run_suite
from .ops import (
    OP_KINDS,
    add,
    apply,
    concat,
    cross_entropy,
    dropout,
    embedding_lookup,
    layer_norm,
    masked_fill,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    slice_,
    softmax,
    sum_,
    transpose,
)
from .optim import AdamState, ScheduleCfg, adam_step, lr_at
from .rng import DetRng, mix64, philox, stable_hash
from .tensor import (
    EngineError,
    ShapeError,
    Tensor,
    backward,
    default_dtype,
    no_grad,
    set_default_dtype,
    zero_grads,
)

__all__ = [
    "AdamState", "DetRng", "EngineError", "EPSILON", "OP_KINDS", "ScheduleCfg",
    "ShapeError", "Tensor", "TOLERANCE", "adam_step", "add", "apply", "backward",
    "concat", "cross_entropy", "default_dtype", "dropout", "embedding_lookup",
    "grad_check", "layer_norm", "load_checkpoint", "lr_at", "masked_fill",
    "matmul", "mix64", "mul", "no_grad", "philox", "relu", "reshape", "run_suite",
    "save_checkpoint", "scale", "set_default_dtype", "slice_", "softmax",
    "stable_hash", "sum_", "transpose", "zero_grads",
]
