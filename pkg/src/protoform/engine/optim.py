"""Adam with decoupled weight decay, and the warmup learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import EngineError, Tensor


@dataclass
class AdamState:
    """Per-parameter moment estimates keyed by parameter name."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One Adam update with bias correction, then decoupled weight decay.

    Parameters without a gradient this step keep their moments but still
    decay.  Mutates ``params`` and ``state`` in place.
    """
    if lr <= 0:
        raise EngineError(f"adam_step: lr must be positive, got {lr}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is not None:
            if not np.all(np.isfinite(g)):
                raise EngineError(
                    f"adam_step: non-finite gradient for {name!r} at step {t} "
                    f"(|g|max={np.abs(g[np.isfinite(g)]).max() if np.isfinite(g).any() else 'nan'})"
                )
            if name not in state.m:
                state.m[name] = np.zeros_like(p.data)
                state.v[name] = np.zeros_like(p.data)
            m = state.m[name]
            v = state.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data


@dataclass(frozen=True)
class ScheduleCfg:
    peak_lr: float
    warmup_epochs: int
    total_epochs: int


def lr_at(epoch: int, cfg: ScheduleCfg) -> float:
    """Linear ramp from 0 to peak over the warmup, then constant."""
    if not 0 <= epoch < cfg.total_epochs:
        raise EngineError(f"lr_at: epoch {epoch} outside [0, {cfg.total_epochs})")
    if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
        return cfg.peak_lr * (epoch + 1) / cfg.warmup_epochs
    return cfg.peak_lr
