"""Adam optimizer and the warmup-then-cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class LrConfig:
    peak: float = 1e-4
    floor: float = 5e-6
    warmup_steps: int = 200
    decay_steps: int = 200_000


def lr_schedule(step: int, cfg: LrConfig = LrConfig()) -> float:
    """Linear 0 -> peak over warmup, cosine peak -> floor over decay, then flat."""
    if step < 0:
        raise ValueError("negative step")
    if step < cfg.warmup_steps:
        return cfg.peak * step / cfg.warmup_steps
    t = (step - cfg.warmup_steps) / cfg.decay_steps
    if t >= 1.0:
        return cfg.floor
    return cfg.floor + (cfg.peak - cfg.floor) * 0.5 * (1.0 + np.cos(np.pi * t))


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place; missing gradients are zeros."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p in params:
        if p.name is None:
            raise ValueError("optimizer parameters must be named")
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        if m.shape != p.data.shape:
            raise ValueError(f"stale optimizer state for {p.name}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
