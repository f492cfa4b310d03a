"""Adam with cosine learning-rate decay and global gradient-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, pi, sqrt

import numpy as np


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    schedule: str = "cosine"  # or "constant"
    total_steps: int = 1000


@dataclass
class Adam:
    """Adam over a dict of flat parameter arrays."""

    cfg: AdamConfig
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def lr_at(self, step: int) -> float:
        if self.cfg.schedule == "constant" or self.cfg.total_steps <= 0:
            return self.cfg.lr
        frac = min(1.0, step / self.cfg.total_steps)
        return self.cfg.lr * 0.5 * (1.0 + cos(pi * frac))

    def step(self, params: dict, grads: dict) -> tuple[dict, float]:
        """One update; returns (new params, pre-clip global gradient norm)."""
        gnorm = sqrt(sum(float(g @ g) for g in grads.values()))
        scale = 1.0
        if self.cfg.clip_norm is not None and gnorm > self.cfg.clip_norm > 0:
            scale = self.cfg.clip_norm / gnorm
        lr = self.lr_at(self.t)
        self.t += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        out = {}
        for name, p in params.items():
            g = grads[name] * scale
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            out[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        return out, gnorm
