"""Finite-difference check of every parameter group of a small float64 model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .model import WavLMLite, preset


@dataclass
class GradCheckReport:
    errors: dict[str, float]  # parameter name -> worst relative error over checked entries
    checked: dict[str, int]
    tolerance: float

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    @property
    def ok(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())


def micro_problem(seed: int = 0, frames: int = 5, preset_name: str = "micro"):
    """A float64 micro model with every parameter randomized, plus fixed inputs."""
    cfg = preset(preset_name, dtype="float64", seed=seed)
    model = WavLMLite(cfg)
    rng = np.random.default_rng(seed + 1)
    for p in model.params.values():
        # move zero-initialized tables and biases off zero so every path carries gradient
        p.data = p.data + rng.normal(0.0, 0.1, p.shape)
    n = cfg.encoder.receptive_field + (frames - 1) * cfg.encoder.total_stride
    waves = rng.uniform(-0.5, 0.5, (2, n))
    T = model.frames(n)
    masks = np.zeros((2, T), dtype=bool)
    masks[0, 1:3] = True
    masks[1, [0, T - 1]] = True
    labels = [rng.integers(0, cfg.C, T) for _ in range(2)]
    return model, waves, labels, masks


def run_gradcheck(seed: int = 0, h: float = 1e-4, tol: float = 1e-4, per_param: int = 24,
                  frames: int = 5) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    For each parameter tensor the entries with the largest analytic gradient
    plus a random sample are perturbed (``per_param`` in total, or all entries
    if the tensor is smaller). Relative error is |ad - fd| / max(1, |fd|).
    """
    model, waves, labels, masks = micro_problem(seed, frames)
    model.zero_grad()
    nm.backward(model.loss(waves, labels, masks))
    rng = np.random.default_rng(seed + 2)
    errors, checked = {}, {}
    with nm.no_grad():
        for name, p in model.params.items():
            flat = p.data.reshape(-1)
            g = p.grad.reshape(-1)
            if flat.size <= per_param:
                idx = np.arange(flat.size)
            else:
                top = np.argsort(-np.abs(g), kind="stable")[: per_param // 2]
                rand = rng.choice(flat.size, size=per_param - top.size, replace=False)
                idx = np.unique(np.concatenate([top, rand]))
            worst = 0.0
            for i in idx:
                old = flat[i]
                flat[i] = old + h
                up = model.loss(waves, labels, masks).item()
                flat[i] = old - h
                down = model.loss(waves, labels, masks).item()
                flat[i] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - g[i]) / max(1.0, abs(fd)))
            errors[name] = worst
            checked[name] = int(idx.size)
    return GradCheckReport(errors, checked, tol)
