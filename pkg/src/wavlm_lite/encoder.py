"""Convolutional waveform encoder and the convolutional positional embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import Parameter, Tensor


class InputTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    channels: int = 512
    strides: tuple[int, ...] = (5, 2, 2, 2, 2, 2, 2)
    kernels: tuple[int, ...] = (10, 3, 3, 3, 3, 2, 2)
    pos_conv_kernel: int = 128
    pos_conv_groups: int = 16
    d_model: int = 768

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(self.strides))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if len(self.strides) != len(self.kernels):
            raise ValueError("strides and kernels must have equal length")
        if self.d_model % self.pos_conv_groups:
            raise ValueError("d_model must be divisible by pos_conv_groups")

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides))

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for k, s in zip(self.kernels, self.strides):
            rf += (k - 1) * jump
            jump *= s
        return rf

    def frames(self, n_samples: int) -> int:
        """Output length after all blocks; 0 if the input is too short."""
        t = n_samples
        for k, s in zip(self.kernels, self.strides):
            if t < k:
                return 0
            t = nm.conv_out_length(t, k, s)
        return t

    @property
    def min_samples(self) -> int:
        return self.receptive_field


def _normal(rng, shape, std, dtype):
    return (rng.standard_normal(shape) * std).astype(dtype)


class ConvFeatureEncoder:
    """Seven conv -> layernorm(channels) -> GELU blocks, then a projection to d_model."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32, prefix="encoder"):
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        cin = 1
        self.blocks = []
        for i, k in enumerate(cfg.kernels):
            w = self._add(f"{prefix}.block{i}.conv.weight",
                          _normal(rng, (cfg.channels, cin, k), np.sqrt(2.0 / (cin * k)), dtype))
            g = self._add(f"{prefix}.block{i}.norm.weight", np.ones(cfg.channels, dtype))
            b = self._add(f"{prefix}.block{i}.norm.bias", np.zeros(cfg.channels, dtype))
            self.blocks.append((w, g, b))
            cin = cfg.channels
        self.proj_w = self._add(f"{prefix}.proj.weight",
                                _normal(rng, (cfg.channels, cfg.d_model), np.sqrt(1.0 / cfg.channels), dtype))
        self.proj_b = self._add(f"{prefix}.proj.bias", np.zeros(cfg.d_model, dtype))
        kpos, groups = cfg.pos_conv_kernel, cfg.pos_conv_groups
        std = np.sqrt(4.0 / (kpos * cfg.d_model))
        self.pos_w = self._add(f"{prefix}.pos_conv.weight",
                               _normal(rng, (cfg.d_model, cfg.d_model // groups, kpos), std, dtype))
        self.pos_b = self._add(f"{prefix}.pos_conv.bias", np.zeros(cfg.d_model, dtype))

    def _add(self, name, value) -> Parameter:
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def encode(self, waves) -> Tensor:
        """(N,) -> (T, channels) or (B, N) -> (B, T, channels)."""
        x = waves if isinstance(waves, Tensor) else Tensor(np.asarray(waves, dtype=self.proj_w.dtype))
        squeeze = x.ndim == 1
        if squeeze:
            x = x.reshape(1, -1)
        n = x.shape[-1]
        if self.cfg.frames(n) < 1:
            raise InputTooShortError(f"need at least {self.cfg.min_samples} samples, got {n}")
        x = nm.reshape(x, (x.shape[0], 1, n))
        for (w, g, b), s in zip(self.blocks, self.cfg.strides):
            x = nm.conv1d(x, w, stride=s)
            x = nm.swapaxes(x, 1, 2)  # B, T, C for per-frame channel norm
            x = nm.gelu(nm.layernorm(x, g, b))
            x = nm.swapaxes(x, 1, 2)
        x = nm.swapaxes(x, 1, 2)
        return nm.reshape(x, x.shape[1:]) if squeeze else x

    def project(self, feats: Tensor) -> Tensor:
        return nm.linear(feats, self.proj_w, self.proj_b)

    def posembed(self, x: Tensor) -> Tensor:
        """Add GELU(grouped conv over time) to a (..., T, d_model) sequence, length preserved."""
        x = nm.as_tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = nm.reshape(x, (1,) + x.shape)
        k = self.cfg.pos_conv_kernel
        xt = nm.swapaxes(x, 1, 2)
        T = xt.shape[-1]
        y = nm.conv1d(xt, self.pos_w, self.pos_b, groups=self.cfg.pos_conv_groups, padding=(k // 2, k // 2))
        if y.shape[-1] > T:  # even kernel yields one extra frame
            y = y[:, :, :T]
        out = nm.add(x, nm.swapaxes(nm.gelu(y), 1, 2))
        return nm.reshape(out, out.shape[1:]) if squeeze else out

    def project_and_posembed(self, feats: Tensor) -> Tensor:
        return self.posembed(self.project(feats))
