"""Full model: conv encoder -> projection -> mask -> positional conv -> Transformer -> head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numeric as nm
from .encoder import ConvFeatureEncoder, EncoderConfig
from .numeric import Parameter, Tensor
from .objective import PredictionHead, apply_mask, batch_masked_loss
from .transformer import BucketConfig, Transformer, TransformerConfig


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    C: int = 32
    d_e: int = 256
    tau: float = 0.1
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig(**self.encoder))
        if isinstance(self.transformer, dict):
            object.__setattr__(self, "transformer", TransformerConfig(**self.transformer))
        if self.encoder.d_model != self.transformer.d_model:
            raise ValueError("encoder and transformer d_model differ")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def preset(name: str, **overrides) -> ModelConfig:
    """Named geometries.

    ``base``  : 12 layers, 768 wide, 8 heads, 512-channel encoder (parameter count only; too slow to train here)
    ``toy``   : 2 layers, 32 wide, 4 heads, C=8, 32-channel encoder
    ``micro`` : 2 layers, 16 wide, 2 heads, C=4, 8-channel encoder (gradient checks)
    """
    if name == "base":
        cfg = ModelConfig(EncoderConfig(d_model=768), TransformerConfig(768, 8, 3072, 12), C=32)
    elif name == "large":
        cfg = ModelConfig(EncoderConfig(d_model=1024), TransformerConfig(1024, 12, 4096, 24), C=32)
    elif name == "toy":
        cfg = ModelConfig(EncoderConfig(channels=32, d_model=32),
                          TransformerConfig(32, 4, 128, 2), C=8)
    elif name == "micro":
        cfg = ModelConfig(EncoderConfig(channels=8, d_model=16),
                          TransformerConfig(16, 2, 64, 2), C=4, d_e=8)
    else:
        raise ValueError(f"unknown preset {name!r}")
    return replace(cfg, **overrides) if overrides else cfg


class WavLMLite:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        self.encoder = ConvFeatureEncoder(cfg.encoder, rng, dtype)
        self.mask_embedding = Parameter(rng.uniform(0, 1, cfg.encoder.d_model).astype(dtype), "mask_embedding")
        self.transformer = Transformer(cfg.transformer, rng, dtype)
        self.head = PredictionHead(cfg.transformer.d_model, cfg.C, cfg.d_e, cfg.tau, rng, dtype)
        self.params: dict[str, Parameter] = {}
        for part in (self.encoder.params, {"mask_embedding": self.mask_embedding},
                     self.transformer.params, self.head.params):
            for name, p in part.items():
                if name in self.params:
                    raise ValueError(f"duplicate parameter name {name}")
                self.params[name] = p

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def frames(self, n_samples: int) -> int:
        return self.cfg.encoder.frames(n_samples)

    def zero_grad(self):
        nm.zero_grad(self.params.values())

    def hidden_states(self, waves, masks=None, rng=None, return_all=False):
        """(B, N) waveforms -> (B, T, D) last-layer states; ``masks`` is (B, T) bool or None."""
        x = np.atleast_2d(np.asarray(waves, dtype=self.dtype))
        feats = self.encoder.project(self.encoder.encode(x))
        if masks is not None:
            feats = apply_mask(feats, masks, self.mask_embedding)
        return self.transformer(self.encoder.posembed(feats), rng=rng, return_all=return_all)

    def loss(self, waves, label_sets, masks, rng=None) -> Tensor:
        h = self.hidden_states(waves, masks, rng)
        return batch_masked_loss(h, label_sets, masks, self.head)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}


def parameter_breakdown(model: WavLMLite) -> dict[str, int]:
    groups: dict[str, int] = {}
    for name, p in model.params.items():
        key = name.split(".")[0]
        if key == "transformer":
            key = "transformer.shared" if ".shared." in name else "transformer"
        groups[key] = groups.get(key, 0) + p.data.size
    return groups


__all__ = ["ModelConfig", "WavLMLite", "preset", "parameter_breakdown", "BucketConfig"]
