"""Desk-scale masked speech denoising and prediction pre-training in numpy."""

from .mixer import MixConfig, MixEvent, mixing_scale, simulate_batch
from .model import ModelConfig, WavLMLite, preset
from .transformer import bucket_index

__version__ = "0.1.0"

__all__ = ["MixConfig", "MixEvent", "ModelConfig", "WavLMLite", "bucket_index", "mixing_scale",
           "preset", "simulate_batch"]
