"""Span masking, the cosine codeword distribution and the masked prediction loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .numeric import Parameter, Tensor


@dataclass
class MaskSpec:
    T: int
    indices: np.ndarray
    span: int = 10
    start_prob: float = 0.08
    seed: int = 0
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.T, dtype=bool)
        m[self.indices] = True
        return m


def sample_masks(T: int, span: int = 10, start_prob: float = 0.08, seed=0,
                 force_min: bool = False) -> MaskSpec:
    """Every frame starts a span with probability ``start_prob``; the mask is the clipped union."""
    if T < 1:
        raise ValueError("T must be positive")
    rng = np.random.default_rng(seed)
    starts = np.flatnonzero(rng.random(T) < start_prob)
    if starts.size == 0 and force_min:
        starts = np.array([int(rng.integers(0, max(1, T - span + 1)))])
    mask = np.zeros(T, dtype=bool)
    for s in starts:
        mask[s:s + span] = True
    return MaskSpec(T, np.flatnonzero(mask), span, start_prob, seed, starts)


def apply_mask(features: Tensor, mask: np.ndarray, mask_embedding) -> Tensor:
    """Replace rows where ``mask`` holds by ``mask_embedding``; other rows pass through untouched.

    ``features`` is (T, D) or (B, T, D) with a matching boolean mask.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != features.shape[:-1]:
        raise ValueError(f"mask shape {mask.shape} does not match features {features.shape[:-1]}")
    return nm.where(mask[..., None], mask_embedding, features)


class PredictionHead:
    """Projection W^P plus codeword embeddings; logits are cosine / tau."""

    def __init__(self, d_model: int, C: int, d_e: int = 256, tau: float = 0.1,
                 rng: np.random.Generator | None = None, dtype=np.float32, prefix="head"):
        if tau <= 0:
            raise ValueError("tau must be positive")
        rng = rng or np.random.default_rng(0)
        self.tau = tau
        self.C = C
        self.proj = Parameter((rng.standard_normal((d_model, d_e)) / np.sqrt(d_model)).astype(dtype),
                              f"{prefix}.proj.weight")
        self.codewords = Parameter(rng.standard_normal((C, d_e)).astype(dtype), f"{prefix}.codewords")
        self.params = {p.name: p for p in (self.proj, self.codewords)}

    def logits(self, h: Tensor) -> Tensor:
        return codeword_logits(nm.matmul(h, self.proj), self.codewords, self.tau)

    def logprobs(self, h: Tensor) -> Tensor:
        return nm.log_softmax(self.logits(h), axis=-1)


def _unit(x: Tensor, eps: float) -> Tensor:
    norm = nm.sqrt(nm.sum_(nm.mul(x, x), axis=-1, keepdims=True))
    return nm.div(x, nm.clamp_min(norm, eps))


def codeword_logits(projected: Tensor, codewords: Tensor, tau: float, eps: float = 1e-8) -> Tensor:
    """cos(projected, e_c) / tau for every codeword c; ``projected`` is (d_e,) or (..., d_e)."""
    projected, codewords = nm.as_tensor(projected), nm.as_tensor(codewords)
    single = projected.ndim == 1
    if single:
        projected = nm.reshape(projected, (1, -1))
    out = nm.mul(nm.matmul(_unit(projected, eps), nm.transpose(_unit(codewords, eps))), 1.0 / tau)
    return nm.reshape(out, out.shape[1:]) if single else out


def codeword_logprobs(h_t, head: PredictionHead) -> Tensor:
    """Log-probabilities over the C codewords for one hidden state (or a stack of them)."""
    h = nm.as_tensor(h_t)
    single = h.ndim == 1
    if single:
        h = nm.reshape(h, (1, -1))
    out = head.logprobs(h)
    return nm.reshape(out, (head.C,)) if single else out


def masked_loss(hidden: Tensor, label_sets, mask: np.ndarray, head: PredictionHead) -> Tensor:
    """Sum over label sets and masked frames of -log p(z_t | h_t) for one utterance.

    ``hidden`` is (T, D); ``label_sets`` is one label sequence or a list of them.
    Only masked rows are projected, so unmasked rows get exactly zero gradient.
    """
    T = hidden.shape[0]
    label_sets = _as_label_sets(label_sets)
    idx = _mask_indices(mask)
    for z in label_sets:
        if z.shape != (T,):
            raise ValueError(f"labels have length {z.shape[0]}, expected {T}")
        if z.size and (z.min() < 0 or z.max() >= head.C):
            raise ValueError(f"label out of range [0, {head.C})")
    if idx.size == 0:
        return Tensor(np.zeros((), dtype=hidden.dtype))
    lp = head.logprobs(hidden[idx])  # |M|, C
    total = None
    for z in label_sets:
        term = nm.sum_(lp[np.arange(idx.size), z[idx]])
        total = term if total is None else nm.add(total, term)
    return nm.mul(total, -1.0)


def batch_masked_loss(hidden: Tensor, label_sets_per_utt, masks: np.ndarray, head: PredictionHead) -> Tensor:
    """Per-utterance masked loss averaged over the batch; ``hidden`` is (B, T, D), ``masks`` (B, T) bool."""
    B, T = hidden.shape[:2]
    masks = np.asarray(masks, dtype=bool)
    b_idx, t_idx = np.nonzero(masks)
    if b_idx.size == 0:
        return Tensor(np.zeros((), dtype=hidden.dtype))
    per_utt = [_as_label_sets(z) for z in label_sets_per_utt]
    if len({len(s) for s in per_utt}) != 1:
        raise ValueError("every utterance needs the same number of label sets")
    lp = head.logprobs(hidden[b_idx, t_idx])
    total = None
    for k in range(len(per_utt[0])):
        z = np.stack([s[k] for s in per_utt])
        if z.shape != (B, T):
            raise ValueError(f"labels have shape {z.shape}, expected {(B, T)}")
        if z.min() < 0 or z.max() >= head.C:
            raise ValueError(f"label out of range [0, {head.C})")
        term = nm.sum_(lp[np.arange(b_idx.size), z[b_idx, t_idx]])
        total = term if total is None else nm.add(total, term)
    return nm.mul(total, -1.0 / B)


def _mask_indices(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return np.flatnonzero(mask)
    return mask.astype(np.int64)


def _as_label_sets(label_sets) -> list[np.ndarray]:
    if isinstance(label_sets, np.ndarray) and label_sets.ndim == 1:
        return [label_sets.astype(np.int64)]
    sets = list(label_sets)
    if sets and np.ndim(sets[0]) == 0:
        return [np.asarray(sets, dtype=np.int64)]
    return [np.asarray(z, dtype=np.int64) for z in sets]
