"""Transformer encoder with gated relative position bias and translated-softmax attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import Parameter, Tensor


@dataclass(frozen=True)
class BucketConfig:
    n: int = 320
    m: int = 800

    def __post_init__(self):
        if self.n % 4:
            raise ValueError("n must be divisible by 4")
        if self.m <= self.n // 4:
            raise ValueError("m must exceed n/4")


def bucket_index(offset: int, n: int = 320, m: int = 800) -> int:
    """Bucket of the query-minus-key offset ``i - j``.

    Offsets below n/4 in magnitude get their own bucket, larger ones share
    logarithmically widening buckets up to ``m``, and everything beyond ``m``
    saturates at n/2 - 1. Positive offsets use the upper half of the table.
    """
    a = abs(int(offset))
    q = n // 4
    if a < q:
        b = a
    elif a < m:
        b = int(math.floor(q * (math.log(a / q) / math.log(m / q) + 1.0)))
    else:
        b = n // 2 - 1
    return b + (n // 2 if offset > 0 else 0)


def bucket_matrix(T: int, n: int = 320, m: int = 800) -> np.ndarray:
    """(T, T) table of bucket ids for query i, key j."""
    offsets = np.arange(T)[:, None] - np.arange(T)[None, :]
    a = np.abs(offsets)
    q = n // 4
    with np.errstate(divide="ignore"):
        mid = np.floor(q * (np.log(np.maximum(a, 1) / q) / math.log(m / q) + 1.0)).astype(np.int64)
    b = np.where(a < q, a, np.where(a < m, mid, n // 2 - 1))
    return b + (n // 2) * (offsets > 0)


def gated_bias(q: np.ndarray, d: float, u: np.ndarray, w_vec: np.ndarray, w_scalar: float) -> float:
    """Scalar gated bias for one query vector and one bucket value ``d``."""
    g_update = 1.0 / (1.0 + math.exp(-float(np.dot(q, u))))
    g_reset = 1.0 / (1.0 + math.exp(-float(np.dot(q, w_vec))))
    r_tilde = w_scalar * g_reset * d
    return d + g_update * d + (1.0 - g_update) * r_tilde


@dataclass(frozen=True)
class TransformerConfig:
    d_model: int = 768
    heads: int = 8
    d_ff: int = 3072
    layers: int = 12
    buckets: BucketConfig = BucketConfig()
    scale_c: float = 32.0
    pre_ln: bool = False
    share_gates: bool = False
    dropout: float = 0.0
    layerdrop: float = 0.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if isinstance(self.buckets, dict):
            object.__setattr__(self, "buckets", BucketConfig(**self.buckets))

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


def _dense(rng, fan_in, fan_out, dtype):
    return (rng.standard_normal((fan_in, fan_out)) * math.sqrt(1.0 / fan_in)).astype(dtype)


class Transformer:
    """Stack of attention + feed-forward layers.

    The bucket bias table is one (heads, n) parameter used by every layer;
    the gate vectors and gate scale live in each layer unless ``share_gates``.
    """

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, dtype=np.float32, prefix="transformer"):
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        D, H = cfg.d_model, cfg.heads
        add = self._add
        self.bias_table = add(f"{prefix}.shared.bias_table", np.zeros((H, cfg.buckets.n), dtype))
        norm_name = "final_norm" if cfg.pre_ln else "input_norm"
        self.norm_g = add(f"{prefix}.{norm_name}.weight", np.ones(D, dtype))
        self.norm_b = add(f"{prefix}.{norm_name}.bias", np.zeros(D, dtype))
        shared_gates = None
        if cfg.share_gates:
            shared_gates = self._gates(f"{prefix}.shared", rng, dtype)
        self.layers = []
        for i in range(cfg.layers):
            p = f"{prefix}.layer{i}"
            layer = {}
            for proj in ("q", "k", "v", "out"):
                layer[proj] = (add(f"{p}.attn.{proj}.weight", _dense(rng, D, D, dtype)),
                               add(f"{p}.attn.{proj}.bias", np.zeros(D, dtype)))
            layer["gates"] = shared_gates or self._gates(f"{p}.attn", rng, dtype)
            layer["attn_norm"] = (add(f"{p}.attn_norm.weight", np.ones(D, dtype)),
                                  add(f"{p}.attn_norm.bias", np.zeros(D, dtype)))
            layer["fc1"] = (add(f"{p}.ffn.fc1.weight", _dense(rng, D, cfg.d_ff, dtype)),
                            add(f"{p}.ffn.fc1.bias", np.zeros(cfg.d_ff, dtype)))
            layer["fc2"] = (add(f"{p}.ffn.fc2.weight", _dense(rng, cfg.d_ff, D, dtype)),
                            add(f"{p}.ffn.fc2.bias", np.zeros(D, dtype)))
            layer["ffn_norm"] = (add(f"{p}.ffn_norm.weight", np.ones(D, dtype)),
                                 add(f"{p}.ffn_norm.bias", np.zeros(D, dtype)))
            self.layers.append(layer)
        self._bucket_cache: dict[int, np.ndarray] = {}

    def _add(self, name, value) -> Parameter:
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def _gates(self, p, rng, dtype):
        H, dk = self.cfg.heads, self.cfg.d_k
        return (self._add(f"{p}.gate_u", (rng.standard_normal((H, dk)) / math.sqrt(dk)).astype(dtype)),
                self._add(f"{p}.gate_w", (rng.standard_normal((H, dk)) / math.sqrt(dk)).astype(dtype)),
                self._add(f"{p}.gate_scale", np.ones(H, dtype)))

    def buckets(self, T: int) -> np.ndarray:
        if T not in self._bucket_cache:
            b = self.cfg.buckets
            self._bucket_cache[T] = bucket_matrix(T, b.n, b.m)
        return self._bucket_cache[T]

    # -- attention ------------------------------------------------------------
    def position_bias(self, q: Tensor, layer: int) -> Tensor:
        """Gated bias r for every (head, i, j); ``q`` is (B, H, T, d_k)."""
        T = q.shape[-2]
        u, w_vec, w_scalar = self.layers[layer]["gates"]
        d = self.bias_table[:, self.buckets(T)]  # H, T, T
        g_update = nm.sigmoid(nm.sum_(nm.mul(q, nm.reshape(u, u.shape[:1] + (1,) + u.shape[1:])), axis=-1))
        g_reset = nm.sigmoid(nm.sum_(nm.mul(q, nm.reshape(w_vec, w_vec.shape[:1] + (1,) + w_vec.shape[1:])), axis=-1))
        ws = nm.reshape(w_scalar, (-1, 1))
        # r = d * (1 + g_u + (1 - g_u) * w * g_r), gates vary with the query row only
        factor = nm.add(nm.add(g_update, 1.0), nm.mul(nm.sub(1.0, g_update), nm.mul(ws, g_reset)))
        return nm.mul(d, nm.reshape(factor, factor.shape + (1,)))

    def attention(self, h: Tensor, layer: int, return_weights: bool = False):
        """Multi-head self-attention over (B, T, D)."""
        cfg = self.cfg
        B, T, D = h.shape
        H, dk = cfg.heads, cfg.d_k
        L = self.layers[layer]

        def heads(t):
            return nm.transpose(nm.reshape(t, (B, T, H, dk)), (0, 2, 1, 3))

        q = heads(nm.linear(h, *L["q"]))
        k = heads(nm.linear(h, *L["k"]))
        v = heads(nm.linear(h, *L["v"]))
        r = self.position_bias(q, layer)
        a, _ = nm.stable_attention_weights(q, k, r, cfg.scale_c)
        ctx = nm.reshape(nm.transpose(nm.matmul(a, v), (0, 2, 1, 3)), (B, T, D))
        out = nm.linear(ctx, *L["out"])
        return (out, a) if return_weights else out

    def _dropout(self, x: Tensor, rng) -> Tensor:
        if rng is None or self.cfg.dropout <= 0:
            return x
        keep = (rng.random(x.shape) >= self.cfg.dropout).astype(x.dtype) / (1.0 - self.cfg.dropout)
        return nm.mul(x, keep)

    def encoder_layer(self, h: Tensor, layer: int, rng=None) -> Tensor:
        L = self.layers[layer]
        if self.cfg.pre_ln:
            h = nm.add(h, self._dropout(self.attention(nm.layernorm(h, *L["attn_norm"]), layer), rng))
            ff = self._ffn(nm.layernorm(h, *L["ffn_norm"]), L)
            return nm.add(h, self._dropout(ff, rng))
        h = nm.layernorm(nm.add(h, self._dropout(self.attention(h, layer), rng)), *L["attn_norm"])
        return nm.layernorm(nm.add(h, self._dropout(self._ffn(h, L), rng)), *L["ffn_norm"])

    @staticmethod
    def _ffn(h, L):
        return nm.linear(nm.gelu(nm.linear(h, *L["fc1"])), *L["fc2"])

    def __call__(self, h: Tensor, rng=None, return_all: bool = False):
        """Run the stack on (B, T, D) or (T, D); optionally return every layer's output."""
        squeeze = h.ndim == 2
        if squeeze:
            h = nm.reshape(h, (1,) + h.shape)
        if not self.cfg.pre_ln:
            h = nm.layernorm(h, self.norm_g, self.norm_b)
        outs = []
        for i in range(self.cfg.layers):
            if rng is not None and self.cfg.layerdrop > 0 and rng.random() < self.cfg.layerdrop:
                outs.append(h)
                continue
            h = self.encoder_layer(h, i, rng)
            outs.append(h)
        if self.cfg.pre_ln:
            h = nm.layernorm(h, self.norm_g, self.norm_b)
            outs[-1] = h
        if squeeze:
            h = nm.reshape(h, h.shape[1:])
            outs = [nm.reshape(o, o.shape[1:]) for o in outs]
        return (h, outs) if return_all else h


def naive_attention_weights(q: np.ndarray, k: np.ndarray, r: np.ndarray | None) -> np.ndarray:
    """Reference: exp(q.k/sqrt(d) + r) normalized directly, no translation."""
    logits = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    if r is not None:
        logits = logits + r
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def half_range_flags(q: np.ndarray, k: np.ndarray, r: np.ndarray | None = None, scale_c: float = 32.0) -> dict:
    """Which intermediates of each attention form leave the fp16 finite range.

    Naive form: the raw logits and their exponentials. Translated form: the
    scaled scores ``q.k/(c sqrt(d))`` and the pre-bias exponent arguments.
    """
    d = q.shape[-1]
    logits = q @ np.swapaxes(k, -1, -2) / np.sqrt(d)
    with np.errstate(over="ignore"):
        naive_exp = np.exp(logits + (0 if r is None else r))
    scores = (q / (scale_c * np.sqrt(d))) @ np.swapaxes(k, -1, -2)
    args = (scores - scores.max(axis=-1, keepdims=True)) * scale_c
    over = lambda x: bool(np.any(~np.isfinite(x) | (np.abs(x) > nm.HALF_MAX)))
    return {
        "naive_logits": over(logits),
        "naive_exp": over(naive_exp),
        "stable_scores": over(scores),
        "stable_args": over(args),
        "stable_args_max": float(args.max()),
    }
