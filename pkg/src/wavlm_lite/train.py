"""Micro pre-training loop: mix, mask, predict clean-audio pseudo-labels, Adam."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import numeric as nm
from .audio import Waveform, read_wav_dir, synth
from .labeler import Codebook, fit_mfcc_codebook, label_waveforms
from .mixer import MixConfig, MixEvent, simulate_batch
from .model import ModelConfig, WavLMLite, preset
from .objective import apply_mask, batch_masked_loss, sample_masks

log = logging.getLogger(__name__)

# update steps / peak learning rate / warmup steps used for the full-size models
FULL_SCALE_SCHEDULES = {
    "base": {"steps": 400_000, "peak_lr": 5e-4, "warmup_steps": 32_000},
    "base_plus": {"steps": 1_200_000, "peak_lr": 5e-4, "warmup_steps": 96_000},
    "large": {"steps": 700_000, "peak_lr": 1.5e-3, "warmup_steps": 32_000},
}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    preset: str = "toy"
    steps: int = 200
    warmup_steps: int = 20
    peak_lr: float = 2e-3
    batch_size: int = 8
    seed: int = 0
    mix: MixConfig = field(default_factory=lambda: MixConfig(p=0.2, p_n=0.1))
    C: int = 8
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    weight_decay: float = 0.01
    mask_span: int = 10
    mask_start_prob: float = 0.08
    kmeans_iters: int = 50
    n_utterances: int = 16
    seconds: float = 1.0
    in_dir: str | None = None
    noise_dir: str | None = None
    n_noises: int = 4
    smooth: int = 20
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.mix, dict):
            self.mix = MixConfig(**self.mix)
        if self.warmup_steps > self.steps:
            raise ValueError("warmup_steps must not exceed steps")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix"] = asdict(self.mix)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def model_config(self) -> ModelConfig:
        return preset(self.preset, C=self.C, seed=self.seed)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``peak_lr`` then linear decay to 0; ``step`` is 1-based."""
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    rest = cfg.steps - cfg.warmup_steps
    if rest <= 0:
        return cfg.peak_lr
    return cfg.peak_lr * max(0.0, (cfg.steps - step) / rest)


class Adam:
    """Adam with decoupled weight decay on matrices (ndim >= 2)."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.98, eps=1e-6, weight_decay=0.0):
        self.params = params
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)


# -- data -------------------------------------------------------------------

_PALETTE = [
    ("sine", {"freq": 220.0}), ("sine", {"freq": 660.0}), ("sine", {"freq": 1800.0}),
    ("chirp", {"f0": 300.0, "f1": 3000.0}), ("pink_noise", {}), ("white_noise", {}),
]


def synthetic_corpus(n: int, seconds: float = 1.0, seed: int = 0, segments: int = 4) -> list[Waveform]:
    """Utterances built from a few tone/noise segments each, so frame labels are piecewise constant."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        total = int(round(seconds * 16000))
        cuts = np.sort(rng.choice(np.arange(1, total // 800), size=segments - 1, replace=False)) * 800
        bounds = np.concatenate([[0], cuts, [total]])
        x = np.zeros(total)
        for a, b in zip(bounds[:-1], bounds[1:]):
            kind, params = _PALETTE[int(rng.integers(len(_PALETTE)))]
            amp = float(rng.uniform(0.2, 0.8))
            seg = synth(kind, (b - a) / 16000, seed=derive_seed(seed, i, a), amplitude=amp, **params)
            x[a:b] = seg.samples
        out.append(Waveform(x))
    return out


def synthetic_noises(n: int, seconds: float = 1.5, seed: int = 0) -> list[Waveform]:
    kinds = ["pink_noise", "white_noise"]
    return [synth(kinds[i % 2], seconds, seed=derive_seed(seed, 7919, i), amplitude=0.5) for i in range(n)]


@dataclass
class StepInputs:
    """Everything one denoising step consumes, with an audit trail."""

    clean: np.ndarray  # (B, N)
    mixed: np.ndarray  # (B, N)
    labels: list  # per utterance: list of label sets, all derived from the clean audio
    label_source: np.ndarray  # (B,) index of the clean utterance each label row came from
    masks: np.ndarray  # (B, T) bool
    events: list[MixEvent]

    def features(self, model: WavLMLite):
        """Masked, projected encoder features of the mixed audio."""
        feats = model.encoder.project(model.encoder.encode(self.mixed.astype(model.dtype)))
        return apply_mask(feats, self.masks, model.mask_embedding)


def denoising_step_inputs(clean, labels, noises, mix_cfg: MixConfig, frames: int,
                          span: int = 10, start_prob: float = 0.08, mask_seed: int = 0) -> StepInputs:
    """Mix the clean batch, keep labels tied to the clean utterances, draw span masks.

    ``labels`` is either a per-utterance list of label sequences or a callable
    mapping the clean batch to them; it is always applied to the clean audio.
    """
    clean = np.asarray([getattr(u, "samples", u) for u in clean], dtype=np.float64)
    if callable(labels):
        labels = labels(clean)
    if len(labels) != len(clean):
        raise ValueError("need one label entry per utterance")
    label_sets = [z if isinstance(z, list) else [np.asarray(z)] for z in labels]
    for sets in label_sets:
        for z in sets:
            if len(z) != frames:
                raise ValueError(f"labels have {len(z)} frames, encoder produces {frames}")
    mixed, events = simulate_batch(clean, noises, mix_cfg)
    masks = np.stack([sample_masks(frames, span, start_prob, seed=derive_seed(mask_seed, b), force_min=True).mask
                      for b in range(len(clean))])
    return StepInputs(clean, mixed, label_sets, np.arange(len(clean)), masks, events)


def global_grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))


def pretrain_step(model: WavLMLite, opt: Adam, inputs: StepInputs, lr: float, batch_seed: int = 0):
    """Forward, masked loss, backward, Adam update. Returns (loss, grad_norm)."""
    model.zero_grad()
    h = model.hidden_states(inputs.mixed, inputs.masks)
    loss = batch_masked_loss(h, inputs.labels, inputs.masks, model.head)
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} (batch seed {batch_seed})")
    nm.backward(loss)
    gnorm = global_grad_norm(model.params.values())
    opt.step(lr)
    return value, gnorm


@dataclass
class Corpus:
    waves: list
    labels: list
    codebook: Codebook
    noises: list


def prepare_corpus(cfg: TrainConfig, model: WavLMLite) -> Corpus:
    if cfg.in_dir:
        _, waves = read_wav_dir(cfg.in_dir)
    else:
        waves = synthetic_corpus(cfg.n_utterances, cfg.seconds, seed=cfg.seed)
    if cfg.noise_dir:
        _, noises = read_wav_dir(cfg.noise_dir)
    else:
        noises = synthetic_noises(cfg.n_noises, seed=cfg.seed)
    lengths = {len(w) for w in waves}
    if len(lengths) != 1:
        raise ValueError(f"training utterances must share one length, got {sorted(lengths)}")
    cb = fit_mfcc_codebook(waves, C=cfg.C, iters=cfg.kmeans_iters, seed=cfg.seed)
    labels = label_waveforms(cb, waves, model.frames)
    return Corpus(waves, labels, cb, noises)


def smoothed(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    w = max(1, min(window, len(v)))
    c = np.cumsum(np.concatenate([[0.0], v]))
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i - w + 1)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


@dataclass
class TrainResult:
    losses: list
    grad_norms: list
    lrs: list
    model: WavLMLite
    corpus: Corpus

    @property
    def smoothed(self) -> np.ndarray:
        return smoothed(self.losses, 20)


def train(cfg: TrainConfig, out_dir=None, model: WavLMLite | None = None) -> TrainResult:
    from .checkpoint import save_checkpoint

    model = model or WavLMLite(cfg.model_config())
    corpus = prepare_corpus(cfg, model)
    clean = np.asarray([w.samples for w in corpus.waves])
    frames = model.frames(clean.shape[1])
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    losses, norms, lrs = [], [], []
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for step in range(1, cfg.steps + 1):
        batch_seed = derive_seed(cfg.seed, step)
        rng = np.random.default_rng(batch_seed)
        pick = rng.choice(len(clean), size=min(cfg.batch_size, len(clean)), replace=False)
        inputs = denoising_step_inputs(clean[pick], [corpus.labels[i] for i in pick], corpus.noises,
                                       replace(cfg.mix, seed=derive_seed(batch_seed, 1)), frames,
                                       cfg.mask_span, cfg.mask_start_prob, mask_seed=derive_seed(batch_seed, 2))
        lr = lr_at(step, cfg)
        loss, gnorm = pretrain_step(model, opt, inputs, lr, batch_seed)
        losses.append(loss)
        norms.append(gnorm)
        lrs.append(lr)
        if step % 20 == 0 or step == 1:
            log.info("step %d loss %.4f grad_norm %.3f lr %.2e", step, loss, gnorm, lr)
        if out and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(model, out / f"step{step}", train_config=cfg.to_dict())
    if out:
        with open(out / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "grad_norm", "lr"])
            for i, (l, g, r) in enumerate(zip(losses, norms, lrs), start=1):
                w.writerow([i, repr(l), repr(g), repr(r)])
        save_checkpoint(model, out / "final", train_config=cfg.to_dict())
    return TrainResult(losses, norms, lrs, model, corpus)
