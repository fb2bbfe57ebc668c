"""Noisy / overlapped utterance simulation for denoising pre-training.

A fraction ``p`` of the utterances in a batch gets one region overwritten by
``region + scl * secondary_region`` where the secondary source is either
another utterance of the same batch or a noise clip. The mixed region is at
most half the utterance so the primary speaker stays dominant.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio import energy


@dataclass(frozen=True)
class MixConfig:
    p: float = 0.2
    p_n: float = 0.1
    utterance_ratio_range: tuple[float, float] = (-5.0, 5.0)
    noise_ratio_range: tuple[float, float] = (-5.0, 20.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("p", "p_n"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for name in ("utterance_ratio_range", "noise_ratio_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not ordered: {lo} > {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))


@dataclass
class MixEvent:
    """Audit record of one mix. Start offsets are 1-based as sampled."""

    primary_index: int
    source: str  # "utterance" or "noise"
    secondary_index: int
    r: float
    l: int
    s_pri: int
    s_sec: int
    scl: float
    e_pri: float
    e_sec: float
    noise_offset: int = 0  # crop offset into the raw noise clip, noise branch only
    extra: dict = field(default_factory=dict)

    @property
    def region(self) -> slice:
        """0-based slice of the primary utterance that was modified."""
        return slice(self.s_pri - 1, self.s_pri - 1 + self.l)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


def mixing_scale(e_pri: float, e_sec: float, r_db: float) -> float:
    """Scale making ``10*log10(e_pri / (scl**2 * e_sec)) == r_db``."""
    if e_pri <= 0 or e_sec <= 0:
        raise ValueError(f"energies must be positive (E_pri={e_pri}, E_sec={e_sec})")
    return float(np.sqrt(e_pri / (10.0 ** (r_db / 10.0) * e_sec)))


def fit_noise(noise: np.ndarray, L: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Tile a short clip, or crop a long one at a uniform offset, to length ``L``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise ValueError("empty noise clip")
    if noise.size < L:
        reps = -(-L // noise.size)
        return np.tile(noise, reps)[:L], 0
    offset = int(rng.integers(0, noise.size - L + 1))
    return noise[offset:offset + L], offset


def utterance_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, utterance index)."""
    return np.random.default_rng([int(seed), int(index)])


def _as_array(batch) -> np.ndarray:
    if hasattr(batch, "ndim") and batch.ndim == 2:
        return np.asarray(batch, dtype=np.float64)
    rows = [getattr(u, "samples", u) for u in batch]
    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        raise ValueError(f"batch utterances differ in length: {sorted(lengths)}")
    return np.asarray(rows, dtype=np.float64)


def simulate_batch(batch, noises, cfg: MixConfig) -> tuple[np.ndarray, list[MixEvent]]:
    """Mix a batch; returns a new (B, L) array and one event per modified utterance.

    Secondary utterances are taken from the clean input batch, so every
    utterance's outcome depends only on its own random stream.
    """
    clean = _as_array(batch)
    B, L = clean.shape
    if L < 2:
        raise ValueError("utterances need at least 2 samples")
    noise_arrays = [np.asarray(getattr(n, "samples", n), dtype=np.float64) for n in (noises or [])]
    if cfg.p_n > 0 and cfg.p > 0 and not noise_arrays:
        raise ValueError("p_n > 0 requires at least one noise clip")
    mixed = clean.copy()
    events: list[MixEvent] = []
    energies = np.einsum("bl,bl->b", clean, clean) / L
    for i in range(B):
        ev = _mix_one(i, clean, energies, noise_arrays, cfg)
        if ev is None:
            continue
        ev_sec = ev.extra.pop("secondary_signal")
        reg = ev.region
        s0 = ev.s_sec - 1
        mixed[i, reg] = mixed[i, reg] + ev.scl * ev_sec[s0:s0 + ev.l]
        events.append(ev)
    return mixed, events


def _mix_one(i, clean, energies, noise_arrays, cfg: MixConfig) -> MixEvent | None:
    B, L = clean.shape
    rng = utterance_rng(cfg.seed, i)
    if rng.random() >= cfg.p:
        return None
    v = rng.random()
    if v > cfg.p_n:
        source = "utterance"
        j = int(rng.integers(0, B))
        r = float(rng.uniform(*cfg.utterance_ratio_range))
        sec = clean[j]
        e_sec = float(energies[j])
        offset = 0
    else:
        source = "noise"
        j = int(rng.integers(0, len(noise_arrays)))
        r = float(rng.uniform(*cfg.noise_ratio_range))
        sec, offset = fit_noise(noise_arrays[j], L, rng)
        e_sec = energy(sec)
    l = int(rng.integers(1, L // 2 + 1))
    s_pri = int(rng.integers(1, L - l + 1))
    s_sec = int(rng.integers(1, L - l + 1))
    e_pri = float(energies[i])
    scl = mixing_scale(e_pri, e_sec, r)
    return MixEvent(i, source, j, r, l, s_pri, s_sec, scl, e_pri, e_sec, offset,
                    extra={"secondary_signal": sec})


def events_to_json(events: list[MixEvent]) -> str:
    return json.dumps([e.to_json() for e in events], indent=1)


def events_from_json(text: str) -> list[MixEvent]:
    return [MixEvent(**d) for d in json.loads(text)]
