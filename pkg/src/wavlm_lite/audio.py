"""Waveform I/O, synthetic test audio, energy and MFCC features."""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = 512
N_MELS = 26
N_CEPS = 13
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10


class WavFormatError(ValueError):
    """A WAV file is not 16-bit PCM mono at 16 kHz."""

    def __init__(self, field: str, value, expected):
        super().__init__(f"unsupported WAV {field}: {value} (expected {expected})")
        self.field = field


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise WavFormatError("sample_rate", self.sample_rate, SAMPLE_RATE)
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be mono (1-d)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise WavFormatError("channels", fh.getnchannels(), 1)
        if fh.getsampwidth() != 2:
            raise WavFormatError("sample_width", fh.getsampwidth() * 8, 16)
        if fh.getframerate() != SAMPLE_RATE:
            raise WavFormatError("sample_rate", fh.getframerate(), SAMPLE_RATE)
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def write_wav(path, w: Waveform | np.ndarray) -> int:
    """Write 16-bit PCM; returns how many samples had to be clamped to [-1, 1)."""
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    q = np.round(samples * 32768.0)
    clipped = int(np.count_nonzero((q < -32768) | (q > 32767)))
    if clipped:
        log.warning("clamped %d samples while writing %s", clipped, path)
    pcm = np.clip(q, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())
    return clipped


def read_wav_dir(directory) -> tuple[list[str], list[Waveform]]:
    """Read every ``*.wav`` in a flat directory, sorted by file name."""
    paths = sorted(Path(directory).glob("*.wav"))
    return [p.name for p in paths], [read_wav(p) for p in paths]


# -- synthesis ----------------------------------------------------------------

def synth(kind: str, seconds: float, seed: int = 0, **params) -> Waveform:
    """Deterministic test signal.

    kinds: ``sine`` (freq, amplitude), ``white_noise`` (amplitude),
    ``pink_noise`` (amplitude), ``chirp`` (f0, f1, amplitude).
    Noise is scaled so its peak equals ``amplitude``.
    """
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    amp = float(params.get("amplitude", 0.5))
    if not 0 < amp <= 1:
        raise ValueError("amplitude must be in (0, 1]")
    rng = np.random.default_rng(seed)
    if kind == "sine":
        x = amp * np.sin(2 * np.pi * float(params.get("freq", 440.0)) * t)
    elif kind == "chirp":
        f0 = float(params.get("f0", 100.0))
        f1 = float(params.get("f1", 4000.0))
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / max(seconds, 1e-12) * t * t)
        x = amp * np.sin(phase)
    elif kind == "white_noise":
        x = _peak_normalize(rng.standard_normal(n), amp)
    elif kind == "pink_noise":
        x = _peak_normalize(_pink(rng, n), amp)
    else:
        raise ValueError(f"unknown synth kind {kind!r}")
    return Waveform(x)


def _peak_normalize(x: np.ndarray, amp: float) -> np.ndarray:
    peak = np.max(np.abs(x))
    return x * (amp / peak) if peak > 0 else x


def _pink(rng: np.random.Generator, n: int) -> np.ndarray:
    # shape white gaussian spectrum by 1/sqrt(f) -> power ~ 1/f
    coeffs = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(f[1:])
    return np.fft.irfft(coeffs * scale, n=n)


# -- features -----------------------------------------------------------------

def energy(w: Waveform | np.ndarray) -> float:
    """Mean square over the whole utterance."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if x.size == 0:
        raise ValueError("energy of an empty signal is undefined")
    return float(np.dot(x, x) / x.size)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sr: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    """Triangular filters evaluated at the FFT bin frequencies, shape (n_mels, n_fft//2+1)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def frame_count(n_samples: int) -> int:
    return (n_samples - WIN_LENGTH) // HOP_LENGTH + 1


def static_mfcc(x: np.ndarray) -> np.ndarray:
    """13 cepstra per frame, coefficient 0 replaced by log frame energy."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < WIN_LENGTH:
        raise ValueError(f"need at least {WIN_LENGTH} samples for one frame, got {x.size}")
    y = np.concatenate([x[:1], x[1:] - PREEMPHASIS * x[:-1]])
    frames = np.lib.stride_tricks.sliding_window_view(y, WIN_LENGTH)[::HOP_LENGTH]
    log_e = np.log(np.maximum(np.sum(frames * frames, axis=1), LOG_FLOOR))
    spectrum = np.fft.rfft(frames * np.hamming(WIN_LENGTH), n=N_FFT)
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / N_FFT
    mel = np.log(np.maximum(power @ mel_filterbank().T, LOG_FLOOR))
    ceps = dct(mel, type=2, norm="ortho", axis=1)[:, :N_CEPS]
    ceps[:, 0] = log_e
    return ceps


def deltas(feat: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-width frames with edge repetition."""
    T = feat.shape[0]
    padded = np.pad(feat, ((width, width), (0, 0)), mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, width + 1))
    out = np.zeros_like(feat)
    for n in range(1, width + 1):
        out += n * (padded[width + n:width + n + T] - padded[width - n:width - n + T])
    return out / denom


def mfcc(w: Waveform | np.ndarray) -> np.ndarray:
    """(T_f, 39) static + delta + delta-delta MFCC frames at a 10 ms hop."""
    x = w.samples if isinstance(w, Waveform) else w
    c = static_mfcc(x)
    d = deltas(c)
    return np.hstack([c, d, deltas(d)])
