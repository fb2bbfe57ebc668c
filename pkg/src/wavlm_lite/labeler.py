"""Frame-level pseudo-labels: k-means over normalized MFCC frames of clean audio."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import mfcc


@dataclass
class Codebook:
    centers: np.ndarray  # (C, dims), in normalized feature space
    mean: np.ndarray
    std: np.ndarray
    inertia: float = float("nan")
    history: tuple[float, ...] = ()

    @property
    def C(self) -> int:
        return self.centers.shape[0]

    @property
    def dims(self) -> int:
        return self.centers.shape[1]

    @property
    def raw_centers(self) -> np.ndarray:
        """Centers mapped back to the un-normalized feature space."""
        return self.centers * self.std + self.mean

    def normalize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("tcd,tcd->tc", diff, diff)


def _kmeans_pp(x: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, C):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(len(x)))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, len(x) - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def _lloyd(x, centers, iters):
    history = []
    for _ in range(iters):
        d = _sq_dists(x, centers)
        labels = d.argmin(axis=1)
        history.append(float(d[np.arange(len(x)), labels].sum()))
        new = centers.copy()
        counts = np.bincount(labels, minlength=len(centers))
        for c in range(len(centers)):
            if counts[c]:
                new[c] = x[labels == c].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # reseed empty clusters at the points currently worst served
            worst = np.argsort(-d[np.arange(len(x)), labels], kind="stable")
            for c, idx in zip(empty, worst):
                new[c] = x[idx]
        if np.array_equal(new, centers):
            break
        centers = new
    d = _sq_dists(x, centers)
    inertia = float(d.min(axis=1).sum())
    history.append(inertia)
    return centers, inertia, history


def kmeans_fit(features: np.ndarray, C: int, iters: int = 50, seed: int = 0,
               n_init: int = 1, normalize: bool = True) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a (T, dims) matrix")
    if C < 1 or len(x) < C:
        raise ValueError(f"need at least C={C} frames, got {len(x)}")
    if normalize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 1e-8, std, 1.0)
    else:
        mean, std = np.zeros(x.shape[1]), np.ones(x.shape[1])
    xn = (x - mean) / std
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        init = _kmeans_pp(xn, C, rng)
        centers, inertia, hist = _lloyd(xn, init, iters)
        if best is None or inertia < best[1]:
            best = (centers, inertia, hist)
    centers, inertia, hist = best
    return Codebook(centers, mean, std, inertia, tuple(hist))


def assign(cb: Codebook, features: np.ndarray) -> np.ndarray:
    """Nearest center after normalization; ties go to the lowest index."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cb.dims:
        raise ValueError(f"expected (T, {cb.dims}) features, got {x.shape}")
    return _sq_dists(cb.normalize(x), cb.centers).argmin(axis=1)


def align_to_encoder(labels: np.ndarray, encoder_frames: int) -> np.ndarray:
    """Take every other 100 Hz label, then truncate or repeat-last to ``encoder_frames``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("no labels to align")
    if encoder_frames <= 0:
        raise ValueError("encoder_frames must be positive")
    dec = labels[::2]
    if dec.size >= encoder_frames:
        return dec[:encoder_frames].copy()
    return np.concatenate([dec, np.full(encoder_frames - dec.size, dec[-1], dtype=dec.dtype)])


def label_waveforms(cb: Codebook, waves, encoder_frames) -> list[np.ndarray]:
    """MFCC -> nearest center -> encoder-rate alignment, per clean waveform."""
    out = []
    for w in waves:
        n = len(getattr(w, "samples", w))
        out.append(align_to_encoder(assign(cb, mfcc(w)), encoder_frames(n)))
    return out


def fit_mfcc_codebook(waves, C: int = 32, iters: int = 50, seed: int = 0, n_init: int = 1) -> Codebook:
    feats = np.vstack([mfcc(w) for w in waves])
    return kmeans_fit(feats, C, iters=iters, seed=seed, n_init=n_init)


def fit_hidden_codebook(hidden_states, C: int, iters: int = 50, seed: int = 0) -> Codebook:
    """Experimental second pass: cluster transformer hidden states (list of (T, d) arrays)."""
    return kmeans_fit(np.vstack(hidden_states), C, iters=iters, seed=seed)


# -- files --------------------------------------------------------------------

def save_codebook(cb: Codebook, path) -> None:
    """JSON manifest at ``path`` plus little-endian float32 centers at ``path`` + ``.bin``."""
    path = Path(path)
    blob = path.with_name(path.name + ".bin")
    manifest = {"version": 1, "C": cb.C, "dims": cb.dims,
                "mean": cb.mean.tolist(), "std": cb.std.tolist(),
                "blob": blob.name, "dtype": "<f4"}
    path.write_text(json.dumps(manifest, indent=1))
    blob.write_bytes(cb.centers.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    path = Path(path)
    manifest = json.loads(path.read_text())
    raw = (path.parent / manifest["blob"]).read_bytes()
    C, dims = manifest["C"], manifest["dims"]
    if len(raw) != 4 * C * dims:
        raise ValueError(f"codebook blob holds {len(raw)} bytes, expected {4 * C * dims}")
    centers = np.frombuffer(raw, dtype="<f4").reshape(C, dims).astype(np.float64)
    return Codebook(centers, np.array(manifest["mean"]), np.array(manifest["std"]))


def write_labels(path, label_sets) -> None:
    with open(path, "w") as fh:
        for labels in label_sets:
            fh.write(" ".join(str(int(z)) for z in labels) + "\n")


def read_labels(path) -> list[np.ndarray]:
    with open(path) as fh:
        return [np.array([int(t) for t in line.split()], dtype=np.int64) for line in fh if line.strip()]
