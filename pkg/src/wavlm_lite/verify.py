"""Acceptance checks. Each returns a :class:`CheckResult`; ``run_all`` runs them in order.

Every check compares the implementation against an oracle written
separately here (arbitrary precision evaluation, naive formulas, direct
recomputation from audit records, finite differences).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import mpmath
import numpy as np
from scipy import stats

from . import numeric as nm
from .audio import mfcc
from .encoder import ConvFeatureEncoder, EncoderConfig, InputTooShortError
from .gradcheck import run_gradcheck
from .labeler import align_to_encoder, assign, kmeans_fit
from .mixer import MixConfig, simulate_batch
from .model import WavLMLite, preset
from .objective import PredictionHead, codeword_logits, masked_loss
from .train import TrainConfig, denoising_step_inputs, synthetic_corpus, train
from .transformer import Transformer, TransformerConfig, bucket_index, bucket_matrix, half_range_flags


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    limit: float | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f" (limit {self.limit:g}s)" if self.limit else ""
        return f"[{status}] {self.name}: {self.detail} [{self.seconds:.1f}s{budget}]"


def _timed(name: str, limit: float | None, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if limit is not None and dt > limit:
        ok = False
        detail += f"; exceeded time limit {limit:g}s"
    return CheckResult(name, ok, detail, dt, limit)


# -- 1 ------------------------------------------------------------------------

def bucket_oracle(offset: int, n: int = 320, m: int = 800) -> int:
    """Piecewise bucket map evaluated with 50-digit arithmetic."""
    with mpmath.workdps(50):
        a = abs(offset)
        q = mpmath.mpf(n) / 4
        if a < q:
            b = a
        elif a < m:
            b = int(mpmath.floor(q * ((mpmath.log(a) - mpmath.log(q)) / (mpmath.log(m) - mpmath.log(q)) + 1)))
        else:
            b = n // 2 - 1
    return int(b) + (n // 2 if offset > 0 else 0)


def check_buckets() -> tuple[bool, str]:
    offsets = range(-2000, 2001)
    got = np.array([bucket_index(o) for o in offsets])
    want = np.array([bucket_oracle(o) for o in offsets])
    mismatches = int(np.sum(got != want))
    vec = bucket_matrix(2001)[1000]  # row i=1000 covers offsets 1000-j
    vec_ok = all(vec[j] == bucket_index(1000 - j) for j in range(2001))
    sat = all(bucket_index(o) == 159 for o in range(-2000, -799)) and all(bucket_index(o) == 319 for o in range(800, 2001))
    cont = bucket_index(-799) == 159 and bucket_index(799) == 319
    image = got.min() >= 0 and got.max() <= 319
    ok = mismatches == 0 and vec_ok and sat and cont and image
    return ok, (f"mismatches={mismatches}/4001, image=[{got.min()},{got.max()}], saturation={sat}, "
                f"continuity@799={cont}, matrix-form agrees={vec_ok}")


# -- 2 ------------------------------------------------------------------------

def _naive_layer_attention(tr: Transformer, h: np.ndarray, layer: int) -> tuple[np.ndarray, np.ndarray]:
    """Re-derive one attention layer directly from the parameter arrays, no translation trick."""
    cfg = tr.cfg
    L = tr.layers[layer]
    T, D = h.shape
    H, dk = cfg.heads, cfg.d_k
    proj = {k: h @ L[k][0].data + L[k][1].data for k in ("q", "k", "v")}
    u, w_vec, w_s = (g.data for g in L["gates"])
    table = tr.bias_table.data
    out_heads, weights = [], []
    for hd in range(H):
        sl = slice(hd * dk, (hd + 1) * dk)
        q, k, v = proj["q"][:, sl], proj["k"][:, sl], proj["v"][:, sl]
        logits = np.empty((T, T))
        for i in range(T):
            gu = 1 / (1 + np.exp(-q[i] @ u[hd]))
            gr = 1 / (1 + np.exp(-q[i] @ w_vec[hd]))
            for j in range(T):
                d = table[hd, bucket_index(i - j, cfg.buckets.n, cfg.buckets.m)]
                r = d + gu * d + (1 - gu) * (w_s[hd] * gr * d)
                logits[i, j] = q[i] @ k[j] / math.sqrt(dk) + r
        e = np.exp(logits)
        a = e / e.sum(axis=1, keepdims=True)
        weights.append(a)
        out_heads.append(a @ v)
    ctx = np.concatenate(out_heads, axis=1)
    return ctx @ L["out"][0].data + L["out"][1].data, np.stack(weights)


def check_attention(cases: int = 100, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    cfg = TransformerConfig(d_model=16, heads=2, d_ff=32, layers=1)
    worst_out = worst_w = worst_rowsum = 0.0
    argmax_ok = True
    for c in range(cases):
        tr = Transformer(cfg, np.random.default_rng(seed + c), dtype=np.float64)
        tr.bias_table.data = rng.normal(0, 1.0, tr.bias_table.shape)
        T = int(rng.integers(1, 33))
        h = rng.normal(0, 1.0, (T, cfg.d_model))
        out, a = tr.attention(nm.Tensor(h[None]), 0, return_weights=True)
        ref_out, ref_a = _naive_layer_attention(tr, h, 0)
        worst_out = max(worst_out, float(np.max(np.abs(out.data[0] - ref_out))))
        worst_w = max(worst_w, float(np.max(np.abs(a.data[0] - ref_a))))
        worst_rowsum = max(worst_rowsum, float(np.max(np.abs(a.data.sum(-1) - 1))))
        argmax_ok &= bool(np.array_equal(a.data[0].argmax(-1), ref_a.argmax(-1)))
    # fp16 overflow simulation: large, coherent q and k give logits near 1e5
    dk = 16
    q = 158.0 + rng.normal(0, 1.0, (8, dk))
    k = 158.0 + rng.normal(0, 1.0, (8, dk))
    flags = half_range_flags(q, k, scale_c=32.0)
    logit_mag = float(np.max(np.abs(q @ k.T / math.sqrt(dk))))
    overflow_ok = (flags["naive_logits"] and not flags["stable_args"] and not flags["stable_scores"]
                   and flags["stable_args_max"] <= 0.0)
    ok = worst_out < 1e-10 and worst_w < 1e-10 and worst_rowsum < 1e-6 and argmax_ok and overflow_ok
    return ok, (f"max|out diff|={worst_out:.2e}, max|weight diff|={worst_w:.2e}, row-sum err={worst_rowsum:.1e}, "
                f"argmax equal={argmax_ok}; logits~{logit_mag:.3g}: naive flagged={flags['naive_logits']}, "
                f"stable args flagged={flags['stable_args']} (max arg {flags['stable_args_max']:.3g})")


# -- 3 ------------------------------------------------------------------------

def _noise_segment(noise: np.ndarray, L: int, offset: int) -> np.ndarray:
    if len(noise) < L:
        return np.resize(noise, L)
    return noise[offset:offset + L]


def check_mixer(total: int = 100_000, B: int = 100, L: int = 240, p: float = 0.2, p_n: float = 0.3,
                seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    noises = [rng.normal(0, 0.3, n) for n in (97, 240, 611, 1500)]
    ls, s_pri, s_sec, r_utt, r_noise = [], [], [], [], []
    modified = n_noise = n_events = 0
    worst_id = 0.0
    region_ok = True
    for b in range(total // B):
        clean = rng.normal(0, 0.5, (B, L)) * rng.uniform(0.1, 1.0, (B, 1))
        before = clean.copy()
        mixed, events = simulate_batch(clean, noises, MixConfig(p=p, p_n=p_n, seed=seed * 7919 + b))
        if not np.array_equal(before, clean):
            return False, "clean batch was mutated"
        changed = np.flatnonzero(np.any(mixed != clean, axis=1))
        if set(changed) != {e.primary_index for e in events}:
            region_ok = False
        modified += len(events)
        for e in events:
            n_events += 1
            pri = clean[e.primary_index]
            if e.source == "noise":
                n_noise += 1
                sec = _noise_segment(noises[e.secondary_index], L, e.noise_offset)
                r_noise.append(e.r)
            else:
                sec = clean[e.secondary_index]
                r_utt.append(e.r)
            e_pri = float(np.sum(pri * pri)) / L
            e_sec = float(np.sum(sec * sec)) / L
            worst_id = max(worst_id, abs(10 * math.log10(e_pri / (e.scl ** 2 * e_sec)) - e.r))
            ls.append(e.l)
            s_pri.append((e.s_pri, e.l))
            s_sec.append((e.s_sec, e.l))
            outside = np.ones(L, dtype=bool)
            outside[e.region] = False
            if not np.array_equal(mixed[e.primary_index, outside], pri[outside]):
                region_ok = False
    half = L // 2
    sigma_p = math.sqrt(p * (1 - p) / total)
    sigma_n = math.sqrt(p_n * (1 - p_n) / n_events)
    frac_mod, frac_noise = modified / total, n_noise / n_events
    counts = np.bincount(np.array(ls), minlength=half + 1)[1:]
    chi_p = stats.chisquare(counts).pvalue
    jitter = np.random.default_rng(seed + 1)

    def start_u(pairs):
        s, l = np.array(pairs).T
        return (s - 1 + jitter.random(len(s))) / (L - l)

    ks_pri = stats.kstest(start_u(s_pri), "uniform").pvalue
    ks_sec = stats.kstest(start_u(s_sec), "uniform").pvalue
    ks_ru = stats.kstest((np.array(r_utt) + 5) / 10, "uniform").pvalue
    ks_rn = stats.kstest((np.array(r_noise) + 5) / 25, "uniform").pvalue
    ok = (abs(frac_mod - p) <= 3 * sigma_p and abs(frac_noise - p_n) <= 3 * sigma_n and worst_id < 1e-9
          and max(ls) <= half and min(ls) >= 1 and region_ok
          and min(chi_p, ks_pri, ks_sec, ks_ru, ks_rn) > 1e-3)
    return ok, (f"modified={frac_mod:.4f} (p={p}±{3 * sigma_p:.4f}), noise share={frac_noise:.4f} "
                f"(p_n={p_n}±{3 * sigma_n:.4f}), max identity err={worst_id:.1e}, max l={max(ls)}<=L/2={half}, "
                f"locality={region_ok}, p-values: l {chi_p:.3f}, s_pri {ks_pri:.3f}, s_sec {ks_sec:.3f}, "
                f"r_utt {ks_ru:.3f}, r_noise {ks_rn:.3f}")


# -- 4 ------------------------------------------------------------------------

def _recurrence(n: int, cfg: EncoderConfig) -> int:
    for k, s in zip(cfg.kernels, cfg.strides):
        n = (n - k) // s + 1
    return n


def check_encoder(seed: int = 0) -> tuple[bool, str]:
    cfg = EncoderConfig()  # 512 channels, full geometry
    enc = ConvFeatureEncoder(cfg, np.random.default_rng(seed), dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    t400 = enc.encode(rng.uniform(-1, 1, 400)).shape[0]
    x = rng.uniform(-1, 1, 16000)
    base = enc.encode(x).data
    t16k = base.shape[0]
    try:
        enc.encode(np.zeros(399))
        short_ok = False
    except InputTooShortError:
        short_ok = True
    locality = True
    for t in (0, 1, 24, 48):
        y = x.copy()
        outside = np.ones(16000, dtype=bool)
        outside[320 * t:320 * t + 400] = False
        y[outside] = rng.uniform(-1, 1, outside.sum())
        locality &= bool(np.array_equal(enc.encode(y).data[t], base[t]))
    rec_ok = all(cfg.frames(n) == _recurrence(n, cfg) for n in range(400, 64001, 97))
    ok = t400 == 1 and t16k == 49 and short_ok and locality and rec_ok
    return ok, (f"400 samples -> {t400} frame, 16000 -> {t16k}, 399 rejected={short_ok}, "
                f"perturbation outside receptive field leaves frame exact={locality}, recurrence sweep={rec_ok}")


# -- 5 ------------------------------------------------------------------------

def check_gradients(seed: int = 0) -> tuple[bool, str]:
    rep = run_gradcheck(seed=seed, h=1e-4, tol=1e-4)
    name, err = rep.worst
    return rep.ok, (f"{len(rep.errors)} parameter tensors, {sum(rep.checked.values())} entries; "
                    f"worst rel err {err:.2e} ({name}) < 1e-4")


# -- 6 ------------------------------------------------------------------------

def check_loss_semantics(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    T, D, C = 12, 16, 8
    head = PredictionHead(D, C, d_e=16, rng=np.random.default_rng(seed), dtype=np.float64)
    h_np = rng.normal(size=(T, D))
    z = rng.integers(0, C, T)
    empty = masked_loss(nm.Tensor(h_np), z, np.zeros(T, bool), head).item()
    mask = np.zeros(T, bool)
    mask[[1, 2, 3, 7, 11]] = True
    uni = PredictionHead(D, C, d_e=16, rng=np.random.default_rng(seed), dtype=np.float64)
    uni.codewords.data = np.tile(rng.normal(size=(1, 16)), (C, 1))
    u_loss = masked_loss(nm.Tensor(h_np), [z, (z + 1) % C], mask, uni).item()
    uniform_err = abs(u_loss - 2 * mask.sum() * math.log(C)) / (2 * mask.sum())
    h = nm.Parameter(h_np, "h")
    nm.backward(masked_loss(h, z, mask, head))
    unmasked_zero = bool(np.all(h.grad[~mask] == 0.0)) and bool(np.any(h.grad[mask] != 0.0))
    proj = h_np @ head.proj.data
    l1 = codeword_logits(nm.Tensor(proj), head.codewords, head.tau).data
    scale_err = max(float(np.max(np.abs(codeword_logits(nm.Tensor(a * proj), head.codewords, head.tau).data - l1)))
                    for a in (1e-3, 0.5, 7.0, 1e4))
    ok = empty == 0.0 and uniform_err < 1e-9 and unmasked_zero and scale_err < 1e-9
    return ok, (f"empty-mask loss={empty}, uniform loss per term err={uniform_err:.1e}, "
                f"unmasked grads exactly 0={unmasked_zero}, cosine scale err={scale_err:.1e}")


# -- 7 ------------------------------------------------------------------------

def check_decoupling(seed: int = 0) -> tuple[bool, str]:
    waves = synthetic_corpus(6, 1.0, seed=seed)
    clean = np.array([w.samples for w in waves])
    feats = np.vstack([mfcc(w) for w in waves])
    cb = kmeans_fit(feats, 8, iters=30, seed=seed)
    frames = 49

    def labeler(batch):
        return [align_to_encoder(assign(cb, mfcc(x)), frames) for x in batch]

    before = labeler(clean)
    inputs = denoising_step_inputs(clean, labeler, [], MixConfig(p=1.0, p_n=0.0, seed=seed), frames,
                                   mask_seed=seed)
    after = labeler(clean)
    same = all(np.array_equal(a, b) for a, b in zip(before, after))
    mixed_labels = labeler(inputs.mixed)
    audit_ok = len(inputs.events) == len(clean)
    differs = 0
    for e in inputs.events:
        i = e.primary_index
        audit_ok &= int(inputs.label_source[i]) == i
        audit_ok &= np.array_equal(inputs.labels[i][0], before[i])
        region = np.zeros(len(clean[0]), bool)
        region[e.region] = True
        mixed_frames = np.array([region[320 * t:320 * t + 400].any() for t in range(frames)])
        targets = inputs.masks[i] & mixed_frames
        audit_ok &= np.array_equal(inputs.labels[i][0][targets], before[i][targets])
        differs += int(np.sum(mixed_labels[i][targets] != before[i][targets]))
    ok = same and audit_ok
    return ok, (f"clean labels identical before/after mixing={same}; {len(inputs.events)} events, every masked "
                f"mixed-region target taken from its primary utterance={audit_ok} "
                f"({differs} such frames would have had a different label if taken from the mixture)")


# -- 8 ------------------------------------------------------------------------

def check_toy_learning(cfg: TrainConfig | None = None, ratio: float = 0.7) -> tuple[bool, str]:
    cfg = cfg or TrainConfig()
    first = train(cfg)
    again = train(cfg)
    w = cfg.smooth
    init = float(np.mean(first.losses[:w]))
    final = float(np.mean(first.losses[-w:]))
    same = first.losses == again.losses
    ok = final <= ratio * init and same
    return ok, (f"{cfg.steps} steps: mean loss first {w}={init:.2f}, last {w}={final:.2f} "
                f"(ratio {final / init:.3f} <= {ratio}), identical rerun={same}")


# -- 9 ------------------------------------------------------------------------

def check_param_count() -> tuple[bool, str]:
    n = WavLMLite(preset("base")).num_parameters()
    target = 94.70e6
    rel = abs(n - target) / target
    return rel <= 0.01, f"base geometry has {n / 1e6:.2f}M parameters (target 94.70M, rel diff {rel:.2%})"


CHECKS = [
    ("1 bucket function oracle", 1.0, check_buckets),
    ("2 stable attention equivalence", 10.0, check_attention),
    ("3 mixing simulation fidelity", 60.0, check_mixer),
    ("4 encoder geometry", 10.0, check_encoder),
    ("5 gradient correctness", 120.0, check_gradients),
    ("6 loss semantics", None, check_loss_semantics),
    ("7 denoising decoupling", None, check_decoupling),
    ("8 toy learning", None, check_toy_learning),
    ("9 parameter count", None, check_param_count),
]


def run_all(echo: Callable[[str], None] | None = print) -> list[CheckResult]:
    results = []
    t0 = time.perf_counter()
    for name, limit, fn in CHECKS:
        res = _timed(name, limit, fn)
        results.append(res)
        if echo:
            echo(res.line())
    total = time.perf_counter() - t0
    wall_ok = total < 600
    results.append(CheckResult("8b verify wall time", wall_ok, f"total {total:.1f}s < 600s", total, 600))
    if echo:
        echo(results[-1].line())
    return results
