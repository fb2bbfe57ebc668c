import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavlm_lite.mixer import (
    MixConfig, events_from_json, events_to_json, fit_noise, mixing_scale, simulate_batch,
)
from wavlm_lite import mixer


def _batch(seed=0, B=16, L=800):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 0.3, (B, L)) * rng.uniform(0.2, 1.0, (B, 1))


NOISES = [np.random.default_rng(9).normal(0, 0.2, n) for n in (50, 800, 2000)]


class TestMixingScale:
    def test_symmetric(self):
        assert mixing_scale(0.7, 0.7, 0.0) == 1.0

    def test_values(self):
        assert round(mixing_scale(1, 1, 10), 6) == 0.316228
        assert round(mixing_scale(0.5, 2, -5), 6) == 0.889140

    @pytest.mark.parametrize("e", [(0, 1), (1, 0), (-1, 1)])
    def test_nonpositive(self, e):
        with pytest.raises(ValueError):
            mixing_scale(*e, 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-6, 1e3), st.floats(1e-6, 1e3), st.floats(-20, 30))
    def test_identity(self, e1, e2, r):
        scl = mixing_scale(e1, e2, r)
        assert abs(10 * math.log10(e1 / (scl * scl * e2)) - r) < 1e-9


class TestSimulateBatch:
    def test_p_zero_is_identity(self):
        x = _batch()
        mixed, events = simulate_batch(x, NOISES, MixConfig(p=0.0))
        assert events == [] and mixed.tobytes() == x.tobytes()

    def test_all_noise(self):
        x = _batch()
        _, events = simulate_batch(x, NOISES, MixConfig(p=1.0, p_n=1.0, seed=3))
        assert len(events) == len(x)
        assert sorted(e.primary_index for e in events) == list(range(len(x)))
        assert all(e.source == "noise" for e in events)

    def test_clean_not_mutated(self):
        x = _batch()
        before = x.tobytes()
        simulate_batch(x, NOISES, MixConfig(p=1.0, p_n=0.5, seed=1))
        assert x.tobytes() == before

    def test_locality_and_reconstruction(self):
        x = _batch(1)
        mixed, events = simulate_batch(x, NOISES, MixConfig(p=0.7, p_n=0.4, seed=5))
        L = x.shape[1]
        touched = set()
        for e in events:
            i = e.primary_index
            touched.add(i)
            outside = np.ones(L, bool)
            outside[e.region] = False
            assert np.array_equal(mixed[i, outside], x[i, outside])
            assert np.all(mixed[i, e.region] != x[i, e.region])
            assert 1 <= e.l <= L // 2 and 1 <= e.s_pri <= L - e.l and 1 <= e.s_sec <= L - e.l
            if e.source == "utterance":
                sec = x[e.secondary_index]
                assert -5 <= e.r <= 5
            else:
                clip = NOISES[e.secondary_index]
                sec = np.resize(clip, L) if len(clip) < L else clip[e.noise_offset:e.noise_offset + L]
                assert -5 <= e.r <= 20
            seg = sec[e.s_sec - 1:e.s_sec - 1 + e.l]
            np.testing.assert_allclose(mixed[i, e.region], x[i, e.region] + e.scl * seg, rtol=0, atol=1e-15)
            e_pri = np.mean(x[i] ** 2)
            e_sec = np.mean(sec ** 2)
            assert abs(10 * math.log10(e_pri / (e.scl ** 2 * e_sec)) - e.r) < 1e-9
        for i in set(range(len(x))) - touched:
            assert np.array_equal(mixed[i], x[i])

    def test_fraction_modified(self):
        total, B = 10_000, 100
        modified = 0
        for b in range(total // B):
            _, ev = simulate_batch(_batch(b, B=B, L=64), NOISES, MixConfig(p=0.2, seed=1000 + b))
            modified += len(ev)
        assert abs(modified / total - 0.2) <= 0.012

    def test_deterministic(self):
        x = _batch(2)
        cfg = MixConfig(p=0.5, p_n=0.5, seed=11)
        m1, e1 = simulate_batch(x, NOISES, cfg)
        m2, e2 = simulate_batch(x, NOISES, cfg)
        assert m1.tobytes() == m2.tobytes() and e1 == e2

    def test_order_independent_streams(self):
        # processing utterances in reverse reproduces the sequential events
        x = _batch(3)
        cfg = MixConfig(p=0.6, p_n=0.3, seed=4)
        _, seq = simulate_batch(x, NOISES, cfg)
        energies = np.einsum("bl,bl->b", x, x) / x.shape[1]
        rev = [mixer._mix_one(i, x, energies, NOISES, cfg) for i in reversed(range(len(x)))]
        rev = [e for e in reversed(rev) if e is not None]
        for e in rev:
            e.extra.clear()
        assert rev == seq

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            simulate_batch([np.zeros(10), np.zeros(11)], NOISES, MixConfig())

    def test_noise_required(self):
        with pytest.raises(ValueError):
            simulate_batch(_batch(), [], MixConfig(p=0.5, p_n=0.5))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            MixConfig(p=1.5)
        with pytest.raises(ValueError):
            MixConfig(noise_ratio_range=(5, -5))

    def test_events_json_round_trip(self):
        _, events = simulate_batch(_batch(), NOISES, MixConfig(p=0.5, p_n=0.5, seed=2))
        back = events_from_json(events_to_json(events))
        assert [e.to_json() for e in back] == [e.to_json() for e in events]


class TestFitNoise:
    def test_tile_short(self):
        out, off = fit_noise(np.array([1.0, 2.0, 3.0]), 7, np.random.default_rng(0))
        assert off == 0 and out.tolist() == [1, 2, 3, 1, 2, 3, 1]

    def test_crop_long(self):
        clip = np.arange(100.0)
        out, off = fit_noise(clip, 10, np.random.default_rng(0))
        assert np.array_equal(out, clip[off:off + 10]) and 0 <= off <= 90

    def test_empty(self):
        with pytest.raises(ValueError):
            fit_noise(np.zeros(0), 5, np.random.default_rng(0))
