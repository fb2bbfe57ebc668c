import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavlm_lite.audio import synth
from wavlm_lite.encoder import EncoderConfig
from wavlm_lite.labeler import (
    Codebook, align_to_encoder, assign, fit_hidden_codebook, fit_mfcc_codebook, kmeans_fit,
    label_waveforms, load_codebook, read_labels, save_codebook, write_labels,
)


def _identity_codebook(centers):
    centers = np.asarray(centers, dtype=float)
    return Codebook(centers, np.zeros(centers.shape[1]), np.ones(centers.shape[1]))


class TestKmeans:
    def test_two_points(self):
        x = np.zeros((2, 39))
        x[1, 0] = 10.0
        cb = kmeans_fit(x, 2, normalize=False)
        assert sorted(cb.raw_centers[:, 0].tolist()) == [0.0, 10.0]
        assert cb.inertia == 0.0

    def test_single_cluster_is_mean(self):
        x = np.random.default_rng(0).normal(size=(50, 39))
        cb = kmeans_fit(x, 1)
        np.testing.assert_allclose(cb.raw_centers[0], x.mean(0), atol=1e-12)

    def test_exhaustive_optimum(self):
        x = np.random.default_rng(1).normal(size=(8, 3))
        best = np.inf
        for bits in itertools.product([0, 1], repeat=8):
            z = np.array(bits)
            if z.min() == z.max():
                continue
            best = min(best, sum(((x[z == c] - x[z == c].mean(0)) ** 2).sum() for c in (0, 1)))
        one = kmeans_fit(x, 2, normalize=False, seed=0)
        assert one.inertia >= best - 1e-12
        ten = kmeans_fit(x, 2, normalize=False, seed=0, n_init=10)
        assert abs(ten.inertia - best) < 1e-10

    def test_too_few_frames(self):
        with pytest.raises(ValueError):
            kmeans_fit(np.zeros((3, 39)), 4)

    def test_inertia_monotone(self):
        rng = np.random.default_rng(2)
        x = np.vstack([rng.normal(m, 1.0, (60, 5)) for m in (-4, 0, 4, 8)])
        cb = kmeans_fit(x, 6, iters=50, seed=3)
        h = np.array(cb.history)
        assert np.all(np.diff(h) <= 1e-9)

    def test_no_empty_clusters(self):
        rng = np.random.default_rng(3)
        x = np.vstack([np.zeros((40, 2)), np.ones((40, 2)), rng.normal(5, 0.1, (3, 2))])
        cb = kmeans_fit(x, 5, normalize=False, seed=0)
        counts = np.bincount(assign(cb, x), minlength=5)
        assert np.all(counts > 0)

    def test_fixed_point(self):
        # at convergence each center is the mean of the frames assigned to it
        x = np.random.default_rng(4).normal(size=(300, 4))
        cb = kmeans_fit(x, 4, iters=200, seed=1)
        z = assign(cb, x)
        for c in range(cb.C):
            np.testing.assert_allclose(cb.centers[c], cb.normalize(x)[z == c].mean(0), atol=1e-10)

    def test_deterministic(self):
        x = np.random.default_rng(5).normal(size=(100, 39))
        a, b = kmeans_fit(x, 8, seed=7), kmeans_fit(x, 8, seed=7)
        assert a.centers.tobytes() == b.centers.tobytes()

    def test_hidden_state_codebook(self):
        h = [np.random.default_rng(i).normal(size=(20, 16)) for i in range(3)]
        assert fit_hidden_codebook(h, 4, seed=0).centers.shape == (4, 16)


class TestAssign:
    def test_exact_center(self):
        cb = _identity_codebook(np.eye(4, 39) * 3)
        for j in range(4):
            assert assign(cb, cb.centers[j:j + 1])[0] == j

    def test_tie_goes_to_lowest_index(self):
        centers = np.zeros((4, 39))
        centers[0, 0] = 100.0
        centers[1, 1] = 1.0
        centers[2, 0] = -100.0
        centers[3, 1] = -1.0
        assert assign(_identity_codebook(centers), np.zeros((1, 39)))[0] == 1

    def test_linear_scan_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(200, 39))
        cb = kmeans_fit(x, 7, seed=0)
        feats = rng.normal(size=(150, 39))
        want = []
        for f in feats:
            fn = (f - cb.mean) / cb.std
            best, best_d = 0, np.inf
            for c in range(cb.C):
                d = float(np.sum((fn - cb.centers[c]) ** 2))
                if d < best_d:
                    best, best_d = c, d
            want.append(best)
        assert assign(cb, feats).tolist() == want

    def test_dimension_checked(self):
        with pytest.raises(ValueError):
            assign(_identity_codebook(np.eye(2, 39)), np.zeros((3, 13)))


class TestAlign:
    def test_decimation(self):
        z = np.arange(98)
        assert align_to_encoder(z, 49).tolist() == list(range(0, 97, 2))

    def test_repeat_last(self):
        z = np.arange(97)
        out = align_to_encoder(z, 49)
        assert out.tolist() == list(range(0, 97, 2)) and out[-1] == 96

    def test_pad_by_repeat(self):
        assert align_to_encoder(np.array([4, 5, 6]), 4).tolist() == [4, 6, 6, 6]

    def test_empty(self):
        with pytest.raises(ValueError):
            align_to_encoder(np.array([], dtype=int), 3)

    def test_length_sweep(self):
        rng = np.random.default_rng(7)
        for n in range(1, 501):
            z = rng.integers(0, 32, n)
            frames = int(rng.integers(1, 300))
            out = align_to_encoder(z, frames)
            assert len(out) == frames
            k = min(frames, (n + 1) // 2)
            assert np.array_equal(out[:k], z[::2][:k])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 200), st.integers(1, 200))
    def test_values_come_from_input(self, n, frames):
        z = np.arange(n) * 3
        assert set(align_to_encoder(z, frames).tolist()) <= set(z.tolist())


class TestFiles:
    def test_codebook_round_trip(self, tmp_path):
        cb = kmeans_fit(np.random.default_rng(8).normal(size=(60, 39)), 5)
        save_codebook(cb, tmp_path / "cb.json")
        back = load_codebook(tmp_path / "cb.json")
        np.testing.assert_array_equal(back.centers, cb.centers.astype("<f4"))
        np.testing.assert_array_equal(back.mean, cb.mean)
        x = np.random.default_rng(9).normal(size=(40, 39))
        assert np.array_equal(assign(back, x), assign(cb, x))

    def test_truncated_codebook_blob(self, tmp_path):
        cb = kmeans_fit(np.random.default_rng(8).normal(size=(60, 39)), 5)
        save_codebook(cb, tmp_path / "cb.json")
        blob = tmp_path / "cb.json.bin"
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(ValueError):
            load_codebook(tmp_path / "cb.json")

    def test_label_file_round_trip(self, tmp_path):
        sets = [np.array([0, 3, 31]), np.array([7])]
        write_labels(tmp_path / "l.txt", sets)
        assert (tmp_path / "l.txt").read_text() == "0 3 31\n7\n"
        assert [s.tolist() for s in read_labels(tmp_path / "l.txt")] == [[0, 3, 31], [7]]


def test_end_to_end_labels():
    waves = [synth(k, 1.0, seed=i) for i, k in enumerate(["sine", "chirp", "pink_noise", "white_noise"])]
    cb = fit_mfcc_codebook(waves, C=8, seed=0)
    labels = label_waveforms(cb, waves, EncoderConfig().frames)
    assert all(len(z) == 49 and z.min() >= 0 and z.max() < 8 for z in labels)
    again = label_waveforms(fit_mfcc_codebook(waves, C=8, seed=0), waves, EncoderConfig().frames)
    assert all(np.array_equal(a, b) for a, b in zip(labels, again))
