import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavlm_lite import numeric as nm
from wavlm_lite.objective import (
    PredictionHead, apply_mask, batch_masked_loss, codeword_logits, codeword_logprobs, masked_loss,
    sample_masks,
)


def _head(D=6, C=3, d_e=4, seed=0):
    return PredictionHead(D, C, d_e=d_e, rng=np.random.default_rng(seed), dtype=np.float64)


class TestMasks:
    def test_zero_probability(self):
        assert sample_masks(50, start_prob=0.0, seed=1).indices.size == 0

    def test_force_min(self):
        m = sample_masks(50, start_prob=0.0, seed=1, force_min=True)
        assert m.indices.size == 10

    def test_truncated_at_end(self):
        T = 8
        seed = next(s for s in range(10_000)
                    if sample_masks(T, start_prob=0.2, seed=s).starts.tolist() == [T - 3])
        assert sample_masks(T, start_prob=0.2, seed=seed).indices.tolist() == [T - 3, T - 2, T - 1]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 200), st.integers(0, 10**6), st.integers(1, 15))
    def test_union_of_clipped_spans(self, T, seed, span):
        m = sample_masks(T, span=span, start_prob=0.1, seed=seed)
        want = set()
        for s in m.starts:
            want |= set(range(s, min(T, s + span)))
        assert set(m.indices.tolist()) == want
        assert m.mask.sum() == len(want)

    def test_coverage(self):
        m = sample_masks(100_000, span=10, start_prob=0.08, seed=0)
        assert abs(m.mask.mean() - (1 - 0.92 ** 10)) < 0.01

    def test_deterministic(self):
        assert sample_masks(300, seed=5).indices.tolist() == sample_masks(300, seed=5).indices.tolist()


class TestApplyMask:
    def test_empty_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 4))
        out = apply_mask(nm.Tensor(x), np.zeros(5, bool), nm.Tensor(np.ones(4)))
        assert out.data.tobytes() == x.tobytes()

    def test_all_rows(self):
        emb = np.arange(4.0)
        out = apply_mask(nm.Tensor(np.zeros((3, 2, 4))), np.ones((3, 2), bool), nm.Tensor(emb))
        assert np.all(out.data == emb)

    def test_gradient_routes(self):
        x = nm.Parameter(np.ones((4, 3)), "x")
        emb = nm.Parameter(np.zeros(3), "emb")
        mask = np.array([True, False, True, False])
        nm.backward(nm.sum_(apply_mask(x, mask, emb)))
        assert np.array_equal(x.grad, np.where(mask[:, None], 0.0, 1.0) * np.ones((4, 3)))
        assert np.array_equal(emb.grad, [2.0, 2.0, 2.0])

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            apply_mask(nm.Tensor(np.zeros((3, 2))), np.zeros(4, bool), nm.Tensor(np.zeros(2)))


class TestCodewordDistribution:
    def test_identical_codewords_uniform(self):
        head = _head(C=5)
        head.codewords.data = np.tile(np.array([[1.0, -2.0, 0.5, 3.0]]), (5, 1))
        p = np.exp(codeword_logprobs(np.random.default_rng(1).normal(size=6), head).data)
        np.testing.assert_allclose(p, 0.2, atol=1e-15)

    def test_two_codewords(self):
        logits = codeword_logits(nm.Tensor(np.array([1.0, 0.0])), nm.Tensor(np.eye(2)), 0.1).data
        p = np.exp(nm.log_softmax(logits).data)
        assert round(float(p[0]), 7) == 0.9999546
        assert abs(p[0] - math.exp(10) / (math.exp(10) + 1)) < 1e-15

    def test_zero_vector_guarded(self):
        head = _head(C=4)
        lp = codeword_logprobs(np.zeros(6), head).data
        np.testing.assert_allclose(np.exp(lp), 0.25, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(1e-3, 1e3))
    def test_sums_to_one_and_scale_free(self, seed, a):
        head = _head(C=7, seed=seed % 97)
        h = np.random.default_rng(seed).normal(size=(3, 6))
        lp = codeword_logprobs(h, head).data
        np.testing.assert_allclose(np.exp(lp).sum(-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(codeword_logprobs(a * h, head).data, lp, atol=1e-9)


def _oracle_loss(h, labels_list, mask, head):
    """Direct evaluation: project, cosine with each codeword, softmax, sum -log over masked frames."""
    total = 0.0
    for t in np.flatnonzero(mask):
        v = h[t] @ head.proj.data
        sims = [float(v @ e) / (np.linalg.norm(v) * np.linalg.norm(e)) / head.tau for e in head.codewords.data]
        norm = math.log(sum(math.exp(s) for s in sims))
        for z in labels_list:
            total -= sims[z[t]] - norm
    return total


class TestMaskedLoss:
    def test_empty_mask(self):
        head = _head()
        assert masked_loss(nm.Tensor(np.ones((4, 6))), np.zeros(4, int), np.zeros(4, bool), head).item() == 0.0

    def test_uniform_single_frame(self):
        head = _head(C=8)
        head.codewords.data = np.ones((8, 4))
        mask = np.zeros(4, bool)
        mask[2] = True
        loss = masked_loss(nm.Tensor(np.random.default_rng(0).normal(size=(4, 6))), np.full(4, 5), mask, head)
        assert abs(loss.item() - math.log(8)) < 1e-12
        assert round(loss.item(), 5) == 2.07944

    def test_enumeration(self):
        head = _head(D=6, C=3, seed=2)
        h = np.random.default_rng(3).normal(size=(4, 6))
        z = np.array([0, 2, 1, 2])
        for bits in range(16):
            mask = np.array([(bits >> t) & 1 for t in range(4)], bool)
            got = masked_loss(nm.Tensor(h), z, mask, head).item()
            assert abs(got - _oracle_loss(h, [z], mask, head)) < 1e-12

    def test_label_sets_sum(self):
        head = _head(seed=4)
        h = np.random.default_rng(5).normal(size=(6, 6))
        z1, z2 = np.array([0, 1, 2, 0, 1, 2]), np.array([2, 2, 2, 0, 0, 0])
        mask = np.array([1, 0, 1, 1, 0, 1], bool)
        got = masked_loss(nm.Tensor(h), [z1, z2], mask, head).item()
        assert abs(got - _oracle_loss(h, [z1, z2], mask, head)) < 1e-12

    def test_out_of_range(self):
        head = _head(C=3)
        with pytest.raises(ValueError):
            masked_loss(nm.Tensor(np.ones((3, 6))), np.array([0, 3, 1]), np.ones(3, bool), head)
        with pytest.raises(ValueError):
            masked_loss(nm.Tensor(np.ones((3, 6))), np.array([0, -1, 1]), np.ones(3, bool), head)

    def test_unmasked_gradient_exactly_zero(self):
        head = _head(seed=6)
        h = nm.Parameter(np.random.default_rng(7).normal(size=(5, 6)), "h")
        mask = np.array([0, 1, 0, 0, 1], bool)
        nm.backward(masked_loss(h, np.array([0, 1, 2, 0, 1]), mask, head))
        assert np.all(h.grad[~mask] == 0.0) and np.all(h.grad[mask] != 0.0)

    def test_batch_is_mean_of_utterances(self):
        head = _head(seed=8)
        rng = np.random.default_rng(9)
        h = rng.normal(size=(3, 5, 6))
        z = [rng.integers(0, 3, 5) for _ in range(3)]
        masks = rng.random((3, 5)) < 0.5
        masks[0] = False
        got = batch_masked_loss(nm.Tensor(h), z, masks, head).item()
        want = sum(_oracle_loss(h[b], [z[b]], masks[b], head) for b in range(3)) / 3
        assert abs(got - want) < 1e-12

    def test_head_gradients(self):
        head = _head(seed=10)
        h = np.random.default_rng(11).normal(size=(5, 6))
        z = np.array([0, 1, 2, 1, 0])
        mask = np.array([1, 1, 0, 1, 1], bool)
        nm.zero_grad(head.params.values())
        nm.backward(masked_loss(nm.Tensor(h), z, mask, head))
        for p in head.params.values():
            flat, g = p.data.reshape(-1), p.grad.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + 1e-6
                up = _oracle_loss(h, [z], mask, head)
                flat[i] = old - 1e-6
                down = _oracle_loss(h, [z], mask, head)
                flat[i] = old
                assert abs((up - down) / 2e-6 - g[i]) < 1e-6
