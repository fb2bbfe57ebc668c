import csv
import json
import math

import numpy as np
import pytest

from wavlm_lite import numeric as nm
from wavlm_lite.checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from wavlm_lite.mixer import MixConfig
from wavlm_lite.model import WavLMLite, parameter_breakdown, preset
from wavlm_lite.train import (
    Adam, TrainConfig, denoising_step_inputs, lr_at, pretrain_step, smoothed, synthetic_corpus, train,
)

SMALL = dict(preset="micro", steps=4, warmup_steps=2, batch_size=2, n_utterances=4, C=4, seconds=0.5,
             kmeans_iters=10)


def _step_inputs(model, seed=0, B=2):
    waves = synthetic_corpus(B, 0.5, seed=seed)
    frames = model.frames(len(waves[0]))
    rng = np.random.default_rng(seed)
    labels = [rng.integers(0, model.cfg.C, frames) for _ in range(B)]
    noises = [np.random.default_rng(1).normal(0, 0.1, 3000)]
    return denoising_step_inputs(waves, labels, noises, MixConfig(p=1.0, p_n=0.5, seed=seed), frames,
                                 mask_seed=seed)


class TestSchedule:
    def test_warmup_then_decay(self):
        cfg = TrainConfig(steps=100, warmup_steps=10, peak_lr=1e-3)
        assert lr_at(1, cfg) == pytest.approx(1e-4)
        assert lr_at(10, cfg) == pytest.approx(1e-3)
        assert lr_at(55, cfg) == pytest.approx(5e-4)
        assert lr_at(100, cfg) == 0.0

    def test_no_warmup(self):
        cfg = TrainConfig(steps=10, warmup_steps=0, peak_lr=1.0)
        assert lr_at(1, cfg) == pytest.approx(0.9)


class TestAdam:
    def test_single_step_formula(self):
        w = nm.Parameter(np.array([[1.0, -2.0]]), "w")
        b = nm.Parameter(np.array([0.5]), "b")
        w.grad = np.array([[0.3, -0.1]])
        b.grad = np.array([2.0])
        opt = Adam({"w": w, "b": b}, 0.9, 0.98, 1e-6, weight_decay=0.1)
        opt.step(0.01)
        # after one step the bias-corrected moments are g and g*g
        expect_w = np.array([[1.0, -2.0]]) - 0.01 * (np.array([0.3, -0.1]) / (np.abs([0.3, -0.1]) + 1e-6)
                                                     + 0.1 * np.array([[1.0, -2.0]]))
        np.testing.assert_allclose(w.data, expect_w, atol=1e-15)
        np.testing.assert_allclose(b.data, [0.5 - 0.01 * 2.0 / (2.0 + 1e-6)], atol=1e-15)


class TestStep:
    def test_zero_lr_leaves_parameters(self):
        model = WavLMLite(preset("micro"))
        before = {k: v.copy() for k, v in model.state_arrays().items()}
        opt = Adam(model.params, weight_decay=0.01)
        loss, gnorm = pretrain_step(model, opt, _step_inputs(model), lr=0.0)
        assert math.isfinite(loss) and gnorm > 0
        for k, p in model.params.items():
            assert p.data.tobytes() == before[k].tobytes(), k

    def test_step_changes_parameters(self):
        model = WavLMLite(preset("micro"))
        before = model.params["head.codewords"].data.copy()
        pretrain_step(model, Adam(model.params), _step_inputs(model), lr=1e-3)
        assert not np.array_equal(before, model.params["head.codewords"].data)

    def test_labels_from_clean_audio(self):
        seen = []

        def labeler(batch):
            seen.append(batch.copy())
            return [np.zeros(24, int) for _ in batch]

        waves = synthetic_corpus(3, 0.5, seed=1)
        inputs = denoising_step_inputs(waves, labeler, [np.ones(100) * 0.1], MixConfig(p=1.0, p_n=0.5, seed=2), 24)
        assert np.array_equal(seen[0], np.array([w.samples for w in waves]))
        assert not np.array_equal(inputs.mixed, inputs.clean)
        assert inputs.masks.shape == (3, 24) and inputs.masks.any(axis=1).all()
        assert inputs.label_source.tolist() == [0, 1, 2]

    def test_label_length_checked(self):
        waves = synthetic_corpus(2, 0.5, seed=1)
        with pytest.raises(ValueError):
            denoising_step_inputs(waves, [np.zeros(10, int)] * 2, [], MixConfig(p=0.0), 24)


class TestTrain:
    def test_deterministic_and_outputs(self, tmp_path):
        cfg = TrainConfig(**SMALL)
        a = train(cfg, out_dir=tmp_path / "run")
        b = train(cfg)
        assert a.losses == b.losses and len(a.losses) == 4
        rows = list(csv.reader(open(tmp_path / "run" / "loss.csv")))
        assert rows[0] == ["step", "loss", "grad_norm", "lr"] and len(rows) == 5
        assert float(rows[1][1]) == a.losses[0]
        restored = load_checkpoint(tmp_path / "run" / "final")
        for k, p in a.model.params.items():
            assert np.array_equal(restored.params[k].data, p.data)

    def test_config_round_trip(self, tmp_path):
        cfg = TrainConfig(**SMALL)
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert TrainConfig.from_json(path) == cfg

    def test_config_rejects_unknown(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"stepz": 3})
        with pytest.raises(ValueError):
            TrainConfig(steps=5, warmup_steps=6)

    def test_smoothed(self):
        np.testing.assert_allclose(smoothed([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        model = WavLMLite(preset("micro", seed=3))
        rng = np.random.default_rng(0)
        for p in model.params.values():
            p.data = (p.data + rng.normal(0, 0.1, p.shape)).astype(np.float32)
        save_checkpoint(model, tmp_path / "ck", rng_state={"seed": 1})
        back = load_checkpoint(tmp_path / "ck")
        x = rng.uniform(-0.5, 0.5, (2, 2000))
        assert model.hidden_states(x).data.tobytes() == back.hidden_states(x).data.tobytes()
        m = read_manifest(tmp_path / "ck")
        assert sum(e["count"] for e in m["params"]) == model.num_parameters()
        assert m["total_bytes"] == 4 * model.num_parameters()
        assert m["rng_state"] == {"seed": 1}

    def test_truncated_blob_names_parameter(self, tmp_path):
        model = WavLMLite(preset("micro"))
        save_checkpoint(model, tmp_path / "ck")
        blob = tmp_path / "ck" / "params.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        last = list(model.params)[-1]
        with pytest.raises(CheckpointError, match=last.replace(".", r"\.")):
            load_checkpoint(tmp_path / "ck")

    def test_unknown_version(self, tmp_path):
        save_checkpoint(WavLMLite(preset("micro")), tmp_path / "ck")
        m = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        m["version"] = 99
        (tmp_path / "ck" / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "ck")

    def test_missing_parameter(self, tmp_path):
        save_checkpoint(WavLMLite(preset("micro")), tmp_path / "ck")
        m = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        m["params"] = m["params"][1:]
        (tmp_path / "ck" / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(CheckpointError, match="lacks"):
            load_checkpoint(tmp_path / "ck")


class TestModel:
    def test_presets(self):
        assert preset("toy").transformer.d_model == 32
        with pytest.raises(ValueError):
            preset("huge")

    def test_breakdown_sums(self):
        model = WavLMLite(preset("micro"))
        assert sum(parameter_breakdown(model).values()) == model.num_parameters()

    def test_hidden_shapes(self):
        model = WavLMLite(preset("micro"))
        h, outs = model.hidden_states(np.zeros((2, 16000)), return_all=True)
        assert h.shape == (2, 49, 16) and len(outs) == 2


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fresh_model_loss_near_uniform(seed):
    cfg = TrainConfig(seed=seed)
    model = WavLMLite(cfg.model_config())
    waves = synthetic_corpus(8, 1.0, seed=seed)
    frames = model.frames(16000)
    rng = np.random.default_rng(seed)
    labels = [rng.integers(0, cfg.C, frames) for _ in range(8)]
    inputs = denoising_step_inputs(waves, labels, [np.ones(100) * 0.1], MixConfig(p=0.0), frames, mask_seed=seed)
    loss = model.loss(inputs.mixed, inputs.labels, inputs.masks).item()
    expected = math.log(cfg.C) * inputs.masks.sum() / len(waves)
    assert abs(loss - expected) <= 0.2 * expected, (loss, expected)
