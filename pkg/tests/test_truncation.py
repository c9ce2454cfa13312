from __future__ import annotations

import numpy as np
import pytest

from streamasr import (
    AudioSpan,
    BadMagicError,
    ChecksumError,
    DegenerateInputError,
    EncoderFeatureSeq,
    ScriptedModel,
    TdmTrainConfig,
    TdmWeights,
    TruncatedFileError,
    ValidationError,
    batch_quantity_loss,
    detect_truncation,
    if_scan,
    load_tdm_weights,
    loss_grad,
    quantity_loss,
    save_tdm_weights,
    signal,
    train_tdm,
)
from streamasr.corpus import make_tdm_dataset, random_scripted_config

from helpers import simulate_if


def _features(frames, content_len=None, d=None):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[:, None]
    return EncoderFeatureSeq(frames=frames, content_len=content_len or frames.shape[0])


class TestSignal:
    def test_zero_weights_give_half(self):
        feats = _features(np.random.default_rng(0).standard_normal((20, 3)))
        alpha = signal(feats, TdmWeights(w=np.zeros(3), b=0.0))
        assert alpha.shape == (19,)
        assert np.allclose(alpha, 0.5)

    def test_last_content_frame_discarded(self):
        feats = _features(np.zeros((60, 2)), content_len=50)
        alpha = signal(feats, TdmWeights(w=np.zeros(2), b=0.0))
        assert alpha.shape == (49,)

    def test_large_bias_saturates_to_one(self):
        feats = _features(np.zeros((10, 2)))
        alpha = signal(feats, TdmWeights(w=np.zeros(2), b=50.0))
        assert np.all(alpha > 1 - 1e-12)

    def test_too_short_content_rejected(self):
        feats = _features(np.zeros((5, 2)), content_len=1)
        with pytest.raises(DegenerateInputError):
            signal(feats, TdmWeights(w=np.zeros(2), b=0.0))

    def test_dim_mismatch_rejected(self):
        feats = _features(np.zeros((5, 2)))
        with pytest.raises(ValidationError):
            signal(feats, TdmWeights(w=np.zeros(3), b=0.0))


class TestIfScan:
    def test_hand_simulated_three_steps(self):
        res = if_scan(np.array([0.6, 0.6, 0.6]), 1.0)
        # hand trace: 0.6 <1; 1.2 >=1 fire@1 ->0.2; 0.8 <1
        assert res.fire_positions == [1]
        assert res.last_fire_p == 1
        assert abs(res.residual - 0.8) < 1e-12

    def test_fire_threshold_inclusive(self):
        res = if_scan(np.array([1.0, 1.0]), 0.999)
        assert res.fire_positions == [0, 1]
        assert res.last_fire_p == 1
        assert abs(res.residual - 0.002) < 1e-9

    def test_all_zero_signal(self):
        res = if_scan(np.zeros(5), 1.0)
        assert res.fire_positions == [] and res.last_fire_p is None and res.residual == 0.0

    def test_matches_independent_simulator(self):
        rng = np.random.default_rng(9)
        for _ in range(1000):
            n = int(rng.integers(0, 200))
            alpha = rng.random(n) * float(rng.uniform(0.1, 2.0))
            f = float(rng.uniform(0.05, 2.0))
            res = if_scan(alpha, f)
            fires, last, acc = simulate_if(alpha, f)
            assert res.fire_positions == fires
            assert res.last_fire_p == last
            assert res.residual == acc

    def test_conservation(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            alpha = rng.random(int(rng.integers(1, 300)))
            f = float(rng.uniform(0.1, 1.5))
            res = if_scan(alpha, f)
            assert abs(alpha.sum() - (f * res.fire_count + res.residual)) < 1e-9
            assert res.residual >= 0

    def test_residual_bounded_in_signal_regime(self):
        # one subtraction per frame keeps the residual under f whenever no
        # single alpha exceeds f, which the sigmoid signal layer guarantees
        rng = np.random.default_rng(18)
        for _ in range(300):
            f = float(rng.uniform(0.5, 1.5))
            alpha = rng.random(int(rng.integers(1, 200))) * f
            res = if_scan(alpha, f)
            assert 0 <= res.residual < f

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            alpha = rng.random(int(rng.integers(1, 80)))
            bumped = alpha + rng.random(alpha.shape) * 0.3
            f = float(rng.uniform(0.2, 1.2))
            assert if_scan(bumped, f).fire_count >= if_scan(alpha, f).fire_count


class TestDetectTruncation:
    def test_fire_at_final_frame_means_complete(self):
        assert detect_truncation(np.array([1.0, 1.0]), 0.999) is False

    def test_early_fire_only_means_truncated(self):
        assert detect_truncation(np.array([0.6, 0.6, 0.6]), 1.0) is True

    def test_no_fire_means_truncated(self):
        assert detect_truncation(np.array([0.0]), 0.5) is True

    def test_definition_cross_check(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            alpha = rng.random(int(rng.integers(1, 60)))
            f = float(rng.uniform(0.2, 1.2))
            fires = if_scan(alpha, f).fire_positions
            fires_at_final = sum(1 for p in fires if p == len(alpha) - 1)
            assert detect_truncation(alpha, f) == (fires_at_final == 0)


class TestQuantityLoss:
    def test_exact_match_is_zero(self):
        assert quantity_loss(np.array([1.0, 1.0, 1.0]), 3) == 0.0

    def test_absolute_error(self):
        assert quantity_loss(np.array([1.0, 1.0]), 3) == 1.0

    def test_batch_rmse(self):
        # utterance errors 1 and 3 -> sqrt((1 + 9) / 2) = sqrt(5)
        loss = batch_quantity_loss([np.array([1.0]), np.array([1.0])], [2, 4])
        assert abs(loss - np.sqrt(5.0)) < 1e-12


class TestLossGrad:
    def test_zero_error_gives_zero_gradient(self):
        feats = _features(np.zeros((3, 2)))  # alpha = [0.5, 0.5], sum = 1
        gw, gb = loss_grad(feats, TdmWeights(w=np.zeros(2), b=0.0), 1)
        assert np.all(gw == 0.0) and gb == 0.0

    def test_hand_chain_rule(self):
        # two retained frames of zeros, w=0, b=0, word_count=0:
        # err = 1 > 0, dLoss/db = sum sigma'(0) = 2 * 0.25 = 0.5
        feats = _features(np.zeros((3, 1)))
        _, gb = loss_grad(feats, TdmWeights(w=np.zeros(1), b=0.0), 0)
        assert abs(gb - 0.5) < 1e-12

    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(17)
        h = 1e-5
        checked = 0
        while checked < 100:
            n = int(rng.integers(3, 30))
            d = int(rng.integers(1, 8))
            feats = _features(rng.standard_normal((n, d)))
            w = rng.standard_normal(d)
            b = float(rng.standard_normal())
            wc = int(rng.integers(0, 10))
            base_alpha = signal(feats, TdmWeights(w=w, b=b))
            if abs(base_alpha.sum() - wc) < 1e-2:
                continue  # |.| kink: the derivative check is ill-posed there
            gw, gb = loss_grad(feats, TdmWeights(w=w, b=b), wc)
            for k in range(d):
                wp, wm = w.copy(), w.copy()
                wp[k] += h
                wm[k] -= h
                fd = (
                    quantity_loss(signal(feats, TdmWeights(w=wp, b=b)), wc)
                    - quantity_loss(signal(feats, TdmWeights(w=wm, b=b)), wc)
                ) / (2 * h)
                denom = max(abs(fd), abs(gw[k]), 1e-8)
                assert abs(gw[k] - fd) / denom < 1e-4
            fd_b = (
                quantity_loss(signal(feats, TdmWeights(w=w, b=b + h)), wc)
                - quantity_loss(signal(feats, TdmWeights(w=w, b=b - h)), wc)
            ) / (2 * h)
            denom = max(abs(fd_b), abs(gb), 1e-8)
            assert abs(gb - fd_b) / denom < 1e-4
            checked += 1


class TestTrainTdm:
    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            train_tdm([], TdmTrainConfig())

    def test_zero_epochs_returns_init(self):
        dataset = make_tdm_dataset(0, 4)
        init = TdmWeights(w=np.full(16, 0.25), b=0.5)
        result = train_tdm(dataset, TdmTrainConfig(epochs=0, warmup_epochs=0), init=init)
        assert np.array_equal(result.weights.w, init.w) and result.weights.b == init.b
        assert result.epoch_losses == []

    def test_deterministic_under_seed(self):
        dataset = make_tdm_dataset(1, 12)
        cfg = TdmTrainConfig(epochs=4, warmup_epochs=1, peak_learning_rate=0.05, rng_seed=7)
        a = train_tdm(dataset, cfg)
        b = train_tdm(dataset, cfg)
        assert np.array_equal(a.weights.w, b.weights.w)
        assert a.weights.b == b.weights.b
        assert a.epoch_losses == b.epoch_losses

    def test_loss_decreases_on_separable_data(self):
        dataset = make_tdm_dataset(2, 40)
        cfg = TdmTrainConfig(epochs=12, warmup_epochs=3, peak_learning_rate=0.1, rng_seed=0)
        result = train_tdm(dataset, cfg)
        assert result.epoch_losses[-1] < result.epoch_losses[0]

    def test_default_config_matches_reported_recipe(self):
        cfg = TdmTrainConfig()
        assert cfg.epochs == 10
        assert cfg.warmup_epochs == 3
        assert cfg.peak_learning_rate == 1e-6
        assert cfg.batch_frames == 4500


class TestWeightsIO:
    def test_round_trip(self, tmp_path):
        w = TdmWeights(w=np.array([0.5, -1.25, 3.0]), b=-0.75)
        path = tmp_path / "w.bin"
        save_tdm_weights(w, path)
        loaded = load_tdm_weights(path)
        assert np.array_equal(loaded.w, w.w) and loaded.b == w.b

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "w.bin"
        path.write_bytes(b"NOPExxxxxxxxxxxxxxxx")
        with pytest.raises(BadMagicError):
            load_tdm_weights(path)

    def test_truncated(self, tmp_path):
        w = TdmWeights(w=np.zeros(4), b=0.0)
        path = tmp_path / "w.bin"
        save_tdm_weights(w, path)
        path.write_bytes(path.read_bytes()[:-6])
        with pytest.raises(TruncatedFileError):
            load_tdm_weights(path)

    def test_checksum(self, tmp_path):
        w = TdmWeights(w=np.zeros(4), b=0.0)
        path = tmp_path / "w.bin"
        save_tdm_weights(w, path)
        blob = bytearray(path.read_bytes())
        blob[12] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_tdm_weights(path)


class TestScriptedBoundarySemantics:
    def test_complete_chunk_shows_fire_at_final_retained_frame(self):
        cfg = random_scripted_config(5, n_words=3, corrupt_truncated_words=False)
        model = ScriptedModel(cfg)
        weights = TdmWeights(w=np.r_[3.0, np.zeros(cfg.d_model - 1)], b=-2.0)
        feats = model.encode(AudioSpan(0, model.stream_duration_ms()))
        alpha = signal(feats, weights)
        assert detect_truncation(alpha, 0.999) is False

    def test_mid_word_cut_detected(self):
        cfg = random_scripted_config(5, n_words=3, corrupt_truncated_words=False)
        model = ScriptedModel(cfg)
        weights = TdmWeights(w=np.r_[3.0, np.zeros(cfg.d_model - 1)], b=-2.0)
        # cut three frames shy of the utterance end: final word incomplete
        end_ms = model.stream_duration_ms() - 3 * int(cfg.frame_duration_ms)
        feats = model.encode(AudioSpan(0, end_ms))
        alpha = signal(feats, weights)
        assert detect_truncation(alpha, 0.999) is True
