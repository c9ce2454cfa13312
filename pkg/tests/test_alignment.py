from __future__ import annotations

import numpy as np
import pytest

from streamasr import (
    AudioSpan,
    ConfigError,
    ScriptedModel,
    StopPolicyConfig,
    ValidationError,
    aggregate_alignment,
    attention_guided_decode,
    median_filter,
    should_stop,
)
from streamasr.model import ScriptedModelConfig
from streamasr.types import ScriptToken

from helpers import naive_median_filter


class TestMedianFilter:
    def test_constant_vector_unchanged(self):
        out = median_filter(np.full(10, 0.2), 7)
        assert np.array_equal(out, np.full(10, 0.2))

    def test_single_spike_center_suppressed(self):
        seq = np.array([0.0, 0, 0, 5, 0, 0, 0])
        # oracle: the only full window is sorted -> median 0 everywhere
        expected = naive_median_filter(seq, 7)
        out = median_filter(seq, 7)
        assert np.array_equal(out, np.array(expected))
        assert out[3] == 0.0

    def test_short_input_returned_unchanged(self):
        seq = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(median_filter(seq, 7), seq)

    def test_even_width_rejected(self):
        with pytest.raises(ConfigError):
            median_filter(np.zeros(5), 4)

    def test_matches_naive_oracle_on_random_vectors(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            n = int(rng.integers(1, 101))
            width = int(rng.choice([1, 3, 5, 7]))
            seq = rng.standard_normal(n)
            expected = np.array(naive_median_filter(seq, width))
            assert np.array_equal(median_filter(seq, width), expected)

    def test_width_one_is_identity(self):
        seq = np.random.default_rng(0).standard_normal(20)
        assert np.array_equal(median_filter(seq, 1), seq)


class TestAggregateAlignment:
    def test_two_short_rows_summed_filter_identity(self):
        cfg = StopPolicyConfig()
        out = aggregate_alignment([np.array([0.2, 0.8]), np.array([0.6, 0.4])], cfg)
        assert np.allclose(out, [0.8, 1.2])

    def test_single_constant_row_unchanged(self):
        cfg = StopPolicyConfig()
        row = np.full(30, 1.0 / 30)
        out = aggregate_alignment([row], cfg)
        assert np.allclose(out, row)

    def test_sum_of_softmax_rows_totals_head_count(self):
        rng = np.random.default_rng(3)
        rows = rng.random((5, 40))
        rows /= rows.sum(axis=1, keepdims=True)
        out = aggregate_alignment(rows, StopPolicyConfig(median_window=1))
        assert abs(out.sum() - 5.0) < 1e-3

    def test_empty_head_set_rejected(self):
        with pytest.raises(ConfigError):
            aggregate_alignment([], StopPolicyConfig())

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            aggregate_alignment([np.zeros(4), np.zeros(5)], StopPolicyConfig())

    def test_head_subset_selection(self):
        cfg = StopPolicyConfig(alignment_head_ids=((0, 1),), median_window=1)
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = aggregate_alignment(rows, cfg, model_head_ids=((0, 0), (0, 1)))
        assert np.array_equal(out, [0.0, 1.0])

    def test_unknown_head_rejected(self):
        cfg = StopPolicyConfig(alignment_head_ids=((3, 9),))
        with pytest.raises(ConfigError):
            aggregate_alignment(np.ones((2, 4)), cfg, model_head_ids=((0, 0), (0, 1)))


class TestShouldStop:
    def test_peak_near_end_stops(self):
        row = np.zeros(120)
        row[95] = 1.0
        assert should_stop(row, 100, 12) is True  # 100 - 95 = 5 < 12

    def test_peak_far_from_end_continues(self):
        row = np.zeros(120)
        row[50] = 1.0
        assert should_stop(row, 100, 12) is False

    def test_boundary_is_strict(self):
        row = np.zeros(120)
        row[88] = 1.0
        assert should_stop(row, 100, 12) is False  # distance == l -> continue

    def test_ties_resolve_to_lowest_index(self):
        row = np.zeros(100)
        row[10] = 1.0
        row[95] = 1.0
        assert should_stop(row, 100, 12) is False

    def test_argmax_ignores_padding(self):
        row = np.zeros(200)
        row[150] = 5.0  # attention mass on padding frames
        row[20] = 1.0
        assert should_stop(row, 100, 12) is False

    def test_brute_force_equivalence_random(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            n = int(rng.integers(2, 150))
            c = int(rng.integers(1, n + 1))
            l = int(rng.integers(1, 30))
            row = rng.random(n)
            best = 0
            for k in range(1, c):
                if row[k] > row[best]:
                    best = k
            assert should_stop(row, c, l) == (c - best < l)


def _three_token_model(noise=0.0):
    tokens = [
        ScriptToken(" ab", 0, 10),
        ScriptToken("cd", 10, 20),
        ScriptToken(" ef", 20, 30),
    ]
    cfg = ScriptedModelConfig(
        tokens=tokens, noise_level=noise, corrupt_truncated_words=False, total_frames=50
    )
    return ScriptedModel(cfg)


class TestAttentionGuidedDecode:
    def test_all_tokens_clear_of_boundary_emitted(self):
        model = _three_token_model()
        feats = model.encode(AudioSpan(0, 1000))  # 50 content frames
        res = attention_guided_decode(model, feats, [], StopPolicyConfig())
        # oracle by hand: centers 4.5/14.5/24.5, content end 50, distances > 12
        assert [s.token_text for s in res.emitted] == [" ab", "cd", " ef"]
        assert res.diagnostics[-1].is_eos

    def test_token_at_content_end_withheld(self):
        model = _three_token_model()
        feats = model.encode(AudioSpan(0, 560))  # content ends at frame 28, inside " ef"
        res = attention_guided_decode(model, feats, [], StopPolicyConfig())
        # " ef" clips to the boundary: withheld, decoding halts
        assert [s.token_text for s in res.emitted] == [" ab", "cd"]
        assert res.diagnostics[-1].stopped and not res.diagnostics[-1].emitted

    def test_stop_is_terminal_for_the_chunk(self):
        model = _three_token_model()
        feats = model.encode(AudioSpan(0, 560))
        res = attention_guided_decode(model, feats, [], StopPolicyConfig())
        emitted_flags = [d.emitted for d in res.diagnostics]
        if False in emitted_flags:
            after_first_stop = emitted_flags[emitted_flags.index(False) :]
            assert not any(after_first_stop)

    def test_stop_disabled_decodes_to_eos(self):
        model = _three_token_model()
        feats = model.encode(AudioSpan(0, 560))
        res = attention_guided_decode(model, feats, [], StopPolicyConfig(), stop_enabled=False)
        assert [s.token_text for s in res.emitted] == [" ab", "cd", " ef"]

    def test_max_token_cap_flagged(self):
        model = _three_token_model()
        feats = model.encode(AudioSpan(0, 1000))
        res = attention_guided_decode(
            model, feats, [], StopPolicyConfig(max_tokens_per_chunk=2)
        )
        assert res.cap_hit and len(res.emitted) == 2

    def test_monotone_l_threshold(self):
        # a larger l stops earlier or equally: emitted set shrinks monotonically
        model = _three_token_model()
        feats = model.encode(AudioSpan(0, 700))
        counts = []
        for l in (1, 6, 12, 20, 30):
            res = attention_guided_decode(
                model, feats, [], StopPolicyConfig(l_threshold_frames=l)
            )
            counts.append(len(res.emitted))
        assert counts == sorted(counts, reverse=True)
