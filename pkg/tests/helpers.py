"""Independent oracles and fixtures shared across the test suite.

Everything here is written against the documented behavior, not the engine
internals: naive sort-per-window median, a step-by-step integrate-and-fire
simulator, a closed-form lagging evaluation, brute-force prefix
computations, and a from-scratch stop-rule session simulator that consumes
raw recorded attention rows.
"""

from __future__ import annotations

import numpy as np

from streamasr import ScriptedModelConfig, SessionConfig, TdmWeights
from streamasr.corpus import random_scripted_config


def naive_median_filter(seq, width):
    """Sort-based sliding median with reflect padding; identity when short."""
    seq = [float(x) for x in seq]
    n = len(seq)
    if n < width or width == 1:
        return list(seq)
    half = width // 2
    padded = seq[1 : half + 1][::-1] + seq + seq[-half - 1 : -1][::-1]
    out = []
    for k in range(n):
        window = sorted(padded[k : k + width])
        out.append(window[half])
    return out


def simulate_if(alpha, threshold):
    """Plain transliteration of the accumulate/fire loop."""
    acc = 0.0
    fires = []
    last = None
    idx = 0
    alpha = list(map(float, alpha))
    while idx < len(alpha):
        acc = acc + alpha[idx]
        fired = acc >= threshold
        if fired:
            acc = acc - threshold
            fires.append(idx)
            last = idx
        idx += 1
    return fires, last, acc


def dal_direct(g, duration_s):
    """Closed-form evaluation: adjusted(t) = max_j<=t (g(j) + (t - j) d)."""
    n = len(g)
    d = duration_s / n
    total = 0.0
    for t in range(1, n + 1):
        adjusted = max(g[j - 1] + (t - j) * d for j in range(1, t + 1))
        total += adjusted - (t - 1) * d
    return total / n


def brute_force_lcp(hyps):
    if not hyps:
        return []
    out = []
    for items in zip(*hyps):
        if all(x == items[0] for x in items[1:]):
            out.append(items[0])
        else:
            break
    return out


def separating_weights(d_model: int, scale: float = 3.0, bias: float = -2.0) -> TdmWeights:
    """Weights that threshold the word-boundary indicator channel."""
    w = np.zeros(d_model)
    w[0] = scale
    return TdmWeights(w=w, b=bias)


def clean_config(seed: int, n_words: int = 20, **overrides) -> ScriptedModelConfig:
    """Noise-free, corruption-free corpus with words shorter than 0.5 s."""
    overrides.setdefault("tokens_per_word", (1, 2))
    overrides.setdefault("token_frames", (6, 12))
    overrides.setdefault("corrupt_truncated_words", False)
    overrides.setdefault("noise_level", 0.0)
    return random_scripted_config(seed, n_words=n_words, **overrides)


def tdm_session_config(d_model: int, **kwargs) -> SessionConfig:
    kwargs.setdefault("use_tdm", True)
    kwargs.setdefault("tdm_weights", separating_weights(d_model))
    return SessionConfig(**kwargs)


class StopRuleOracle:
    """Re-derives per-chunk emissions from a recorded trace's raw rows.

    Follows the written policy only: sequentially sum the heads, apply the
    naive median filter, scan for the first maximum over the content prefix,
    and stop (withholding the trigger) when it lies within l frames of the
    content end. Flush chunks emit everything up to EOS.
    """

    def __init__(self, trace, l_threshold: int, median_window: int):
        self.trace = trace
        self.l = l_threshold
        self.width = median_window

    def _aggregate(self, head_rows):
        rows = [np.asarray(r, dtype=np.float64) for r in head_rows]
        acc = rows[0].copy()
        for r in rows[1:]:
            acc = acc + r
        return np.array(naive_median_filter(acc.tolist(), self.width))

    def _first_argmax(self, row, content_end):
        best = 0
        for k in range(1, content_end):
            if row[k] > row[best]:
                best = k
        return best

    def run(self):
        committed: list[tuple[int, str]] = []
        per_chunk: list[list[tuple[int, str]]] = []
        for rec in self.trace.chunks:
            steps = {tuple(s.context): s for s in rec.steps}
            emitted: list[tuple[int, str]] = []
            while True:
                ctx = tuple(t for t, _ in committed) + tuple(t for t, _ in emitted)
                step = steps.get(ctx)
                if step is None or step.is_eos:
                    break
                if not rec.is_flush:
                    row = self._aggregate(step.head_rows)
                    peak = self._first_argmax(row, rec.features.content_len)
                    if rec.features.content_len - peak < self.l:
                        break
                emitted.append((step.token_id, step.token_text))
            committed.extend(emitted)
            per_chunk.append(emitted)
        return committed, per_chunk
