"""Evaluation stack: text normalization, WER, and differentiable average lagging.

The normalizer is a deliberately simple substitute for a full ASR text
normalizer (lowercase, strip punctuation/symbols, collapse whitespace), so
absolute WERs are only comparable between runs of this engine; reports tag
the normalizer version for that reason.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass

from .errors import UndefinedMetricError, ValidationError
from .streaming import SessionResult
from .types import starts_word

NORMALIZER_VERSION = "simple-v1"


def normalize_text(s: str) -> str:
    """Lowercase, drop punctuation and symbol characters, collapse whitespace."""
    lowered = s.lower()
    kept = []
    for ch in lowered:
        if unicodedata.category(ch)[0] in ("P", "S"):
            continue
        kept.append(ch)
    return " ".join("".join(kept).split())


def edit_distance(a: list, b: list) -> int:
    """Levenshtein distance (insertions + deletions + substitutions)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, xa in enumerate(a, 1):
        cur = [i]
        for j, xb in enumerate(b, 1):
            cost = 0 if xa == xb else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[len(b)]


def wer(ref: str, hyp: str) -> float:
    """Word error rate over normalized, whitespace-split tokens."""
    ref_tokens = normalize_text(ref).split()
    hyp_tokens = normalize_text(hyp).split()
    if not ref_tokens:
        raise UndefinedMetricError("reference is empty after normalization")
    return edit_distance(ref_tokens, hyp_tokens) / len(ref_tokens)


@dataclass
class LatencyRecord:
    """Per-token emission times for one session, in stream-relative seconds."""

    g: list[float]
    duration_s: float
    mode: str = "unaware"  # unaware | aware

    def __post_init__(self) -> None:
        if len(self.g) < 1:
            raise UndefinedMetricError("latency record needs at least one token")
        if self.duration_s <= 0:
            raise ValidationError("audio duration must be positive")
        if any(b < a for a, b in zip(self.g, self.g[1:])):
            raise ValidationError("emission times must be non-decreasing")
        if self.mode not in ("unaware", "aware"):
            raise ValidationError(f"unknown latency mode {self.mode!r}")


def dal(record: LatencyRecord) -> float:
    """Differentiable average lagging.

    An ideal streaming emitter produces a token every d = duration / N_t
    seconds; each emission time is first adjusted to be at least d after the
    previous adjusted time (which keeps the lags from going negative), then
    the mean lag against the ideal schedule is returned.
    """
    n = len(record.g)
    d = record.duration_s / n
    adjusted = 0.0
    total = 0.0
    for t, g_t in enumerate(record.g, 1):
        adjusted = g_t if t == 1 else max(g_t, adjusted + d)
        total += adjusted - (t - 1) * d
    return total / n


def committed_words(result: SessionResult) -> list[list]:
    """Group committed tokens into words (delimiter-started runs)."""
    words: list[list] = []
    for e in result.committed:
        if not words or starts_word(e.text):
            words.append([e])
        else:
            words[-1].append(e)
    return words


def build_latency_record(result: SessionResult, mode: str = "unaware") -> LatencyRecord:
    """Per-word emission times; a word counts as emitted when its last token is.

    Unaware uses the end time of the committing chunk; aware adds the
    processing backlog the session measured or replayed.
    """
    if mode not in ("unaware", "aware"):
        raise ValidationError(f"unknown latency mode {mode!r}")
    groups = committed_words(result)
    if not groups:
        raise UndefinedMetricError("session committed no tokens")
    g = []
    for group in groups:
        last = group[-1]
        g.append(last.unaware_s if mode == "unaware" else last.aware_s)
    return LatencyRecord(g=g, duration_s=result.audio_duration_s, mode=mode)


def session_metrics(result: SessionResult) -> dict:
    """WER plus both DAL modes, ready to append to a session report."""
    out: dict = {"normalizer": NORMALIZER_VERSION}
    if result.reference_text:
        out["wer"] = wer(result.reference_text, result.transcript)
    if result.committed:
        out["dal_unaware_s"] = dal(build_latency_record(result, "unaware"))
        out["dal_aware_s"] = dal(build_latency_record(result, "aware"))
        out["n_words"] = len(committed_words(result))
    return out
