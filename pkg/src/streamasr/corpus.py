"""Seeded generators for scripted token timelines and TDM training data."""

from __future__ import annotations

import numpy as np

from .model import ScriptedModel, ScriptedModelConfig
from .tracefile import ChunkRecord, Trace, TraceMeta, TraceStep
from .types import AudioSpan, EncoderFeatureSeq, ScriptToken

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def _random_word(rng: np.random.Generator, syllables: tuple[int, int] = (2, 4)) -> str:
    n = int(rng.integers(syllables[0], syllables[1] + 1))
    return "".join(
        _CONSONANTS[int(rng.integers(len(_CONSONANTS)))] + _VOWELS[int(rng.integers(len(_VOWELS)))]
        for _ in range(n)
    )


def _split_word(word: str, n_tokens: int) -> list[str]:
    n_tokens = max(1, min(n_tokens, len(word)))
    cut = len(word) // n_tokens
    pieces = [word[i * cut : (i + 1) * cut] for i in range(n_tokens - 1)]
    pieces.append(word[(n_tokens - 1) * cut :])
    return pieces


def random_script(
    rng: np.random.Generator,
    n_words: int,
    tokens_per_word: tuple[int, int] = (2, 3),
    token_frames: tuple[int, int] = (8, 14),
    gap_frames: tuple[int, int] = (0, 0),
) -> list[ScriptToken]:
    """Contiguous word timeline; the first token of each word carries the delimiter."""
    tokens: list[ScriptToken] = []
    cursor = 0
    for _ in range(n_words):
        word = _random_word(rng)
        n_tok = int(rng.integers(tokens_per_word[0], tokens_per_word[1] + 1))
        pieces = _split_word(word, n_tok)
        for j, piece in enumerate(pieces):
            dur = int(rng.integers(token_frames[0], token_frames[1] + 1))
            text = (" " + piece) if j == 0 else piece
            tokens.append(ScriptToken(text=text, start_frame=cursor, end_frame=cursor + dur))
            cursor += dur
        if gap_frames[1] > 0:
            cursor += int(rng.integers(gap_frames[0], gap_frames[1] + 1))
    return tokens


def random_scripted_config(seed: int, n_words: int = 12, **overrides) -> ScriptedModelConfig:
    """A seeded scripted model over a random contiguous word timeline."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    script_kwargs = {
        k: overrides.pop(k)
        for k in ("tokens_per_word", "token_frames", "gap_frames")
        if k in overrides
    }
    tokens = random_script(rng, n_words, **script_kwargs)
    overrides.setdefault("rng_seed", seed)
    overrides.setdefault("name", f"scripted-{seed}")
    return ScriptedModelConfig(tokens=tokens, **overrides)


def make_tdm_dataset(
    seed: int,
    n_utterances: int,
    words_range: tuple[int, int] = (2, 8),
    d_model: int = 16,
    **config_overrides,
) -> list[tuple[EncoderFeatureSeq, int]]:
    """Utterance features (tightly padded) with ground-truth word counts."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    dataset: list[tuple[EncoderFeatureSeq, int]] = []
    for u in range(n_utterances):
        n_words = int(rng.integers(words_range[0], words_range[1] + 1))
        config = random_scripted_config(
            seed * 100003 + u,
            n_words=n_words,
            d_model=d_model,
            **dict(config_overrides),
        )
        model = ScriptedModel(config)
        duration_ms = model.stream_duration_ms()
        feats = model.encode(AudioSpan(0, duration_ms), pad_to_frames=config.content_frames)
        dataset.append((feats, len(model.word_end_frames)))
    return dataset


def build_tdm_dataset_trace(
    seed: int,
    n_utterances: int,
    words_range: tuple[int, int] = (2, 8),
    d_model: int = 16,
    head_count: int = 4,
    **config_overrides,
) -> Trace:
    """Dataset as a trace: one chunk per utterance, decode steps included so
    the trainer can recover word counts from the token texts."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(13,)))
    vocab = ["<eos>"]
    vocab_index: dict[str, int] = {}
    records: list[ChunkRecord] = []
    references: list[str] = []
    offset_ms = 0
    frame_ms = None
    for u in range(n_utterances):
        n_words = int(rng.integers(words_range[0], words_range[1] + 1))
        config = random_scripted_config(
            seed * 100003 + u,
            n_words=n_words,
            d_model=d_model,
            head_count=head_count,
            **dict(config_overrides),
        )
        model = ScriptedModel(config)
        frame_ms = model.frame_duration_ms
        duration_ms = model.stream_duration_ms()
        utt_span = AudioSpan(0, duration_ms)
        feats = model.encode(utt_span, pad_to_frames=config.content_frames)
        steps: list[TraceStep] = []
        context: list[int] = []
        global_context: list[int] = []
        while True:
            step = model.decode_step(feats, context)
            text = step.token_text
            if text not in vocab_index:
                vocab_index[text] = len(vocab)
                vocab.append(text)
            gid = 0 if step.is_eos else vocab_index[text]
            steps.append(
                TraceStep(
                    context=tuple(global_context),
                    token_id=gid,
                    token_text=text,
                    is_eos=step.is_eos,
                    head_rows=step.head_rows,
                    proc_time_s=step.proc_time_s,
                )
            )
            if step.is_eos:
                break
            context.append(step.token_id)
            global_context.append(gid)
        shifted = EncoderFeatureSeq(
            frames=feats.frames,
            content_len=feats.content_len,
            frame_duration_ms=feats.frame_duration_ms,
            start_ms=offset_ms,
        )
        records.append(
            ChunkRecord(
                chunk=AudioSpan(offset_ms, offset_ms + duration_ms),
                window_start_ms=offset_ms,
                features=shifted,
                steps=steps,
            )
        )
        references.append(model.reference_text)
        offset_ms += duration_ms
    meta = TraceMeta(
        model_name=f"tdm-dataset-{seed}",
        d_model=d_model,
        frame_duration_ms=frame_ms if frame_ms is not None else 20.0,
        alignment_head_ids=tuple((0, h) for h in range(head_count)),
        vocabulary=vocab,
        eos_id=0,
        reference_text=" | ".join(references),
        extra={"kind": "tdm-dataset", "utterances": n_utterances, "seed": seed},
    )
    return Trace(meta=meta, chunks=records)


def dataset_from_trace(trace: Trace) -> list[tuple[EncoderFeatureSeq, int]]:
    """Recover (features, word_count) pairs from a dataset trace."""
    from .types import count_words

    out = []
    for rec in trace.chunks:
        texts = [s.token_text for s in rec.steps if not s.is_eos]
        out.append((rec.features, count_words(texts)))
    return out
