"""Streamable encoder-decoder contract and its two desk-scale realizations.

``ScriptedModel`` synthesizes everything from a token timeline: encoder
features carry a word-boundary indicator channel, and each decode step emits
the next scripted token with softmax attention rows bumped over the token's
true frames (clipped to the decoding window, so audio cut mid-token piles
attention on the boundary exactly like the failure mode the stop rule
targets). ``TraceReplayModel`` replays a recorded run and refuses to guess:
any (window, context) probe that was never recorded raises ReplayMissError.

Both are immutable after construction; decode_step takes all mutable state
(the decoder context) as arguments.
"""

from __future__ import annotations

import string
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import CapacityError, ConfigError, DegenerateInputError, ReplayMissError, ValidationError
from .tracefile import Trace, TraceStep
from .types import AudioSpan, DecodeStepOutput, EncoderFeatureSeq, ScriptToken, starts_word

DEFAULT_FRAME_DURATION_MS = 20.0
DEFAULT_PAD_TO_FRAMES = 1500  # 30 s at 20 ms per frame

_EOS_TEXT = "<eos>"


class StreamModel(ABC):
    """What the streaming controller needs from a model."""

    frame_duration_ms: float
    d_model: int
    head_count: int
    alignment_head_ids: tuple[tuple[int, int], ...]
    vocabulary: list[str]
    eos_id: int
    pad_to_frames: int
    name: str = "model"
    reference_text: str = ""

    @abstractmethod
    def encode(self, span: AudioSpan, pad_to_frames: int | None = None) -> EncoderFeatureSeq:
        """Encode the audio window ``span`` into padded feature frames."""

    @abstractmethod
    def decode_step(self, features: EncoderFeatureSeq, context_tokens: list[int]) -> DecodeStepOutput:
        """Produce the next token given the window features and decoder context."""

    @abstractmethod
    def stream_duration_ms(self) -> int:
        """Total duration of the underlying stream."""

    def encode_time_for(self, span: AudioSpan) -> float:
        """Synthetic or recorded processing cost of encoding this window."""
        return 0.0


@dataclass
class ScriptedModelConfig:
    """Token timeline plus the knobs of the synthetic attention/feature generators."""

    tokens: list[ScriptToken]
    attention_sharpness: float = 4.0
    noise_level: float = 0.0
    rng_seed: int = 0
    d_model: int = 16
    head_count: int = 4
    frame_duration_ms: float = DEFAULT_FRAME_DURATION_MS
    pad_to_frames: int = DEFAULT_PAD_TO_FRAMES
    total_frames: int | None = None
    corrupt_truncated_words: bool = True
    boundary_amp: float = 4.0
    feature_noise: float = 0.1
    encode_time_s: float = 0.0
    step_time_s: float = 0.0
    name: str = "scripted"

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ConfigError("script needs at least one token")
        if self.attention_sharpness <= 0:
            raise ConfigError("attention_sharpness must be positive")
        if self.noise_level < 0 or self.feature_noise < 0:
            raise ConfigError("noise levels must be nonnegative")
        if self.d_model < 1 or self.head_count < 1 or self.pad_to_frames < 1:
            raise ConfigError("dimensions must be positive")
        for prev, cur in zip(self.tokens, self.tokens[1:]):
            if cur.start_frame < prev.start_frame:
                raise ValidationError(
                    f"token alignments must be monotonic: {cur.text!r} starts before {prev.text!r}"
                )
            if cur.start_frame < prev.end_frame:
                raise ValidationError(
                    f"token alignments overlap: {prev.text!r} and {cur.text!r}"
                )
        last_end = max(t.end_frame for t in self.tokens)
        if self.total_frames is not None and self.total_frames < last_end:
            raise ValidationError("total_frames ends before the last token")

    @property
    def content_frames(self) -> int:
        return self.total_frames if self.total_frames is not None else max(t.end_frame for t in self.tokens)

    def to_dict(self) -> dict:
        return {
            "tokens": [
                {"text": t.text, "start": t.start_frame, "end": t.end_frame} for t in self.tokens
            ],
            "attention_sharpness": self.attention_sharpness,
            "noise_level": self.noise_level,
            "rng_seed": self.rng_seed,
            "d_model": self.d_model,
            "head_count": self.head_count,
            "frame_duration_ms": self.frame_duration_ms,
            "pad_to_frames": self.pad_to_frames,
            "total_frames": self.total_frames,
            "corrupt_truncated_words": self.corrupt_truncated_words,
            "boundary_amp": self.boundary_amp,
            "feature_noise": self.feature_noise,
            "encode_time_s": self.encode_time_s,
            "step_time_s": self.step_time_s,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ScriptedModelConfig:
        if "tokens" not in data:
            raise ConfigError("scripted config needs a 'tokens' list")
        tokens = [
            ScriptToken(text=t["text"], start_frame=int(t["start"]), end_frame=int(t["end"]))
            for t in data["tokens"]
        ]
        kwargs = {k: v for k, v in data.items() if k != "tokens"}
        known = set(cls.__dataclass_fields__) - {"tokens"}
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"unknown scripted config keys: {sorted(unknown)}")
        return cls(tokens=tokens, **kwargs)


def load_scripted_config(path) -> ScriptedModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return ScriptedModelConfig.from_dict(data)


def corrupt_text(text: str) -> str:
    """Deterministically mangle a token the way a model garbles cut-off audio."""
    chars = list(text)
    for j in range(len(chars) - 1, -1, -1):
        c = chars[j]
        if c in string.ascii_letters:
            base = "a" if c.islower() else "A"
            chars[j] = chr((ord(c) - ord(base) + 13) % 26 + ord(base))
            return "".join(chars)
    return text + "q"


class ScriptedModel(StreamModel):
    """Deterministic synthetic stand-in for a streamable encoder-decoder."""

    def __init__(self, config: ScriptedModelConfig) -> None:
        self.config = config
        self.frame_duration_ms = config.frame_duration_ms
        self.d_model = config.d_model
        self.head_count = config.head_count
        self.alignment_head_ids = tuple((0, h) for h in range(config.head_count))
        self.pad_to_frames = config.pad_to_frames
        self.name = config.name

        vocab = [_EOS_TEXT]
        ids = []
        index: dict[str, int] = {}
        for tok in config.tokens:
            if tok.text not in index:
                index[tok.text] = len(vocab)
                vocab.append(tok.text)
            ids.append(index[tok.text])
        self.vocabulary = vocab
        self.eos_id = 0
        self.script_ids = ids
        self.reference_text = "".join(t.text for t in config.tokens).strip()

        # Word grouping: a token starting with the delimiter opens a new word.
        self._word_end_of_token: list[int] = []
        word_ends: list[int] = []
        starts: list[int] = []
        for i, tok in enumerate(config.tokens):
            if i == 0 or starts_word(tok.text):
                starts.append(i)
        for wi, s in enumerate(starts):
            e = starts[wi + 1] if wi + 1 < len(starts) else len(config.tokens)
            word_ends.append(config.tokens[e - 1].end_frame)
            self._word_end_of_token.extend([config.tokens[e - 1].end_frame] * (e - s))
        self.word_end_frames = word_ends

        self._stream_frames = config.content_frames
        rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed))
        feats = config.feature_noise * rng.standard_normal((self._stream_frames, config.d_model))
        feats[:, 0] = -config.boundary_amp
        for we in word_ends:
            feats[max(0, we - 2), 0] = config.boundary_amp
        self._stream_features = feats.astype(np.float32)

    def stream_duration_ms(self) -> int:
        return int(round(self._stream_frames * self.frame_duration_ms))

    def encode_time_for(self, span: AudioSpan) -> float:
        return self.config.encode_time_s

    def true_token_end_s(self, index: int) -> float:
        return self.config.tokens[index].end_frame * self.frame_duration_ms / 1000.0

    def encode(self, span: AudioSpan, pad_to_frames: int | None = None) -> EncoderFeatureSeq:
        pad = self.pad_to_frames if pad_to_frames is None else pad_to_frames
        first = span.first_frame(self.frame_duration_ms)
        end = span.end_frame(self.frame_duration_ms)
        n_content = end - first
        if n_content < 1:
            raise DegenerateInputError(f"span {span} holds no complete frame")
        if n_content > pad:
            raise CapacityError(f"{n_content} content frames exceed the {pad}-frame input window")
        frames = np.zeros((pad, self.d_model), dtype=np.float32)
        lo = min(first, self._stream_frames)
        hi = min(end, self._stream_frames)
        if hi > lo:
            frames[lo - first : hi - first] = self._stream_features[lo:hi]
        return EncoderFeatureSeq(
            frames=frames,
            content_len=n_content,
            frame_duration_ms=self.frame_duration_ms,
            start_ms=span.start_ms,
        )

    def _rows_for(
        self, center: float, half_width: float, window_first: int, content_len: int,
        token_index: int, n_frames: int,
    ) -> np.ndarray:
        """Softmax bump per head; noise seeded by (seed, window, token, head).

        The bump has a flat core of half the token span with quadratic
        shoulders, so even at extreme sharpness it stays wide enough to
        survive the median filter downstream.
        """
        cfg = self.config
        positions = np.arange(n_frames, dtype=np.float64)
        core = half_width / 2.0
        dist = np.maximum(0.0, np.abs(positions - center) - core)
        base = -cfg.attention_sharpness * (dist / half_width) ** 2
        rows = np.empty((cfg.head_count, n_frames), dtype=np.float32)
        for h in range(cfg.head_count):
            logits = base
            if cfg.noise_level > 0:
                seq = np.random.SeedSequence(
                    cfg.rng_seed, spawn_key=(1, window_first, content_len, token_index, h)
                )
                noise = np.random.default_rng(seq).standard_normal(n_frames)
                logits = base + cfg.noise_level * noise
            shifted = logits - logits.max()
            expv = np.exp(shifted)
            rows[h] = (expv / expv.sum()).astype(np.float32)
        return rows

    def decode_step(self, features: EncoderFeatureSeq, context_tokens: list[int]) -> DecodeStepOutput:
        cfg = self.config
        n = len(context_tokens)
        if list(context_tokens) != self.script_ids[:n]:
            raise ValidationError("decoder context is not a prefix of the script")
        window_first = int(-(-features.start_ms // self.frame_duration_ms))
        window_end = window_first + features.content_len

        def eos_step() -> DecodeStepOutput:
            rows = np.zeros((cfg.head_count, features.n_frames), dtype=np.float32)
            rows[:, : features.content_len] = 1.0 / features.content_len
            return DecodeStepOutput(
                token_id=self.eos_id,
                token_text=_EOS_TEXT,
                head_rows=rows,
                is_eos=True,
                proc_time_s=cfg.step_time_s,
            )

        if n >= len(cfg.tokens):
            return eos_step()
        tok = cfg.tokens[n]
        if tok.start_frame >= window_end:
            return eos_step()  # the token's audio has not arrived yet

        center_abs = min(max(tok.center, float(window_first)), float(window_end - 1))
        half_width = max((tok.end_frame - tok.start_frame) / 2.0, 1.0)
        rows = self._rows_for(
            center_abs - window_first, half_width, window_first, features.content_len, n, features.n_frames
        )
        text = tok.text
        if cfg.corrupt_truncated_words and self._word_end_of_token[n] > window_end:
            text = corrupt_text(text)
        return DecodeStepOutput(
            token_id=self.script_ids[n],
            token_text=text,
            head_rows=rows,
            is_eos=False,
            proc_time_s=cfg.step_time_s,
        )


@dataclass
class ChunkFeaturesEntry:
    features: EncoderFeatureSeq
    encode_time_s: float = 0.0


class TraceReplayModel(StreamModel):
    """Replays a recorded run; any unrecorded probe means the controller diverged."""

    def __init__(self, trace: Trace) -> None:
        meta = trace.meta
        self.trace = trace
        self.frame_duration_ms = meta.frame_duration_ms
        self.d_model = meta.d_model
        self.head_count = meta.head_count
        self.alignment_head_ids = meta.alignment_head_ids
        self.vocabulary = list(meta.vocabulary)
        self.eos_id = meta.eos_id
        self.name = meta.model_name
        self.reference_text = meta.reference_text
        self.pad_to_frames = max((r.features.n_frames for r in trace.chunks), default=DEFAULT_PAD_TO_FRAMES)

        self._by_window: dict[tuple[int, int], ChunkFeaturesEntry] = {}
        self._steps: dict[tuple[int, int, tuple[int, ...]], TraceStep] = {}
        for rec in trace.chunks:
            key = (rec.window_start_ms, rec.chunk.end_ms)
            self._by_window[key] = ChunkFeaturesEntry(
                features=rec.features, encode_time_s=rec.encode_time_s
            )
            skey_base = (rec.window_start_ms, rec.features.content_len)
            for step in rec.steps:
                self._steps[(skey_base[0], skey_base[1], step.context)] = step

    def stream_duration_ms(self) -> int:
        spans = [r.chunk for r in self.trace.chunks if not r.is_flush]
        return spans[-1].end_ms if spans else 0

    def chunk_schedule(self) -> list[AudioSpan]:
        return [r.chunk for r in self.trace.chunks if not r.is_flush]

    def recorded_config(self) -> dict:
        return dict(self.trace.meta.extra)

    def encode(self, span: AudioSpan, pad_to_frames: int | None = None) -> EncoderFeatureSeq:
        entry = self._by_window.get((span.start_ms, span.end_ms))
        if entry is None:
            raise ReplayMissError(
                f"no recorded window [{span.start_ms}, {span.end_ms}) ms; the replay "
                "configuration diverged from the recorded run"
            )
        return entry.features

    def encode_time_for(self, span: AudioSpan) -> float:
        entry = self._by_window.get((span.start_ms, span.end_ms))
        return entry.encode_time_s if entry is not None else 0.0

    def decode_step(self, features: EncoderFeatureSeq, context_tokens: list[int]) -> DecodeStepOutput:
        key = (features.start_ms, features.content_len, tuple(int(t) for t in context_tokens))
        step = self._steps.get(key)
        if step is None:
            raise ReplayMissError(
                f"no recorded decode step for window at {features.start_ms} ms with a "
                f"{len(context_tokens)}-token context; the replay diverged from the recorded run"
            )
        return DecodeStepOutput(
            token_id=step.token_id,
            token_text=step.token_text,
            head_rows=step.head_rows,
            is_eos=step.is_eos,
            proc_time_s=step.proc_time_s,
        )
