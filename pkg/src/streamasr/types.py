"""Core value types shared across the engine.

Time is handled in integer milliseconds wherever chunk arithmetic happens
(chunk boundaries, window spans) so that schedules like 750 ms chunks stay
exact; encoder frames live on a fixed absolute grid of ``frame_duration_ms``
wide slots. A window [a, b) covers the frames fully inside it:
``first = ceil(a / fd)``, ``end = floor(b / fd)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

WORD_DELIMITER = " "


@dataclass(frozen=True)
class AudioSpan:
    """Half-open interval of stream time, in milliseconds."""

    start_ms: int
    end_ms: int

    def __post_init__(self) -> None:
        if self.start_ms < 0 or self.end_ms < self.start_ms:
            raise ValidationError(f"bad audio span [{self.start_ms}, {self.end_ms})")

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms

    def first_frame(self, frame_duration_ms: float) -> int:
        return int(-(-self.start_ms // frame_duration_ms))  # ceil

    def end_frame(self, frame_duration_ms: float) -> int:
        return int(self.end_ms // frame_duration_ms)  # floor

    def n_frames(self, frame_duration_ms: float) -> int:
        return max(0, self.end_frame(frame_duration_ms) - self.first_frame(frame_duration_ms))


@dataclass
class EncoderFeatureSeq:
    """Encoded audio frames for one (padded) model input window.

    ``frames`` has shape (n_frames, d_model); rows past ``content_len`` are
    the model's padding representation. ``start_ms`` anchors frame 0 on the
    absolute stream timeline.
    """

    frames: np.ndarray
    content_len: int
    frame_duration_ms: float = 20.0
    start_ms: int = 0

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ValidationError(f"features must be a non-empty 2-D matrix, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("features contain non-finite values")
        if not 1 <= self.content_len <= self.frames.shape[0]:
            raise ValidationError(
                f"content_len {self.content_len} outside [1, {self.frames.shape[0]}]"
            )
        if self.frame_duration_ms <= 0:
            raise ValidationError("frame_duration_ms must be positive")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def d_model(self) -> int:
        return int(self.frames.shape[1])


@dataclass
class DecodeStepOutput:
    """One autoregressive decoder step.

    ``head_rows`` holds the cross-attention row of every alignment head for
    the generated token, shape (head_count, n_frames); each row is a softmax
    output over the padded frame axis.
    """

    token_id: int
    token_text: str
    head_rows: np.ndarray
    is_eos: bool = False
    proc_time_s: float = 0.0

    def __post_init__(self) -> None:
        self.head_rows = np.asarray(self.head_rows, dtype=np.float32)
        if self.head_rows.ndim != 2:
            raise ValidationError("head_rows must have shape (head_count, n_frames)")


def validate_step(step: DecodeStepOutput, n_frames: int, head_count: int, tol: float = 1e-4) -> None:
    """Check a decode step against the model's declared geometry."""
    if step.head_rows.shape != (head_count, n_frames):
        raise ValidationError(
            f"head_rows shape {step.head_rows.shape} != ({head_count}, {n_frames})"
        )
    if np.any(step.head_rows < 0):
        raise ValidationError("attention rows must be nonnegative")
    sums = step.head_rows.sum(axis=1, dtype=np.float64)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValidationError(f"attention row sums deviate from 1 by more than {tol}: {sums}")


def starts_word(text: str) -> bool:
    """A token starts a new word when it begins with the word delimiter."""
    return text.startswith(WORD_DELIMITER)


def count_words(texts: list[str]) -> int:
    """Number of words in a token sequence; a leading fragment counts as one."""
    n = 0
    for i, t in enumerate(texts):
        if i == 0 or starts_word(t):
            n += 1
    return n


def last_word_start(texts: list[str]) -> int:
    """Index of the first token of the final word (0 if no delimiter seen)."""
    for i in range(len(texts) - 1, -1, -1):
        if starts_word(texts[i]):
            return i
    return 0


@dataclass
class ScriptToken:
    """A scripted token with its ground-truth aligned frame interval."""

    text: str
    start_frame: int
    end_frame: int

    def __post_init__(self) -> None:
        if self.start_frame < 0 or self.end_frame <= self.start_frame:
            raise ValidationError(
                f"token {self.text!r}: bad frame interval [{self.start_frame}, {self.end_frame})"
            )

    @property
    def center(self) -> float:
        return (self.start_frame + self.end_frame - 1) / 2.0


@dataclass
class TokenEmission:
    """A committed token with its emission bookkeeping."""

    token_id: int
    text: str
    chunk_index: int
    unaware_s: float
    aware_s: float
    wall_s: float = 0.0
    true_end_s: float | None = None


@dataclass
class StepDiagnostic:
    """Per-decode-step policy trace: where attention peaked and what was decided."""

    token_index: int
    token_id: int
    token_text: str
    argmax_frame: int
    boundary_distance: int
    stopped: bool
    emitted: bool
    is_eos: bool = False


@dataclass
class ChunkReport:
    """Per-push diagnostics kept in the session result."""

    index: int
    chunk: AudioSpan
    window: AudioSpan
    content_frames: int
    steps: list[StepDiagnostic] = field(default_factory=list)
    truncation_detected: bool | None = None
    n_committed: int = 0
    deferred_texts: list[str] = field(default_factory=list)
    cap_hit: bool = False
    processing_time_s: float = 0.0
    available_at_s: float = 0.0
    is_flush: bool = False
