"""Attention-guided decoding policy.

The controller reads the decoder's cross-attention instead of timestamps:
alignment-head rows are summed and median-filtered into a single row per
token, and decoding stops as soon as the most-attended content frame gets
within ``l_threshold_frames`` of the end of the real (unpadded) audio. The
token that trips the rule is withheld, because attention pinned to the
boundary marks exactly the tokens whose audio was cut off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError
from .types import DecodeStepOutput, EncoderFeatureSeq, StepDiagnostic

DEFAULT_L_THRESHOLD_FRAMES = 12   # 240 ms at 20 ms per frame
DEFAULT_MEDIAN_WINDOW = 7


@dataclass(frozen=True)
class StopPolicyConfig:
    """Knobs of the attention-guided stop rule."""

    l_threshold_frames: int = DEFAULT_L_THRESHOLD_FRAMES
    median_window: int = DEFAULT_MEDIAN_WINDOW
    alignment_head_ids: tuple[tuple[int, int], ...] | None = None  # None = all model heads
    max_tokens_per_chunk: int = 256

    def __post_init__(self) -> None:
        if self.l_threshold_frames < 1:
            raise ConfigError("l_threshold_frames must be >= 1")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ConfigError("median_window must be an odd positive integer")
        if self.max_tokens_per_chunk < 1:
            raise ConfigError("max_tokens_per_chunk must be >= 1")


@dataclass
class AlignmentRow:
    """Aggregated attention row for one decoded token."""

    values: np.ndarray
    token_index: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValidationError("alignment row must be 1-D")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValidationError("alignment row must be finite and nonnegative")


def median_filter(seq: np.ndarray, width: int) -> np.ndarray:
    """Sliding median with reflect padding.

    Inputs shorter than the window are returned unchanged; otherwise element
    k becomes the median of the width-wide window centered on k.
    """
    if width < 1 or width % 2 == 0:
        raise ConfigError(f"median filter width must be odd and positive, got {width}")
    seq = np.asarray(seq, dtype=np.float64)
    n = seq.shape[0]
    if n < width or width == 1:
        return seq.copy()
    half = width // 2
    padded = np.pad(seq, half, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, width)
    return np.median(windows, axis=1)


def aggregate_alignment(
    head_rows: np.ndarray | list[np.ndarray],
    config: StopPolicyConfig,
    model_head_ids: tuple[tuple[int, int], ...] | None = None,
) -> np.ndarray:
    """Sum the configured alignment heads and median-filter the result.

    ``head_rows`` is (head_count, n_frames) in the order of
    ``model_head_ids``; when ``config.alignment_head_ids`` is None every
    provided head participates.
    """
    if isinstance(head_rows, (list, tuple)):
        if len(head_rows) == 0:
            raise ConfigError("head set must be non-empty")
        lengths = {np.asarray(r).shape[-1] for r in head_rows}
        if len(lengths) != 1:
            raise ValidationError(f"alignment rows have mismatched lengths: {sorted(lengths)}")
    rows = np.asarray(head_rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ConfigError("head set must be non-empty")
    if config.alignment_head_ids is not None:
        if model_head_ids is None:
            raise ConfigError("selecting a head subset requires the model's head id list")
        wanted = set(config.alignment_head_ids)
        idx = [i for i, hid in enumerate(model_head_ids) if hid in wanted]
        if not idx:
            raise ConfigError(f"no configured alignment head {sorted(wanted)} is provided by the model")
        missing = wanted - set(model_head_ids)
        if missing:
            raise ConfigError(f"alignment heads {sorted(missing)} not present in model output")
        rows = rows[idx]
    summed = rows.sum(axis=0)
    return median_filter(summed, config.median_window)


def content_argmax(row: np.ndarray, content_end_frame: int) -> int:
    """Index of the maximum over the real-content prefix; ties go low."""
    if not 1 <= content_end_frame <= row.shape[0]:
        raise ValidationError(
            f"content_end_frame {content_end_frame} outside [1, {row.shape[0]}]"
        )
    return int(np.argmax(row[:content_end_frame]))


def should_stop(row: np.ndarray, content_end_frame: int, l_threshold_frames: int) -> bool:
    """True when the most-attended content frame is within l of the content end."""
    peak = content_argmax(np.asarray(row, dtype=np.float64), content_end_frame)
    return content_end_frame - peak < l_threshold_frames


@dataclass
class GuidedDecodeResult:
    emitted: list[DecodeStepOutput] = field(default_factory=list)
    diagnostics: list[StepDiagnostic] = field(default_factory=list)
    cap_hit: bool = False


def attention_guided_decode(
    model,
    features: EncoderFeatureSeq,
    initial_context: list[int],
    config: StopPolicyConfig,
    stop_enabled: bool = True,
    on_step=None,
) -> GuidedDecodeResult:
    """Decode greedily until the stop rule, EOS, or the token cap fires.

    The context grows with each emitted token; the step that triggers the
    stop rule is withheld. With ``stop_enabled=False`` this is a plain
    decode-to-EOS pass (used by the local-agreement baseline, pass-through
    replay, and the end-of-stream flush). ``on_step`` sees every probed step
    with the context it was probed under, including withheld and EOS steps.
    """
    result = GuidedDecodeResult()
    context = list(initial_context)
    content_end = features.content_len
    for step_index in range(config.max_tokens_per_chunk):
        step = model.decode_step(features, context)
        if on_step is not None:
            on_step(list(context), step)
        if step.is_eos:
            result.diagnostics.append(
                StepDiagnostic(
                    token_index=step_index,
                    token_id=step.token_id,
                    token_text=step.token_text,
                    argmax_frame=-1,
                    boundary_distance=-1,
                    stopped=False,
                    emitted=False,
                    is_eos=True,
                )
            )
            return result
        row = aggregate_alignment(step.head_rows, config, model_head_ids=model.alignment_head_ids)
        peak = content_argmax(row, content_end)
        distance = content_end - peak
        stopped = stop_enabled and distance < config.l_threshold_frames
        result.diagnostics.append(
            StepDiagnostic(
                token_index=step_index,
                token_id=step.token_id,
                token_text=step.token_text,
                argmax_frame=peak,
                boundary_distance=distance,
                stopped=stopped,
                emitted=not stopped,
            )
        )
        if stopped:
            return result
        result.emitted.append(step)
        context.append(step.token_id)
    result.cap_hit = True
    return result
