"""Chunked streaming decoding for encoder-decoder ASR.

Attention-guided stopping, integrate-and-fire truncation detection, a
local-agreement baseline, and a WER/DAL evaluation harness, all operating on
deterministic synthetic models or recorded traces.
"""

from .alignment import (
    AlignmentRow,
    StopPolicyConfig,
    aggregate_alignment,
    attention_guided_decode,
    median_filter,
    should_stop,
)
from .errors import (
    BadMagicError,
    CapacityError,
    ChecksumError,
    ConfigError,
    DegenerateInputError,
    ReplayMissError,
    StreamASRError,
    TraceFormatError,
    TruncatedFileError,
    UndefinedMetricError,
    UnsupportedVersionError,
    ValidationError,
)
from .metrics import (
    LatencyRecord,
    build_latency_record,
    dal,
    edit_distance,
    normalize_text,
    session_metrics,
    wer,
)
from .model import (
    ScriptedModel,
    ScriptedModelConfig,
    StreamModel,
    TraceReplayModel,
    load_scripted_config,
)
from .streaming import (
    POLICY_ATTENTION,
    POLICY_LOCAL_AGREEMENT,
    POLICY_PASS_THROUGH,
    ContextQueue,
    ContextQueueConfig,
    ContextSegment,
    LocalAgreementState,
    SessionConfig,
    SessionResult,
    StreamSession,
    local_agreement_step,
    longest_common_prefix,
    manage_context,
    run_session,
)
from .tracefile import ChunkRecord, Trace, TraceMeta, TraceStep, load_trace, save_trace, validate_trace
from .truncation import (
    IFScanResult,
    TdmTrainConfig,
    TdmTrainResult,
    TdmWeights,
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
from .types import AudioSpan, DecodeStepOutput, EncoderFeatureSeq, ScriptToken, TokenEmission

__version__ = "0.1.0"

__all__ = [
    "AlignmentRow",
    "AudioSpan",
    "BadMagicError",
    "CapacityError",
    "ChecksumError",
    "ChunkRecord",
    "ConfigError",
    "ContextQueue",
    "ContextQueueConfig",
    "ContextSegment",
    "DecodeStepOutput",
    "DegenerateInputError",
    "EncoderFeatureSeq",
    "IFScanResult",
    "LatencyRecord",
    "LocalAgreementState",
    "POLICY_ATTENTION",
    "POLICY_LOCAL_AGREEMENT",
    "POLICY_PASS_THROUGH",
    "ReplayMissError",
    "ScriptToken",
    "ScriptedModel",
    "ScriptedModelConfig",
    "SessionConfig",
    "SessionResult",
    "StopPolicyConfig",
    "StreamASRError",
    "StreamModel",
    "StreamSession",
    "TdmTrainConfig",
    "TdmTrainResult",
    "TdmWeights",
    "TokenEmission",
    "Trace",
    "TraceFormatError",
    "TraceMeta",
    "TraceReplayModel",
    "TraceStep",
    "TruncatedFileError",
    "UndefinedMetricError",
    "UnsupportedVersionError",
    "ValidationError",
    "aggregate_alignment",
    "attention_guided_decode",
    "batch_quantity_loss",
    "build_latency_record",
    "dal",
    "detect_truncation",
    "edit_distance",
    "if_scan",
    "load_scripted_config",
    "load_tdm_weights",
    "load_trace",
    "local_agreement_step",
    "longest_common_prefix",
    "loss_grad",
    "manage_context",
    "median_filter",
    "normalize_text",
    "quantity_loss",
    "run_session",
    "save_tdm_weights",
    "save_trace",
    "session_metrics",
    "should_stop",
    "signal",
    "train_tdm",
    "validate_trace",
    "wer",
]
