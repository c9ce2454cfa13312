"""Streaming controller: chunk scheduling, policy application, context management.

One session is a single logical thread of control; chunks must arrive in
order with no gaps (a concurrent producer should hand them over through a
FIFO such as ``queue.Queue``). Distinct sessions share nothing mutable, so
they parallelize freely.

Three policies:

* ``attention_guided`` decodes under the stop rule and, when the truncation
  detector sees no fire at the chunk end, deletes the last word of the fresh
  delta and waits for the next chunk to regenerate it.
* ``local_agreement`` re-decodes the whole retained buffer each chunk and
  commits the longest common prefix of the last n hypotheses.
* ``pass_through`` commits every decoded token; used to replay extracted
  traces verbatim and as a no-policy baseline.

Committed tokens are never modified or removed. An end-of-stream flush
re-decodes the final window with the stop rule disabled so withheld and
deferred words are recovered.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .alignment import StopPolicyConfig, attention_guided_decode
from .errors import ConfigError, StreamASRError, ValidationError
from .model import StreamModel, TraceReplayModel
from .tracefile import ChunkRecord, Trace, TraceMeta, TraceStep
from .truncation import DEFAULT_FIRE_THRESHOLD, TdmWeights, detect_truncation, signal
from .types import (
    AudioSpan,
    ChunkReport,
    StepDiagnostic,
    TokenEmission,
    last_word_start,
)

POLICY_ATTENTION = "attention_guided"
POLICY_LOCAL_AGREEMENT = "local_agreement"
POLICY_PASS_THROUGH = "pass_through"
POLICIES = (POLICY_ATTENTION, POLICY_LOCAL_AGREEMENT, POLICY_PASS_THROUGH)

DEFAULT_MAX_CONTEXT_MS = 10_000


@dataclass(frozen=True)
class ContextQueueConfig:
    max_context_ms: int = DEFAULT_MAX_CONTEXT_MS

    def __post_init__(self) -> None:
        if self.max_context_ms <= 0:
            raise ConfigError("max_context_ms must be positive")


@dataclass
class ContextSegment:
    span: AudioSpan
    tokens: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class ContextQueue:
    segments: list[ContextSegment] = field(default_factory=list)

    def total_ms(self) -> int:
        return sum(s.span.duration_ms for s in self.segments)

    def append(self, segment: ContextSegment) -> None:
        if self.segments and segment.span.start_ms < self.segments[-1].span.end_ms:
            raise ValidationError("context segments must be time-ordered")
        self.segments.append(segment)


def manage_context(queue: ContextQueue, config: ContextQueueConfig) -> list[ContextSegment]:
    """Evict whole oldest segments until the retained audio fits the budget."""
    evicted: list[ContextSegment] = []
    while len(queue.segments) > 1 and queue.total_ms() > config.max_context_ms:
        evicted.append(queue.segments.pop(0))
    return evicted


@dataclass
class LocalAgreementState:
    n: int = 2
    hypothesis_history: list[list[tuple[int, str]]] = field(default_factory=list)
    committed_prefix: list[tuple[int, str]] = field(default_factory=list)


def longest_common_prefix(hyps: list[list[tuple[int, str]]]) -> list[tuple[int, str]]:
    if not hyps:
        return []
    out = list(hyps[0])
    for h in hyps[1:]:
        limit = min(len(out), len(h))
        k = 0
        while k < limit and out[k] == h[k]:
            k += 1
        out = out[:k]
    return out


def local_agreement_step(
    state: LocalAgreementState, new_full_hypothesis: list[tuple[int, str]]
) -> list[tuple[int, str]]:
    """Store a full-buffer hypothesis and return the newly agreed delta.

    Commits only once n hypotheses are held; committed tokens are never
    retracted, so an agreement shorter than the committed prefix yields
    nothing.
    """
    state.hypothesis_history.append(list(new_full_hypothesis))
    if len(state.hypothesis_history) > state.n:
        state.hypothesis_history = state.hypothesis_history[-state.n :]
    if len(state.hypothesis_history) < state.n:
        return []
    agreed = longest_common_prefix(state.hypothesis_history)
    if len(agreed) <= len(state.committed_prefix):
        return []
    delta = agreed[len(state.committed_prefix) :]
    state.committed_prefix = agreed
    return delta


@dataclass
class SessionConfig:
    policy: str = POLICY_ATTENTION
    chunk_len_ms: int = 1000
    stop: StopPolicyConfig = field(default_factory=StopPolicyConfig)
    use_tdm: bool = True
    fire_threshold: float = DEFAULT_FIRE_THRESHOLD
    tdm_weights: TdmWeights | None = None
    max_context_ms: int = DEFAULT_MAX_CONTEXT_MS
    agreement_n: int = 2
    timing: str = "synthetic"  # synthetic | wallclock

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        if self.chunk_len_ms <= 0:
            raise ConfigError("chunk_len_ms must be positive")
        if self.agreement_n < 1:
            raise ConfigError("agreement_n must be >= 1")
        if self.timing not in ("synthetic", "wallclock"):
            raise ConfigError("timing must be 'synthetic' or 'wallclock'")
        if not 0 < self.fire_threshold:
            raise ConfigError("fire_threshold must be positive")

    def snapshot(self) -> dict:
        out = {
            "policy": self.policy,
            "chunk_len_ms": self.chunk_len_ms,
            "l_threshold_frames": self.stop.l_threshold_frames,
            "median_window": self.stop.median_window,
            "alignment_head_ids": (
                list(map(list, self.stop.alignment_head_ids))
                if self.stop.alignment_head_ids is not None
                else None
            ),
            "max_tokens_per_chunk": self.stop.max_tokens_per_chunk,
            "use_tdm": self.use_tdm,
            "fire_threshold": self.fire_threshold,
            "max_context_ms": self.max_context_ms,
            "agreement_n": self.agreement_n,
            "timing": self.timing,
        }
        if self.use_tdm and self.tdm_weights is not None:
            # embedded so a recorded trace replays self-contained
            out["tdm_weights"] = {
                "w": [float(x) for x in self.tdm_weights.w],
                "b": float(self.tdm_weights.b),
            }
        return out


@dataclass
class SessionResult:
    policy: str
    chunk_len_ms: int
    model_name: str
    committed: list[TokenEmission]
    chunks: list[ChunkReport]
    reference_text: str
    audio_duration_s: float
    config: dict
    trace: Trace | None = None

    @property
    def transcript(self) -> str:
        return "".join(e.text for e in self.committed).strip()

    def to_report_dict(self) -> dict:
        return {
            "schema": "streamasr-session-report-v1",
            "model": self.model_name,
            "config": self.config,
            "audio_duration_s": self.audio_duration_s,
            "reference": self.reference_text,
            "transcript": self.transcript,
            "tokens": [
                {
                    "id": e.token_id,
                    "text": e.text,
                    "chunk": e.chunk_index,
                    "g_unaware_s": e.unaware_s,
                    "g_aware_s": e.aware_s,
                    "wall_s": e.wall_s,
                }
                for e in self.committed
            ],
            "chunks": [
                {
                    "index": c.index,
                    "chunk_ms": [c.chunk.start_ms, c.chunk.end_ms],
                    "window_ms": [c.window.start_ms, c.window.end_ms],
                    "content_frames": c.content_frames,
                    "is_flush": c.is_flush,
                    "truncation_detected": c.truncation_detected,
                    "n_committed": c.n_committed,
                    "deferred": c.deferred_texts,
                    "cap_hit": c.cap_hit,
                    "processing_time_s": c.processing_time_s,
                    "available_at_s": c.available_at_s,
                    "steps": [
                        {
                            "token": s.token_text,
                            "argmax_frame": s.argmax_frame,
                            "boundary_distance": s.boundary_distance,
                            "stopped": s.stopped,
                            "emitted": s.emitted,
                            "is_eos": s.is_eos,
                        }
                        for s in c.steps
                    ],
                }
                for c in self.chunks
            ],
        }


class _TraceRecorder:
    def __init__(self, model: StreamModel, config: SessionConfig) -> None:
        self._model = model
        self._config = config
        self.records: list[ChunkRecord] = []

    def add_chunk(
        self,
        chunk: AudioSpan,
        window: AudioSpan,
        features,
        encode_time_s: float,
        probed: list[tuple[list[int], object]],
        is_flush: bool,
    ) -> None:
        steps = [
            TraceStep(
                context=tuple(ctx),
                token_id=step.token_id,
                token_text=step.token_text,
                is_eos=step.is_eos,
                head_rows=step.head_rows,
                proc_time_s=step.proc_time_s,
            )
            for ctx, step in probed
        ]
        self.records.append(
            ChunkRecord(
                chunk=chunk,
                window_start_ms=window.start_ms,
                features=features,
                steps=steps,
                encode_time_s=encode_time_s,
                is_flush=is_flush,
            )
        )

    def build(self) -> Trace:
        model = self._model
        meta = TraceMeta(
            model_name=model.name,
            d_model=model.d_model,
            frame_duration_ms=model.frame_duration_ms,
            alignment_head_ids=tuple(model.alignment_head_ids),
            vocabulary=list(model.vocabulary),
            eos_id=model.eos_id,
            reference_text=model.reference_text,
            extra=self._config.snapshot(),
        )
        return Trace(meta=meta, chunks=self.records)


class StreamSession:
    """Feed chunks in order, then call finish(); read result() once done."""

    def __init__(self, model: StreamModel, config: SessionConfig, record_trace: bool = False) -> None:
        self.model = model
        self.config = config
        if config.policy == POLICY_ATTENTION and config.use_tdm:
            if config.tdm_weights is None:
                raise ConfigError("attention policy with TDM enabled needs tdm_weights")
            if config.tdm_weights.w.shape[0] != model.d_model:
                raise ValidationError(
                    f"TDM weight dim {config.tdm_weights.w.shape[0]} != model dim {model.d_model}"
                )
        frame = model.frame_duration_ms
        max_window_frames = int((config.max_context_ms + config.chunk_len_ms) // frame) + 2
        if max_window_frames > model.pad_to_frames:
            raise ConfigError(
                f"max_context {config.max_context_ms} ms + chunk {config.chunk_len_ms} ms "
                f"cannot fit the model's {model.pad_to_frames}-frame input window"
            )
        self.committed: list[TokenEmission] = []
        self.chunk_reports: list[ChunkReport] = []
        self.queue = ContextQueue()
        self.queue_config = ContextQueueConfig(max_context_ms=config.max_context_ms)
        self.deferred_tail: list[str] = []
        self.la_state = LocalAgreementState(n=config.agreement_n)
        self._la_buffer_start_ms = 0
        self._la_chunks: list[AudioSpan] = []
        self._finish_time_s = 0.0
        self._wall_total_s = 0.0
        self._next_start_ms: int | None = None
        self._last_span: AudioSpan | None = None
        self._finished = False
        self.failed = False
        self._recorder = _TraceRecorder(model, config) if record_trace else None

    # -- helpers -----------------------------------------------------------

    def _context_ids(self) -> list[int]:
        return [e.token_id for e in self.committed]

    def _commit(self, pairs: list[tuple[int, str]], chunk_index: int, end_ms: int, proc_s: float) -> list[TokenEmission]:
        arrival = end_ms / 1000.0
        self._finish_time_s = max(arrival, self._finish_time_s) + proc_s
        emissions = []
        for token_id, text in pairs:
            true_end = None
            if hasattr(self.model, "true_token_end_s"):
                true_end = self.model.true_token_end_s(len(self.committed) + len(emissions))
            emissions.append(
                TokenEmission(
                    token_id=token_id,
                    text=text,
                    chunk_index=chunk_index,
                    unaware_s=arrival,
                    aware_s=self._finish_time_s,
                    wall_s=self._wall_total_s,
                    true_end_s=true_end,
                )
            )
        self.committed.extend(emissions)
        return emissions

    def _decode(self, features, stop_enabled: bool, collector: list) -> tuple:
        def on_step(ctx, step):
            collector.append((ctx, step))

        return attention_guided_decode(
            self.model,
            features,
            self._context_ids(),
            self.config.stop,
            stop_enabled=stop_enabled,
            on_step=on_step,
        )

    def _proc_seconds(self, window: AudioSpan, probed: list, wall_s: float) -> float:
        if self.config.timing == "wallclock":
            return wall_s
        return self.model.encode_time_for(window) + sum(step.proc_time_s for _, step in probed)

    # -- the main entry points ---------------------------------------------

    def push_chunk(self, span: AudioSpan) -> list[TokenEmission]:
        if self._finished:
            raise ValidationError("session already finished")
        if span.duration_ms <= 0:
            raise ValidationError("chunk must have positive duration")
        if span.duration_ms > self.config.chunk_len_ms:
            raise ValidationError(
                f"chunk of {span.duration_ms} ms exceeds the configured {self.config.chunk_len_ms} ms"
            )
        if self._next_start_ms is not None and span.start_ms != self._next_start_ms:
            raise ValidationError(
                f"chunks must be contiguous: expected start {self._next_start_ms} ms, got {span.start_ms} ms"
            )
        try:
            return self._push(span)
        except StreamASRError:
            self.failed = True
            raise

    def _push(self, span: AudioSpan) -> list[TokenEmission]:
        chunk_index = len(self.chunk_reports)
        wall0 = time.perf_counter()
        if self.config.policy == POLICY_LOCAL_AGREEMENT:
            window = AudioSpan(self._la_buffer_start_ms, span.end_ms)
        else:
            window = AudioSpan(
                self.queue.segments[0].span.start_ms if self.queue.segments else span.start_ms,
                span.end_ms,
            )
        features = self.model.encode(window)
        probed: list = []
        stop_enabled = self.config.policy == POLICY_ATTENTION
        result = self._decode(features, stop_enabled, probed)
        delta = list(result.emitted)
        truncation = None
        deferred: list[str] = []

        if self.config.policy == POLICY_LOCAL_AGREEMENT:
            hypothesis = [(e.token_id, e.text) for e in self.committed]
            hypothesis += [(s.token_id, s.token_text) for s in delta]
            agreed_delta = local_agreement_step(self.la_state, hypothesis)
            commit_pairs = agreed_delta
        else:
            if self.config.policy == POLICY_ATTENTION and self.config.use_tdm:
                alpha = signal(features, self.config.tdm_weights)
                truncation = detect_truncation(alpha, self.config.fire_threshold)
                if truncation and delta:
                    cut = last_word_start([s.token_text for s in delta])
                    deferred = [s.token_text for s in delta[cut:]]
                    delta = delta[:cut]
            commit_pairs = [(s.token_id, s.token_text) for s in delta]
        self.deferred_tail = deferred

        wall = time.perf_counter() - wall0
        self._wall_total_s += wall
        proc = self._proc_seconds(window, probed, wall)
        emissions = self._commit(commit_pairs, chunk_index, span.end_ms, proc)

        if self.config.policy == POLICY_LOCAL_AGREEMENT:
            self._la_chunks.append(span)
            while (
                span.end_ms - self._la_buffer_start_ms > self.config.max_context_ms
                and self._la_chunks
                and self._la_chunks[0].end_ms <= span.start_ms
            ):
                head = self._la_chunks.pop(0)
                self._la_buffer_start_ms = head.end_ms
        else:
            self.queue.append(ContextSegment(span=span, tokens=list(commit_pairs)))
            manage_context(self.queue, self.queue_config)

        if self._recorder is not None:
            self._recorder.add_chunk(
                span, window, features, self.model.encode_time_for(window), probed, is_flush=False
            )
        self.chunk_reports.append(
            ChunkReport(
                index=chunk_index,
                chunk=span,
                window=window,
                content_frames=features.content_len,
                steps=result.diagnostics,
                truncation_detected=truncation,
                n_committed=len(emissions),
                deferred_texts=list(deferred),
                cap_hit=result.cap_hit,
                processing_time_s=proc,
                available_at_s=self._finish_time_s,
                is_flush=False,
            )
        )
        self._last_span = span
        self._next_start_ms = span.end_ms
        return emissions

    def finish(self) -> list[TokenEmission]:
        """End of stream: decode the final window once more without the stop
        rule and commit whatever the policies were still holding back."""
        if self._finished:
            raise ValidationError("session already finished")
        self._finished = True
        if self._last_span is None:
            return []
        end_ms = self._last_span.end_ms
        chunk_index = len(self.chunk_reports)
        wall0 = time.perf_counter()
        if self.config.policy == POLICY_LOCAL_AGREEMENT:
            window = AudioSpan(self._la_buffer_start_ms, end_ms)
        else:
            window = AudioSpan(
                self.queue.segments[0].span.start_ms if self.queue.segments else self._last_span.start_ms,
                end_ms,
            )
        features = self.model.encode(window)
        probed: list = []
        result = self._decode(features, stop_enabled=False, collector=probed)
        commit_pairs = [(s.token_id, s.token_text) for s in result.emitted]
        wall = time.perf_counter() - wall0
        self._wall_total_s += wall
        proc = self._proc_seconds(window, probed, wall)
        emissions = self._commit(commit_pairs, chunk_index, end_ms, proc)
        self.deferred_tail = []
        if self._recorder is not None:
            self._recorder.add_chunk(
                AudioSpan(end_ms, end_ms), window, features,
                self.model.encode_time_for(window), probed, is_flush=True,
            )
        self.chunk_reports.append(
            ChunkReport(
                index=chunk_index,
                chunk=AudioSpan(end_ms, end_ms),
                window=window,
                content_frames=features.content_len,
                steps=result.diagnostics,
                truncation_detected=None,
                n_committed=len(emissions),
                cap_hit=result.cap_hit,
                processing_time_s=proc,
                available_at_s=self._finish_time_s,
                is_flush=True,
            )
        )
        return emissions

    def result(self) -> SessionResult:
        if self.failed:
            raise ValidationError("session failed; no result available")
        if not self._finished:
            raise ValidationError("call finish() before reading the result")
        duration_ms = self._last_span.end_ms if self._last_span is not None else 0
        return SessionResult(
            policy=self.config.policy,
            chunk_len_ms=self.config.chunk_len_ms,
            model_name=self.model.name,
            committed=list(self.committed),
            chunks=list(self.chunk_reports),
            reference_text=self.model.reference_text,
            audio_duration_s=duration_ms / 1000.0,
            config=self.config.snapshot(),
            trace=self._recorder.build() if self._recorder is not None else None,
        )


def chunk_schedule(total_ms: int, chunk_len_ms: int) -> list[AudioSpan]:
    """Contiguous chunk spans covering [0, total_ms); the last may be short."""
    if total_ms <= 0:
        raise ValidationError("stream duration must be positive")
    spans = []
    start = 0
    while start < total_ms:
        end = min(start + chunk_len_ms, total_ms)
        spans.append(AudioSpan(start, end))
        start = end
    return spans


def run_session(model: StreamModel, config: SessionConfig, record_trace: bool = False) -> SessionResult:
    """Drive a whole stream through a session: all chunks in order, then flush."""
    if isinstance(model, TraceReplayModel):
        schedule = model.chunk_schedule()
        if not schedule:
            raise ValidationError("trace holds no chunks to replay")
    else:
        schedule = chunk_schedule(model.stream_duration_ms(), config.chunk_len_ms)
    session = StreamSession(model, config, record_trace=record_trace)
    for span in schedule:
        session.push_chunk(span)
    session.finish()
    return session.result()
