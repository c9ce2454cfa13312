"""Binary trace container: one recorded controller run, replayable bit-exactly.

A trace stores, per processed chunk, the encoder features of the decoding
window and every decoder step probed in that window keyed by the decoder
context it was probed under. Layout (little-endian throughout, full byte
tables in docs/trace-format.md):

    header   := magic "STRC" | version u16 | flags u16
    section  := tag[4] | payload_len u64 | payload | crc32(payload) u32
    sections := META (once, first), CHNK (per chunk, in stream order),
                ENDS (empty, terminates the file)

Features and attention rows are float32; strings are length-prefixed UTF-8.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    TraceFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .types import AudioSpan, EncoderFeatureSeq

MAGIC = b"STRC"
FORMAT_VERSION = 1
ROW_SUM_TOLERANCE = 1e-3


@dataclass(eq=False)
class TraceStep:
    """One recorded decode_step call: the context probed and what came back."""

    context: tuple[int, ...]
    token_id: int
    token_text: str
    is_eos: bool
    head_rows: np.ndarray  # (head_count, n_frames) float32
    proc_time_s: float = 0.0

    def __post_init__(self) -> None:
        self.head_rows = np.asarray(self.head_rows, dtype=np.float32)
        self.context = tuple(int(t) for t in self.context)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraceStep):
            return NotImplemented
        return (
            self.context == other.context
            and self.token_id == other.token_id
            and self.token_text == other.token_text
            and self.is_eos == other.is_eos
            and self.proc_time_s == other.proc_time_s
            and self.head_rows.shape == other.head_rows.shape
            and np.array_equal(self.head_rows, other.head_rows)
        )


@dataclass(eq=False)
class ChunkRecord:
    """One push of the streaming controller; ``chunk`` is the new audio span."""

    chunk: AudioSpan
    window_start_ms: int
    features: EncoderFeatureSeq
    steps: list[TraceStep] = field(default_factory=list)
    encode_time_s: float = 0.0
    is_flush: bool = False

    @property
    def window(self) -> AudioSpan:
        return AudioSpan(self.window_start_ms, self.chunk.end_ms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChunkRecord):
            return NotImplemented
        return (
            self.chunk == other.chunk
            and self.window_start_ms == other.window_start_ms
            and self.encode_time_s == other.encode_time_s
            and self.is_flush == other.is_flush
            and self.features.content_len == other.features.content_len
            and self.features.start_ms == other.features.start_ms
            and self.features.frame_duration_ms == other.features.frame_duration_ms
            and np.array_equal(self.features.frames, other.features.frames)
            and self.steps == other.steps
        )


@dataclass
class TraceMeta:
    model_name: str
    d_model: int
    frame_duration_ms: float
    alignment_head_ids: tuple[tuple[int, int], ...]
    vocabulary: list[str]
    eos_id: int
    reference_text: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def head_count(self) -> int:
        return len(self.alignment_head_ids)


@dataclass(eq=False)
class Trace:
    meta: TraceMeta
    chunks: list[ChunkRecord] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return self.meta == other.meta and self.chunks == other.chunks


def validate_trace(trace: Trace) -> None:
    """Enforce the structural invariants a loaded or built trace must hold."""
    meta = trace.meta
    if meta.d_model < 1 or meta.head_count < 1:
        raise ValidationError("trace metadata must declare positive dimensions")
    if not 0 <= meta.eos_id < len(meta.vocabulary):
        raise ValidationError(f"eos_id {meta.eos_id} outside the vocabulary")
    if meta.frame_duration_ms <= 0:
        raise ValidationError("frame_duration_ms must be positive")
    prev_end = None
    for ci, rec in enumerate(trace.chunks):
        if prev_end is not None and rec.chunk.start_ms < prev_end:
            raise ValidationError(
                f"chunk {ci} starts at {rec.chunk.start_ms} ms, before previous end {prev_end} ms"
            )
        prev_end = rec.chunk.end_ms
        if rec.window_start_ms > rec.chunk.start_ms:
            raise ValidationError(f"chunk {ci}: window starts after the chunk")
        feats = rec.features
        if feats.d_model != meta.d_model:
            raise ValidationError(f"chunk {ci}: feature dim {feats.d_model} != {meta.d_model}")
        expected = rec.window.n_frames(meta.frame_duration_ms)
        if feats.content_len != expected:
            raise ValidationError(
                f"chunk {ci}: content_len {feats.content_len} does not match the "
                f"window span ({expected} frames)"
            )
        for si, step in enumerate(rec.steps):
            if step.head_rows.shape != (meta.head_count, feats.n_frames):
                raise ValidationError(
                    f"chunk {ci} step {si}: head_rows shape {step.head_rows.shape} "
                    f"!= ({meta.head_count}, {feats.n_frames})"
                )
            if np.any(step.head_rows < 0):
                raise ValidationError(f"chunk {ci} step {si}: negative attention mass")
            sums = step.head_rows.sum(axis=1, dtype=np.float64)
            if np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE):
                raise ValidationError(
                    f"chunk {ci} step {si}: attention rows do not sum to 1 (got {sums})"
                )
            if not 0 <= step.token_id < len(meta.vocabulary):
                raise ValidationError(f"chunk {ci} step {si}: token id {step.token_id} not in vocabulary")
            for t in step.context:
                if not 0 <= t < len(meta.vocabulary):
                    raise ValidationError(f"chunk {ci} step {si}: context id {t} not in vocabulary")


class _Writer:
    def __init__(self) -> None:
        self.buf = bytearray()

    def u8(self, v: int) -> None:
        self.buf += struct.pack("<B", v)

    def u16(self, v: int) -> None:
        self.buf += struct.pack("<H", v)

    def u32(self, v: int) -> None:
        self.buf += struct.pack("<I", v)

    def u64(self, v: int) -> None:
        self.buf += struct.pack("<Q", v)

    def f64(self, v: float) -> None:
        self.buf += struct.pack("<d", v)

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf += raw

    def f32_array(self, a: np.ndarray) -> None:
        self.buf += np.ascontiguousarray(a, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, buf: bytes, label: str) -> None:
        self.buf = buf
        self.pos = 0
        self.label = label

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"{self.label}: payload ends early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def f32_array(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self._take(4 * n)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _encode_meta(meta: TraceMeta) -> bytes:
    w = _Writer()
    w.text(meta.model_name)
    w.u32(meta.d_model)
    w.f64(meta.frame_duration_ms)
    w.u16(meta.head_count)
    for layer, head in meta.alignment_head_ids:
        w.u16(layer)
        w.u16(head)
    w.u32(len(meta.vocabulary))
    for tok in meta.vocabulary:
        w.text(tok)
    w.u32(meta.eos_id)
    w.text(meta.reference_text)
    w.text(json.dumps(meta.extra, sort_keys=True))
    return bytes(w.buf)


def _decode_meta(payload: bytes, label: str) -> TraceMeta:
    r = _Reader(payload, label)
    name = r.text()
    d_model = r.u32()
    fd = r.f64()
    head_count = r.u16()
    heads = tuple((r.u16(), r.u16()) for _ in range(head_count))
    vocab = [r.text() for _ in range(r.u32())]
    eos = r.u32()
    reference = r.text()
    extra = json.loads(r.text())
    if not r.done():
        raise TraceFormatError(f"{label}: trailing bytes in META section")
    return TraceMeta(
        model_name=name,
        d_model=d_model,
        frame_duration_ms=fd,
        alignment_head_ids=heads,
        vocabulary=vocab,
        eos_id=eos,
        reference_text=reference,
        extra=extra,
    )


def _encode_chunk(rec: ChunkRecord, head_count: int) -> bytes:
    w = _Writer()
    w.u64(rec.chunk.start_ms)
    w.u64(rec.chunk.end_ms)
    w.u8(1 if rec.is_flush else 0)
    w.u64(rec.window_start_ms)
    w.f64(rec.encode_time_s)
    feats = rec.features
    w.u32(feats.content_len)
    w.u32(feats.n_frames)
    w.u32(feats.d_model)
    w.f32_array(feats.frames)
    w.u32(len(rec.steps))
    for step in rec.steps:
        w.u32(len(step.context))
        for t in step.context:
            w.u32(t)
        w.u32(step.token_id)
        w.text(step.token_text)
        w.u8(1 if step.is_eos else 0)
        w.f64(step.proc_time_s)
        if step.head_rows.shape != (head_count, feats.n_frames):
            raise ValidationError(
                f"step head_rows shape {step.head_rows.shape} != ({head_count}, {feats.n_frames})"
            )
        w.f32_array(step.head_rows)
    return bytes(w.buf)


def _decode_chunk(payload: bytes, head_count: int, frame_duration_ms: float, label: str) -> ChunkRecord:
    r = _Reader(payload, label)
    start = r.u64()
    end = r.u64()
    is_flush = bool(r.u8())
    window_start = r.u64()
    encode_time = r.f64()
    content_len = r.u32()
    n_frames = r.u32()
    d_model = r.u32()
    frames = r.f32_array((n_frames, d_model))
    feats = EncoderFeatureSeq(
        frames=frames,
        content_len=content_len,
        frame_duration_ms=frame_duration_ms,
        start_ms=window_start,
    )
    steps = []
    for _ in range(r.u32()):
        ctx = tuple(r.u32() for _ in range(r.u32()))
        token_id = r.u32()
        text = r.text()
        is_eos = bool(r.u8())
        proc = r.f64()
        rows = r.f32_array((head_count, n_frames))
        steps.append(
            TraceStep(
                context=ctx,
                token_id=token_id,
                token_text=text,
                is_eos=is_eos,
                head_rows=rows,
                proc_time_s=proc,
            )
        )
    if not r.done():
        raise TraceFormatError(f"{label}: trailing bytes in CHNK section")
    return ChunkRecord(
        chunk=AudioSpan(start, end),
        window_start_ms=window_start,
        features=feats,
        steps=steps,
        encode_time_s=encode_time,
        is_flush=is_flush,
    )


def _write_section(out, tag: bytes, payload: bytes) -> None:
    out.write(tag)
    out.write(struct.pack("<Q", len(payload)))
    out.write(payload)
    out.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def save_trace(trace: Trace, path) -> None:
    validate_trace(trace)
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<HH", FORMAT_VERSION, 0))
        _write_section(out, b"META", _encode_meta(trace.meta))
        for rec in trace.chunks:
            _write_section(out, b"CHNK", _encode_chunk(rec, trace.meta.head_count))
        _write_section(out, b"ENDS", b"")


def load_trace(path) -> Trace:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise TruncatedFileError(f"{path}: file shorter than the header")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a trace file (magic {blob[:4]!r})")
    version, _flags = struct.unpack_from("<HH", blob, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: trace format version {version} unsupported")
    pos = 8
    meta: TraceMeta | None = None
    chunks: list[ChunkRecord] = []
    ended = False
    while not ended:
        if pos == len(blob):
            raise TruncatedFileError(f"{path}: file ends before the ENDS section")
        if pos + 12 > len(blob):
            raise TruncatedFileError(f"{path}: section header ends early")
        tag = blob[pos : pos + 4]
        (length,) = struct.unpack_from("<Q", blob, pos + 4)
        pos += 12
        if pos + length + 4 > len(blob):
            raise TruncatedFileError(f"{path}: section {tag!r} payload ends early")
        payload = blob[pos : pos + length]
        (crc,) = struct.unpack_from("<I", blob, pos + length)
        pos += length + 4
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise ChecksumError(f"{path}: checksum mismatch in section {tag!r}")
        if tag == b"META":
            if meta is not None:
                raise TraceFormatError(f"{path}: duplicate META section")
            meta = _decode_meta(payload, str(path))
        elif tag == b"CHNK":
            if meta is None:
                raise TraceFormatError(f"{path}: CHNK section before META")
            chunks.append(_decode_chunk(payload, meta.head_count, meta.frame_duration_ms, str(path)))
        elif tag == b"ENDS":
            ended = True
        else:
            raise TraceFormatError(f"{path}: unknown section tag {tag!r}")
    if pos != len(blob):
        raise TraceFormatError(f"{path}: trailing data after ENDS section")
    if meta is None:
        raise TraceFormatError(f"{path}: missing META section")
    trace = Trace(meta=meta, chunks=chunks)
    validate_trace(trace)
    return trace
