from __future__ import annotations

import struct

import numpy as np
import pytest

from streamasr import (
    AudioSpan,
    BadMagicError,
    ChecksumError,
    EncoderFeatureSeq,
    Trace,
    TraceFormatError,
    TraceMeta,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
    load_trace,
    save_trace,
)
from streamasr.tracefile import ChunkRecord, TraceStep


def random_trace(rng: np.random.Generator) -> Trace:
    """An arbitrary structurally-valid trace: random dims, spans, unicode text."""
    d = int(rng.integers(1, 9))
    heads = int(rng.integers(1, 5))
    vocab = ["<eos>"] + [f" tok{i}é" for i in range(int(rng.integers(1, 9)))]
    frame_ms = 20.0
    meta = TraceMeta(
        model_name=f"rnd-{rng.integers(1e6)}",
        d_model=d,
        frame_duration_ms=frame_ms,
        alignment_head_ids=tuple((0, h) for h in range(heads)),
        vocabulary=vocab,
        eos_id=0,
        reference_text="ref — text",
        extra={"seed": int(rng.integers(100))},
    )
    chunks = []
    cursor = 0
    for _ in range(int(rng.integers(1, 5))):
        content = int(rng.integers(2, 30))
        pad = content + int(rng.integers(0, 10))
        start = cursor
        end = cursor + content * int(frame_ms)
        cursor = end
        frames = rng.standard_normal((pad, d)).astype(np.float32)
        feats = EncoderFeatureSeq(
            frames=frames, content_len=content, frame_duration_ms=frame_ms, start_ms=start
        )
        steps = []
        ctx: list[int] = []
        for _ in range(int(rng.integers(0, 4))):
            rows = rng.random((heads, pad)).astype(np.float64) + 1e-3
            rows /= rows.sum(axis=1, keepdims=True)
            tid = int(rng.integers(1, len(vocab)))
            steps.append(
                TraceStep(
                    context=tuple(ctx),
                    token_id=tid,
                    token_text=vocab[tid],
                    is_eos=False,
                    head_rows=rows.astype(np.float32),
                    proc_time_s=float(rng.random() * 0.01),
                )
            )
            ctx.append(tid)
        chunks.append(
            ChunkRecord(
                chunk=AudioSpan(start, end),
                window_start_ms=start,
                features=feats,
                steps=steps,
                encode_time_s=float(rng.random() * 0.1),
            )
        )
    return Trace(meta=meta, chunks=chunks)


class TestRoundTrip:
    def test_two_chunk_trace_round_trips(self, tmp_path):
        trace = random_trace(np.random.default_rng(0))
        path = tmp_path / "t.bin"
        save_trace(trace, path)
        assert load_trace(path) == trace

    def test_hundred_random_traces_bit_exact(self, tmp_path):
        rng = np.random.default_rng(123)
        for i in range(100):
            trace = random_trace(rng)
            path = tmp_path / f"t{i}.bin"
            save_trace(trace, path)
            assert load_trace(path) == trace

    def test_inequality_detected(self, tmp_path):
        trace = random_trace(np.random.default_rng(5))
        path = tmp_path / "t.bin"
        save_trace(trace, path)
        loaded = load_trace(path)
        loaded.meta.reference_text += "x"
        assert loaded != trace


class TestCorruptionRejection:
    @pytest.fixture()
    def saved(self, tmp_path):
        trace = random_trace(np.random.default_rng(7))
        path = tmp_path / "t.bin"
        save_trace(trace, path)
        return path

    def test_wrong_magic(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[:4] = b"NOPE"
        saved.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            load_trace(saved)

    def test_unsupported_version(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[4:6] = struct.pack("<H", 99)
        saved.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedVersionError):
            load_trace(saved)

    def test_truncated_file(self, saved):
        blob = saved.read_bytes()
        saved.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(TruncatedFileError):
            load_trace(saved)

    def test_missing_end_marker(self, saved):
        blob = saved.read_bytes()
        saved.write_bytes(blob[:-16])  # drop the ENDS section
        with pytest.raises(TruncatedFileError):
            load_trace(saved)

    def test_payload_checksum(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[40] ^= 0x5A
        saved.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_trace(saved)

    def test_trailing_garbage(self, saved):
        saved.write_bytes(saved.read_bytes() + b"junk")
        with pytest.raises(TraceFormatError):
            load_trace(saved)

    def test_distinct_error_types(self):
        kinds = {BadMagicError, UnsupportedVersionError, TruncatedFileError, ChecksumError}
        assert len(kinds) == 4
        for k in kinds:
            assert issubclass(k, TraceFormatError)


class TestSemanticValidation:
    def test_mismatched_row_length_rejected(self, tmp_path):
        trace = random_trace(np.random.default_rng(9))
        rec = trace.chunks[0]
        heads = trace.meta.head_count
        bad = np.full((heads, rec.features.n_frames + 3), 1.0, dtype=np.float32)
        bad /= bad.sum(axis=1, keepdims=True)
        rec.steps.append(
            TraceStep(context=(), token_id=1, token_text="x", is_eos=False, head_rows=bad)
        )
        with pytest.raises(ValidationError):
            save_trace(trace, tmp_path / "t.bin")

    def test_rows_must_sum_to_one(self, tmp_path):
        trace = random_trace(np.random.default_rng(11))
        rec = trace.chunks[0]
        heads = trace.meta.head_count
        rows = np.full((heads, rec.features.n_frames), 0.5, dtype=np.float32)
        rec.steps.append(
            TraceStep(context=(), token_id=1, token_text="x", is_eos=False, head_rows=rows)
        )
        with pytest.raises(ValidationError):
            save_trace(trace, tmp_path / "t.bin")

    def test_overlapping_chunks_rejected(self, tmp_path):
        trace = random_trace(np.random.default_rng(13))
        if len(trace.chunks) < 2:
            trace.chunks.append(trace.chunks[0])
        trace.chunks[1] = ChunkRecord(
            chunk=AudioSpan(0, trace.chunks[0].chunk.end_ms),
            window_start_ms=0,
            features=trace.chunks[0].features,
            steps=[],
        )
        with pytest.raises(ValidationError):
            save_trace(trace, tmp_path / "t.bin")

    def test_content_len_must_match_window(self, tmp_path):
        trace = random_trace(np.random.default_rng(15))
        rec = trace.chunks[0]
        rec.features = EncoderFeatureSeq(
            frames=rec.features.frames,
            content_len=max(1, rec.features.content_len - 1),
            frame_duration_ms=rec.features.frame_duration_ms,
            start_ms=rec.features.start_ms,
        )
        with pytest.raises(ValidationError):
            save_trace(trace, tmp_path / "t.bin")
