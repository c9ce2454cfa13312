/** Chunked extraction: run the checkpointed model over an audio file with
 * exactly the window schedule the streaming engine will replay (contiguous
 * chunks, retained-context windows, oldest-chunk eviction, end-of-stream
 * flush), recording encoder memory and alignment-head attention per decoded
 * token. Pass-through decoding: every produced token is committed, so a
 * pass-through replay of the written trace must reproduce the token
 * sequence exactly. */

import { basename } from "path";
import { CheckpointSpec, EncoderDecoder } from "./model.js";
import { ChunkRecordOut, TraceMetaOut, TraceStepOut, writeTrace } from "./tracefile.js";
import { audioDurationMs, frameFeatures, readWav } from "./wav.js";

export interface ExtractionConfig {
  checkpoint: CheckpointSpec;
  audioPath: string;
  outPath: string;
  chunkLenMs?: number;
  maxContextMs?: number;
  maxTokensPerChunk?: number;
}

export interface ExtractionSummary {
  outPath: string;
  audioPath: string;
  durationMs: number;
  chunkRecords: number;
  tokens: string[];
  tokenIds: number[];
}

interface Span {
  startMs: number;
  endMs: number;
}

const ceilDiv = (ms: number, frame: number) => Math.ceil(ms / frame);
const floorDiv = (ms: number, frame: number) => Math.floor(ms / frame);

export function extract(config: ExtractionConfig): ExtractionSummary {
  const spec = config.checkpoint;
  const chunkLenMs = config.chunkLenMs ?? 1000;
  const maxContextMs = config.maxContextMs ?? 4000;
  const maxTokens = config.maxTokensPerChunk ?? 12;
  const frameMs = spec.frameDurationMs;
  if (chunkLenMs <= 0 || maxContextMs <= 0 || maxTokens < 1) {
    throw new Error("chunk length, context budget and token cap must be positive");
  }
  if (chunkLenMs + maxContextMs > spec.padToFrames * frameMs) {
    throw new Error(
      `chunk ${chunkLenMs} ms + context ${maxContextMs} ms exceed the ` +
        `${spec.padToFrames}-frame input window`,
    );
  }

  const wav = readWav(config.audioPath);
  const feats = frameFeatures(wav, frameMs);
  const durationMs = audioDurationMs(wav, frameMs);
  if (durationMs < chunkLenMs) {
    throw new Error(`${config.audioPath}: audio shorter than one chunk (${durationMs} ms)`);
  }

  const model = new EncoderDecoder(spec);
  const schedule: Span[] = [];
  for (let start = 0; start < durationMs; start += chunkLenMs) {
    schedule.push({ startMs: start, endMs: Math.min(start + chunkLenMs, durationMs) });
  }

  const committedIds: number[] = [];
  const committedTexts: string[] = [];
  const queue: Span[] = [];
  const records: ChunkRecordOut[] = [];

  const decodeWindow = (windowStartMs: number, windowEndMs: number): {
    steps: TraceStepOut[];
    features: Float64Array[];
    contentLen: number;
  } => {
    const first = ceilDiv(windowStartMs, frameMs);
    const last = floorDiv(windowEndMs, frameMs);
    const content = feats.slice(first, last);
    const { memory, contentLen } = model.encode(content, spec.padToFrames);
    const prepared = model.prepareWindow(memory, contentLen);
    const steps: TraceStepOut[] = [];
    const context = [...committedIds];
    for (let i = 0; i < maxTokens; i++) {
      const out = model.decodeStep(prepared, context);
      steps.push({
        context: [...context],
        tokenId: out.tokenId,
        tokenText: out.isEos ? "<eos>" : spec.vocab[out.tokenId],
        isEos: out.isEos,
        procTimeS: 0,
        headRows: out.headRows,
      });
      if (out.isEos) break;
      context.push(out.tokenId);
    }
    return { steps, features: memory, contentLen };
  };

  const commitFrom = (steps: TraceStepOut[]): void => {
    for (const step of steps) {
      if (!step.isEos) {
        committedIds.push(step.tokenId);
        committedTexts.push(step.tokenText);
      }
    }
  };

  for (const span of schedule) {
    const windowStartMs = queue.length > 0 ? queue[0].startMs : span.startMs;
    const { steps, features, contentLen } = decodeWindow(windowStartMs, span.endMs);
    commitFrom(steps);
    records.push({
      chunkStartMs: span.startMs,
      chunkEndMs: span.endMs,
      isFlush: false,
      windowStartMs,
      encodeTimeS: 0,
      contentLen,
      nFrames: features.length,
      dModel: spec.dModel,
      features,
      steps,
    });
    queue.push(span);
    let total = queue.reduce((acc, s) => acc + (s.endMs - s.startMs), 0);
    while (queue.length > 1 && total > maxContextMs) {
      const evicted = queue.shift()!;
      total -= evicted.endMs - evicted.startMs;
    }
  }

  // end-of-stream flush over the retained window, mirroring the engine
  const flushStartMs = queue.length > 0 ? queue[0].startMs : 0;
  const flush = decodeWindow(flushStartMs, durationMs);
  commitFrom(flush.steps);
  records.push({
    chunkStartMs: durationMs,
    chunkEndMs: durationMs,
    isFlush: true,
    windowStartMs: flushStartMs,
    encodeTimeS: 0,
    contentLen: flush.contentLen,
    nFrames: flush.features.length,
    dModel: spec.dModel,
    features: flush.features,
    steps: flush.steps,
  });

  const meta: TraceMetaOut = {
    modelName: spec.name,
    dModel: spec.dModel,
    frameDurationMs: frameMs,
    alignmentHeadIds: spec.alignmentHeads,
    vocabulary: spec.vocab,
    eosId: spec.eosId,
    referenceText: "",
    extra: {
      policy: "pass_through",
      chunk_len_ms: chunkLenMs,
      max_context_ms: maxContextMs,
      max_tokens_per_chunk: maxTokens,
      l_threshold_frames: 12,
      median_window: 7,
      use_tdm: false,
      fire_threshold: 0.999,
      agreement_n: 2,
      timing: "synthetic",
      extractor: "trace-extract",
      audio: basename(config.audioPath),
      checkpoint_seed: spec.seed,
    },
  };
  writeTrace(config.outPath, meta, records);
  return {
    outPath: config.outPath,
    audioPath: config.audioPath,
    durationMs,
    chunkRecords: records.length,
    tokens: committedTexts,
    tokenIds: [...committedIds],
  };
}
