/** Binary trace writer, byte-compatible with the engine's documented format
 * (magic "STRC", version 1, CRC32-framed META/CHNK/ENDS sections,
 * little-endian, float32 features and attention rows). */

import { writeFileSync } from "fs";
import { crc32 } from "zlib";

export interface TraceStepOut {
  context: number[];
  tokenId: number;
  tokenText: string;
  isEos: boolean;
  procTimeS: number;
  /** headCount rows of nFrames float values */
  headRows: Float64Array[] | Float32Array[];
}

export interface ChunkRecordOut {
  chunkStartMs: number;
  chunkEndMs: number;
  isFlush: boolean;
  windowStartMs: number;
  encodeTimeS: number;
  contentLen: number;
  nFrames: number;
  dModel: number;
  /** nFrames rows of dModel float values */
  features: Float64Array[] | Float32Array[];
  steps: TraceStepOut[];
}

export interface TraceMetaOut {
  modelName: string;
  dModel: number;
  frameDurationMs: number;
  alignmentHeadIds: [number, number][];
  vocabulary: string[];
  eosId: number;
  referenceText: string;
  extra: Record<string, unknown>;
}

class ByteWriter {
  private parts: Buffer[] = [];

  u8(v: number): void {
    const b = Buffer.alloc(1);
    b.writeUInt8(v);
    this.parts.push(b);
  }

  u16(v: number): void {
    const b = Buffer.alloc(2);
    b.writeUInt16LE(v);
    this.parts.push(b);
  }

  u32(v: number): void {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v >>> 0);
    this.parts.push(b);
  }

  u64(v: number): void {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(BigInt(v));
    this.parts.push(b);
  }

  f64(v: number): void {
    const b = Buffer.alloc(8);
    b.writeDoubleLE(v);
    this.parts.push(b);
  }

  text(s: string): void {
    const raw = Buffer.from(s, "utf-8");
    this.u32(raw.length);
    this.parts.push(raw);
  }

  f32Rows(rows: Float64Array[] | Float32Array[], cols: number): void {
    const b = Buffer.alloc(rows.length * cols * 4);
    let off = 0;
    for (const row of rows) {
      if (row.length !== cols) {
        throw new Error(`row length ${row.length} != ${cols}`);
      }
      for (let j = 0; j < cols; j++) {
        b.writeFloatLE(Math.fround(row[j]), off);
        off += 4;
      }
    }
    this.parts.push(b);
  }

  bytes(): Buffer {
    return Buffer.concat(this.parts);
  }
}

function section(tag: string, payload: Buffer): Buffer {
  const head = Buffer.alloc(12);
  head.write(tag, 0, "ascii");
  head.writeBigUInt64LE(BigInt(payload.length), 4);
  const crc = Buffer.alloc(4);
  crc.writeUInt32LE(crc32(payload) >>> 0);
  return Buffer.concat([head, payload, crc]);
}

function encodeMeta(meta: TraceMetaOut): Buffer {
  const w = new ByteWriter();
  w.text(meta.modelName);
  w.u32(meta.dModel);
  w.f64(meta.frameDurationMs);
  w.u16(meta.alignmentHeadIds.length);
  for (const [layer, head] of meta.alignmentHeadIds) {
    w.u16(layer);
    w.u16(head);
  }
  w.u32(meta.vocabulary.length);
  for (const tok of meta.vocabulary) w.text(tok);
  w.u32(meta.eosId);
  w.text(meta.referenceText);
  w.text(stableJson(meta.extra));
  return w.bytes();
}

/** JSON with sorted keys: byte-identical re-extractions need stable metadata. */
function stableJson(obj: unknown): string {
  if (obj === null || typeof obj !== "object" || Array.isArray(obj)) {
    if (Array.isArray(obj)) {
      return "[" + obj.map(stableJson).join(", ") + "]";
    }
    return JSON.stringify(obj);
  }
  const rec = obj as Record<string, unknown>;
  const keys = Object.keys(rec).sort();
  const body = keys.map((k) => `${JSON.stringify(k)}: ${stableJson(rec[k])}`);
  return "{" + body.join(", ") + "}";
}

function encodeChunk(rec: ChunkRecordOut, headCount: number): Buffer {
  const w = new ByteWriter();
  w.u64(rec.chunkStartMs);
  w.u64(rec.chunkEndMs);
  w.u8(rec.isFlush ? 1 : 0);
  w.u64(rec.windowStartMs);
  w.f64(rec.encodeTimeS);
  w.u32(rec.contentLen);
  w.u32(rec.nFrames);
  w.u32(rec.dModel);
  w.f32Rows(rec.features, rec.dModel);
  w.u32(rec.steps.length);
  for (const step of rec.steps) {
    w.u32(step.context.length);
    for (const t of step.context) w.u32(t);
    w.u32(step.tokenId);
    w.text(step.tokenText);
    w.u8(step.isEos ? 1 : 0);
    w.f64(step.procTimeS);
    if (step.headRows.length !== headCount) {
      throw new Error(`step has ${step.headRows.length} head rows, expected ${headCount}`);
    }
    w.f32Rows(step.headRows, rec.nFrames);
  }
  return w.bytes();
}

export function writeTrace(path: string, meta: TraceMetaOut, chunks: ChunkRecordOut[]): void {
  const parts: Buffer[] = [];
  const header = Buffer.alloc(8);
  header.write("STRC", 0, "ascii");
  header.writeUInt16LE(1, 4); // format version
  header.writeUInt16LE(0, 6); // flags
  parts.push(header);
  parts.push(section("META", encodeMeta(meta)));
  for (const rec of chunks) {
    parts.push(section("CHNK", encodeChunk(rec, meta.alignmentHeadIds.length)));
  }
  parts.push(section("ENDS", Buffer.alloc(0)));
  writeFileSync(path, Buffer.concat(parts));
}
