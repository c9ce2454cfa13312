/** Minimal RIFF/WAVE PCM16 reader and writer plus the deterministic
 * frame-feature frontend used by the extraction model. */

import { readFileSync, writeFileSync } from "fs";

export interface WavData {
  sampleRate: number;
  samples: Float64Array; // mono, in [-1, 1]
}

export function readWav(path: string): WavData {
  const buf = readFileSync(path);
  if (buf.length < 44 || buf.toString("ascii", 0, 4) !== "RIFF" || buf.toString("ascii", 8, 12) !== "WAVE") {
    throw new Error(`${path}: not a RIFF/WAVE file`);
  }
  let offset = 12;
  let fmt: { channels: number; sampleRate: number; bits: number } | null = null;
  let data: Buffer | null = null;
  while (offset + 8 <= buf.length) {
    const id = buf.toString("ascii", offset, offset + 4);
    const size = buf.readUInt32LE(offset + 4);
    const body = buf.subarray(offset + 8, offset + 8 + size);
    if (id === "fmt ") {
      const format = body.readUInt16LE(0);
      if (format !== 1) throw new Error(`${path}: only PCM wav supported (format ${format})`);
      fmt = {
        channels: body.readUInt16LE(2),
        sampleRate: body.readUInt32LE(4),
        bits: body.readUInt16LE(14),
      };
    } else if (id === "data") {
      data = Buffer.from(body);
    }
    offset += 8 + size + (size % 2);
  }
  if (!fmt || !data) throw new Error(`${path}: missing fmt or data chunk`);
  if (fmt.bits !== 16) throw new Error(`${path}: only 16-bit PCM supported`);
  const frames = Math.floor(data.length / 2 / fmt.channels);
  const samples = new Float64Array(frames);
  for (let i = 0; i < frames; i++) {
    let acc = 0;
    for (let c = 0; c < fmt.channels; c++) {
      acc += data.readInt16LE((i * fmt.channels + c) * 2);
    }
    samples[i] = acc / fmt.channels / 32768;
  }
  return { sampleRate: fmt.sampleRate, samples };
}

export function writeWav(path: string, sampleRate: number, samples: Float64Array): void {
  const n = samples.length;
  const buf = Buffer.alloc(44 + n * 2);
  buf.write("RIFF", 0, "ascii");
  buf.writeUInt32LE(36 + n * 2, 4);
  buf.write("WAVE", 8, "ascii");
  buf.write("fmt ", 12, "ascii");
  buf.writeUInt32LE(16, 16);
  buf.writeUInt16LE(1, 20); // PCM
  buf.writeUInt16LE(1, 22); // mono
  buf.writeUInt32LE(sampleRate, 24);
  buf.writeUInt32LE(sampleRate * 2, 28);
  buf.writeUInt16LE(2, 32);
  buf.writeUInt16LE(16, 34);
  buf.write("data", 36, "ascii");
  buf.writeUInt32LE(n * 2, 40);
  for (let i = 0; i < n; i++) {
    const v = Math.max(-1, Math.min(1, samples[i]));
    buf.writeInt16LE(Math.round(v * 32767), 44 + i * 2);
  }
  writeFileSync(path, buf);
}

export const FRONTEND_DIM = 10; // logE + zcr + 8 temporal sub-band magnitudes

/** Per-frame acoustic features over a fixed 20 ms grid.
 * Frame n covers samples [n*spf, (n+1)*spf); partial tail frames are dropped. */
export function frameFeatures(wav: WavData, frameMs: number): Float64Array[] {
  const spf = Math.round((wav.sampleRate * frameMs) / 1000);
  const nFrames = Math.floor(wav.samples.length / spf);
  const out: Float64Array[] = [];
  for (let n = 0; n < nFrames; n++) {
    const frame = wav.samples.subarray(n * spf, (n + 1) * spf);
    const feat = new Float64Array(FRONTEND_DIM);
    let energy = 0;
    let zc = 0;
    for (let i = 0; i < frame.length; i++) {
      energy += frame[i] * frame[i];
      if (i > 0 && frame[i] * frame[i - 1] < 0) zc++;
    }
    feat[0] = Math.log10(1e-8 + energy / frame.length);
    feat[1] = zc / frame.length;
    const bands = 8;
    const bandLen = Math.floor(frame.length / bands);
    for (let b = 0; b < bands; b++) {
      let mag = 0;
      for (let i = b * bandLen; i < (b + 1) * bandLen; i++) mag += Math.abs(frame[i]);
      feat[2 + b] = mag / bandLen;
    }
    out.push(feat);
  }
  return out;
}

/** Duration in whole milliseconds covered by complete frames. */
export function audioDurationMs(wav: WavData, frameMs: number): number {
  const spf = Math.round((wav.sampleRate * frameMs) / 1000);
  return Math.floor(wav.samples.length / spf) * frameMs;
}
