/** Checkpointed encoder-decoder with recordable cross-attention.
 *
 * The checkpoint file pins every dimension, the vocabulary, the alignment
 * head ids, and a weight seed; all parameters are regenerated from the seed
 * deterministically, so a checkpoint is small and two loads are bit-equal.
 * The decoder's cross-attention is the standard softmax(Q K^T / sqrt(d_k))
 * per head; the configured alignment heads' rows for the current token are
 * captured during greedy decoding, never recomputed after the fact.
 */

import { readFileSync, writeFileSync } from "fs";
import { gaussianStream, subSeed } from "./prng.js";
import { FRONTEND_DIM } from "./wav.js";

export interface CheckpointSpec {
  format: string;
  version: number;
  name: string;
  seed: number;
  dModel: number;
  encLayers: number;
  decLayers: number;
  heads: number;
  dHead: number;
  vocab: string[];
  eosId: number;
  frameDurationMs: number;
  padToFrames: number;
  alignmentHeads: [number, number][];
}

export const CHECKPOINT_FORMAT = "trace-extract-checkpoint";

const DEFAULT_VOCAB = [
  "<eos>",
  " the", " a", " to", " and", " of", " in", " it", " is", " on", " at",
  " for", " so", " we", " go", " up", " no", " yes", " one", " two", " ten",
  " day", " way", " time", " word", " work", " world", " play", " back",
  " out", " sound", " light", " line", " hand", " part", " year",
  "s", "ing", "ed", "er", "ly", "tion", "ment", "ness", "able", "al", "en", "re",
];

export function defaultCheckpoint(seed: number, name = `seeded-${seed}`): CheckpointSpec {
  return {
    format: CHECKPOINT_FORMAT,
    version: 1,
    name,
    seed,
    dModel: 32,
    encLayers: 2,
    decLayers: 2,
    heads: 4,
    dHead: 8,
    vocab: [...DEFAULT_VOCAB],
    eosId: 0,
    frameDurationMs: 20,
    padToFrames: 512,
    alignmentHeads: [
      [0, 1],
      [1, 0],
      [1, 2],
    ],
  };
}

export function saveCheckpoint(spec: CheckpointSpec, path: string): void {
  writeFileSync(path, JSON.stringify(spec, null, 2) + "\n");
}

export function loadCheckpoint(path: string): CheckpointSpec {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new Error(`checkpoint not readable: ${path}`);
  }
  const spec = JSON.parse(raw) as CheckpointSpec;
  if (spec.format !== CHECKPOINT_FORMAT) {
    throw new Error(`${path}: not a ${CHECKPOINT_FORMAT} file`);
  }
  if (spec.version !== 1) {
    throw new Error(`${path}: unsupported checkpoint version ${spec.version}`);
  }
  if (spec.eosId < 0 || spec.eosId >= spec.vocab.length) {
    throw new Error(`${path}: eosId outside the vocabulary`);
  }
  for (const [layer, head] of spec.alignmentHeads) {
    if (layer < 0 || layer >= spec.decLayers || head < 0 || head >= spec.heads) {
      throw new Error(
        `${path}: alignment head (${layer}, ${head}) outside decoder dims ` +
          `(${spec.decLayers} layers x ${spec.heads} heads)`,
      );
    }
  }
  if (spec.alignmentHeads.length === 0) {
    throw new Error(`${path}: checkpoint declares no alignment heads`);
  }
  return spec;
}

/** Row-major matrix of shape rows x cols, generated from a labelled seed. */
function genMatrix(seed: number, label: string, rows: number, cols: number): Float64Array {
  const g = gaussianStream(subSeed(seed, label));
  const scale = 1.0 / Math.sqrt(Math.max(1, cols));
  const out = new Float64Array(rows * cols);
  for (let i = 0; i < out.length; i++) out[i] = g() * scale;
  return out;
}

function genVector(seed: number, label: string, n: number): Float64Array {
  const g = gaussianStream(subSeed(seed, label));
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) out[i] = g() * 0.02;
  return out;
}

/** y = x . W (x: [n], W: [n x m]) */
function vecMat(x: Float64Array, w: Float64Array, n: number, m: number, out: Float64Array): void {
  out.fill(0);
  for (let i = 0; i < n; i++) {
    const xi = x[i];
    if (xi === 0) continue;
    const base = i * m;
    for (let j = 0; j < m; j++) out[j] += xi * w[base + j];
  }
}

function layerNorm(x: Float64Array): void {
  let mean = 0;
  for (let i = 0; i < x.length; i++) mean += x[i];
  mean /= x.length;
  let variance = 0;
  for (let i = 0; i < x.length; i++) {
    const d = x[i] - mean;
    variance += d * d;
  }
  variance /= x.length;
  const inv = 1.0 / Math.sqrt(variance + 1e-5);
  for (let i = 0; i < x.length; i++) x[i] = (x[i] - mean) * inv;
}

function gelu(v: number): number {
  return 0.5 * v * (1 + Math.tanh(Math.sqrt(2 / Math.PI) * (v + 0.044715 * v * v * v)));
}

function sinusoidalPe(pos: number, d: number, out: Float64Array): void {
  for (let i = 0; i < d; i += 2) {
    const angle = pos / Math.pow(10000, i / d);
    out[i] = Math.sin(angle);
    if (i + 1 < d) out[i + 1] = Math.cos(angle);
  }
}

export interface DecodeOutput {
  tokenId: number;
  isEos: boolean;
  /** one row per configured alignment head, softmax over all padded frames */
  headRows: Float64Array[];
}

/** Encoder memory with the cross-attention keys/values precomputed per
 * decoder layer; the memory is fixed for a window, the context is not. */
export interface PreparedWindow {
  memory: Float64Array[];
  contentLen: number;
  crossK: Float64Array[][];
  crossV: Float64Array[][];
}

export class EncoderDecoder {
  readonly spec: CheckpointSpec;
  private readonly w: Map<string, Float64Array> = new Map();

  constructor(spec: CheckpointSpec) {
    this.spec = spec;
    const d = spec.dModel;
    const v = spec.vocab.length;
    const put = (label: string, rows: number, cols: number) =>
      this.w.set(label, genMatrix(spec.seed, label, rows, cols));
    const putV = (label: string, n: number) => this.w.set(label, genVector(spec.seed, label, n));

    put("enc.in", FRONTEND_DIM, d);
    putV("enc.in.b", d);
    for (let l = 0; l < spec.encLayers; l++) {
      for (const k of ["m1", 0, "p1"]) put(`enc.${l}.conv.${k}`, d, d);
      putV(`enc.${l}.conv.b`, d);
      put(`enc.${l}.mlp.1`, d, 2 * d);
      putV(`enc.${l}.mlp.1b`, 2 * d);
      put(`enc.${l}.mlp.2`, 2 * d, d);
      putV(`enc.${l}.mlp.2b`, d);
    }
    put("dec.embed", v, d);
    putV("dec.bos", d);
    for (let l = 0; l < spec.decLayers; l++) {
      for (const part of ["self", "cross"]) {
        for (const proj of ["q", "k", "v", "o"]) put(`dec.${l}.${part}.${proj}`, d, d);
      }
      put(`dec.${l}.mlp.1`, d, 2 * d);
      putV(`dec.${l}.mlp.1b`, 2 * d);
      put(`dec.${l}.mlp.2`, 2 * d, d);
      putV(`dec.${l}.mlp.2b`, d);
    }
    put("dec.out", d, v);
    putV("dec.out.b", v);
  }

  private mat(label: string): Float64Array {
    const m = this.w.get(label);
    if (!m) throw new Error(`missing weight ${label}`);
    return m;
  }

  /** Encode content frames into memory states, zero-padded to padToFrames.
   * Padding rows pass through the same layers as content (a fixed-size
   * input window is part of the contract), so the decoder can attend to
   * them like a real padded model would. */
  encode(contentFeatures: Float64Array[], padToFrames?: number): { memory: Float64Array[]; contentLen: number } {
    const spec = this.spec;
    const d = spec.dModel;
    const pad = padToFrames ?? spec.padToFrames;
    if (contentFeatures.length > pad) {
      throw new Error(`${contentFeatures.length} content frames exceed the ${pad}-frame window`);
    }
    const states: Float64Array[] = [];
    const pe = new Float64Array(d);
    const inW = this.mat("enc.in");
    const inB = this.mat("enc.in.b");
    for (let n = 0; n < pad; n++) {
      const x = new Float64Array(d);
      if (n < contentFeatures.length) {
        vecMat(contentFeatures[n], inW, FRONTEND_DIM, d, x);
      }
      for (let j = 0; j < d; j++) x[j] += inB[j];
      sinusoidalPe(n, d, pe);
      for (let j = 0; j < d; j++) x[j] += 0.1 * pe[j];
      states.push(x);
    }
    const tmp = new Float64Array(d);
    const hidden = new Float64Array(2 * d);
    for (let l = 0; l < spec.encLayers; l++) {
      const wm1 = this.mat(`enc.${l}.conv.m1`);
      const w0 = this.mat(`enc.${l}.conv.0`);
      const wp1 = this.mat(`enc.${l}.conv.p1`);
      const cb = this.mat(`enc.${l}.conv.b`);
      const mixed: Float64Array[] = [];
      for (let n = 0; n < pad; n++) {
        const acc = new Float64Array(d);
        for (const [off, wk] of [[-1, wm1], [0, w0], [1, wp1]] as [number, Float64Array][]) {
          const src = n + off;
          if (src < 0 || src >= pad) continue;
          vecMat(states[src], wk, d, d, tmp);
          for (let j = 0; j < d; j++) acc[j] += tmp[j];
        }
        for (let j = 0; j < d; j++) acc[j] = states[n][j] + gelu(acc[j] + cb[j]);
        layerNorm(acc);
        mixed.push(acc);
      }
      const m1 = this.mat(`enc.${l}.mlp.1`);
      const m1b = this.mat(`enc.${l}.mlp.1b`);
      const m2 = this.mat(`enc.${l}.mlp.2`);
      const m2b = this.mat(`enc.${l}.mlp.2b`);
      for (let n = 0; n < pad; n++) {
        vecMat(mixed[n], m1, d, 2 * d, hidden);
        for (let j = 0; j < 2 * d; j++) hidden[j] = gelu(hidden[j] + m1b[j]);
        vecMat(hidden, m2, 2 * d, d, tmp);
        for (let j = 0; j < d; j++) mixed[n][j] += tmp[j] + m2b[j];
        layerNorm(mixed[n]);
        states[n] = mixed[n];
      }
    }
    return { memory: states, contentLen: contentFeatures.length };
  }

  /** Precompute each decoder layer's cross-attention keys and values. */
  prepareWindow(memory: Float64Array[], contentLen: number): PreparedWindow {
    const spec = this.spec;
    const d = spec.dModel;
    const crossK: Float64Array[][] = [];
    const crossV: Float64Array[][] = [];
    for (let l = 0; l < spec.decLayers; l++) {
      const ck = this.mat(`dec.${l}.cross.k`);
      const cv = this.mat(`dec.${l}.cross.v`);
      const ks: Float64Array[] = [];
      const vs: Float64Array[] = [];
      for (let n = 0; n < memory.length; n++) {
        const kk = new Float64Array(d);
        const vv = new Float64Array(d);
        vecMat(memory[n], ck, d, d, kk);
        vecMat(memory[n], cv, d, d, vv);
        ks.push(kk);
        vs.push(vv);
      }
      crossK.push(ks);
      crossV.push(vs);
    }
    return { memory, contentLen, crossK, crossV };
  }

  /** One greedy decode step conditioned on contextIds, capturing the
   * alignment heads' cross-attention rows for the generated position. */
  decodeStep(window: PreparedWindow, contextIds: number[]): DecodeOutput {
    const spec = this.spec;
    const d = spec.dModel;
    const heads = spec.heads;
    const dh = spec.dHead;
    const nFrames = window.memory.length;
    const embed = this.mat("dec.embed");
    const pe = new Float64Array(d);

    // decoder input: BOS followed by the context tokens
    const seq: Float64Array[] = [];
    const bos = this.mat("dec.bos");
    for (let t = 0; t <= contextIds.length; t++) {
      const x = new Float64Array(d);
      if (t === 0) {
        x.set(bos);
      } else {
        const id = contextIds[t - 1];
        if (id < 0 || id >= spec.vocab.length) {
          throw new Error(`context token id ${id} outside the vocabulary`);
        }
        for (let j = 0; j < d; j++) x[j] = embed[id * d + j];
      }
      sinusoidalPe(t, d, pe);
      for (let j = 0; j < d; j++) x[j] += 0.1 * pe[j];
      seq.push(x);
    }
    const T = seq.length;
    const wanted = new Map<string, number>();
    spec.alignmentHeads.forEach(([l, h], idx) => wanted.set(`${l}.${h}`, idx));
    const captured: Float64Array[] = spec.alignmentHeads.map(() => new Float64Array(nFrames));

    const q = new Float64Array(d);
    const attended = new Float64Array(d);
    const tmp = new Float64Array(d);
    const hidden = new Float64Array(2 * d);

    for (let l = 0; l < spec.decLayers; l++) {
      // causal self-attention
      const sq = this.mat(`dec.${l}.self.q`);
      const sk = this.mat(`dec.${l}.self.k`);
      const sv = this.mat(`dec.${l}.self.v`);
      const so = this.mat(`dec.${l}.self.o`);
      const keys: Float64Array[] = [];
      const vals: Float64Array[] = [];
      for (let t = 0; t < T; t++) {
        const kk = new Float64Array(d);
        const vv = new Float64Array(d);
        vecMat(seq[t], sk, d, d, kk);
        vecMat(seq[t], sv, d, d, vv);
        keys.push(kk);
        vals.push(vv);
      }
      const selfOut: Float64Array[] = [];
      for (let t = 0; t < T; t++) {
        vecMat(seq[t], sq, d, d, q);
        attended.fill(0);
        for (let h = 0; h < heads; h++) {
          const base = h * dh;
          const scores = new Float64Array(t + 1);
          let maxScore = -Infinity;
          for (let s = 0; s <= t; s++) {
            let dot = 0;
            for (let j = 0; j < dh; j++) dot += q[base + j] * keys[s][base + j];
            scores[s] = dot / Math.sqrt(dh);
            if (scores[s] > maxScore) maxScore = scores[s];
          }
          let z = 0;
          for (let s = 0; s <= t; s++) {
            scores[s] = Math.exp(scores[s] - maxScore);
            z += scores[s];
          }
          for (let s = 0; s <= t; s++) {
            const wgt = scores[s] / z;
            for (let j = 0; j < dh; j++) attended[base + j] += wgt * vals[s][base + j];
          }
        }
        vecMat(attended, so, d, d, tmp);
        const out = new Float64Array(d);
        for (let j = 0; j < d; j++) out[j] = seq[t][j] + tmp[j];
        layerNorm(out);
        selfOut.push(out);
      }

      // cross-attention over the encoder memory
      const cq = this.mat(`dec.${l}.cross.q`);
      const co = this.mat(`dec.${l}.cross.o`);
      const memK = window.crossK[l];
      const memV = window.crossV[l];
      for (let t = 0; t < T; t++) {
        vecMat(selfOut[t], cq, d, d, q);
        attended.fill(0);
        for (let h = 0; h < heads; h++) {
          const base = h * dh;
          const scores = new Float64Array(nFrames);
          let maxScore = -Infinity;
          for (let n = 0; n < nFrames; n++) {
            let dot = 0;
            for (let j = 0; j < dh; j++) dot += q[base + j] * memK[n][base + j];
            scores[n] = dot / Math.sqrt(dh);
            if (scores[n] > maxScore) maxScore = scores[n];
          }
          let z = 0;
          for (let n = 0; n < nFrames; n++) {
            scores[n] = Math.exp(scores[n] - maxScore);
            z += scores[n];
          }
          const capture = t === T - 1 ? wanted.get(`${l}.${h}`) : undefined;
          for (let n = 0; n < nFrames; n++) {
            const wgt = scores[n] / z;
            if (capture !== undefined) captured[capture][n] = wgt;
            for (let j = 0; j < dh; j++) attended[base + j] += wgt * memV[n][base + j];
          }
        }
        vecMat(attended, co, d, d, tmp);
        for (let j = 0; j < d; j++) selfOut[t][j] += tmp[j];
        layerNorm(selfOut[t]);
      }

      const m1 = this.mat(`dec.${l}.mlp.1`);
      const m1b = this.mat(`dec.${l}.mlp.1b`);
      const m2 = this.mat(`dec.${l}.mlp.2`);
      const m2b = this.mat(`dec.${l}.mlp.2b`);
      for (let t = 0; t < T; t++) {
        vecMat(selfOut[t], m1, d, 2 * d, hidden);
        for (let j = 0; j < 2 * d; j++) hidden[j] = gelu(hidden[j] + m1b[j]);
        vecMat(hidden, m2, 2 * d, d, tmp);
        for (let j = 0; j < d; j++) selfOut[t][j] += tmp[j] + m2b[j];
        layerNorm(selfOut[t]);
        seq[t] = selfOut[t];
      }
    }

    const outW = this.mat("dec.out");
    const outB = this.mat("dec.out.b");
    const logits = new Float64Array(spec.vocab.length);
    vecMat(seq[T - 1], outW, d, spec.vocab.length, logits);
    let best = 0;
    for (let i = 0; i < logits.length; i++) {
      logits[i] += outB[i];
      if (logits[i] > logits[best]) best = i;
    }
    return { tokenId: best, isEos: best === spec.eosId, headRows: captured };
  }
}
