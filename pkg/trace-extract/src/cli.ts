#!/usr/bin/env node
/** trace-extract CLI.
 *
 *   init-checkpoint --seed N --out ck.json
 *   gen-audio       --seed N --duration S --out x.wav
 *   extract         --checkpoint ck.json --out t.bin [options] AUDIO.wav
 *   extract         --checkpoint ck.json --out-dir D [options] A.wav B.wav ...
 */

import { mkdirSync } from "fs";
import { basename, join } from "path";
import { generateAudio } from "./audiogen.js";
import { extract } from "./extract.js";
import { defaultCheckpoint, loadCheckpoint, saveCheckpoint } from "./model.js";

interface Flags {
  values: Map<string, string>;
  positional: string[];
}

function parseFlags(argv: string[]): Flags {
  const values = new Map<string, string>();
  const positional: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith("--")) {
      const key = arg.slice(2);
      const next = argv[i + 1];
      if (next === undefined || next.startsWith("--")) {
        values.set(key, "true");
      } else {
        values.set(key, next);
        i++;
      }
    } else {
      positional.push(arg);
    }
  }
  return { values, positional };
}

function need(flags: Flags, key: string): string {
  const v = flags.values.get(key);
  if (v === undefined) throw new Error(`missing required flag --${key}`);
  return v;
}

function num(flags: Flags, key: string, fallback: number): number {
  const v = flags.values.get(key);
  if (v === undefined) return fallback;
  const parsed = Number(v);
  if (!Number.isFinite(parsed)) throw new Error(`--${key} expects a number, got ${v}`);
  return parsed;
}

function cmdInitCheckpoint(flags: Flags): void {
  const seed = num(flags, "seed", 0);
  const out = need(flags, "out");
  const spec = defaultCheckpoint(seed, flags.values.get("name"));
  saveCheckpoint(spec, out);
  console.log(`wrote checkpoint: ${out} (seed ${seed}, ${spec.vocab.length}-token vocabulary)`);
}

function cmdGenAudio(flags: Flags): void {
  const seed = num(flags, "seed", 0);
  const duration = num(flags, "duration", 4);
  const out = need(flags, "out");
  generateAudio(out, seed, duration);
  console.log(`wrote audio: ${out} (${duration}s, seed ${seed})`);
}

function cmdExtract(flags: Flags): void {
  const checkpoint = loadCheckpoint(need(flags, "checkpoint"));
  const audios = flags.positional;
  if (audios.length === 0) throw new Error("give at least one audio file");
  const outDir = flags.values.get("out-dir");
  const out = flags.values.get("out");
  if (!outDir && !out) throw new Error("give --out (single file) or --out-dir");
  if (out && audios.length > 1) {
    throw new Error("--out works with exactly one audio file; use --out-dir for batches");
  }
  if (outDir) mkdirSync(outDir, { recursive: true });
  for (const audio of audios) {
    const outPath = out ?? join(outDir!, basename(audio).replace(/\.[^.]+$/, "") + ".trace.bin");
    const summary = extract({
      checkpoint,
      audioPath: audio,
      outPath,
      chunkLenMs: Math.round(num(flags, "chunk-len", 1.0) * 1000),
      maxContextMs: Math.round(num(flags, "max-context", 4.0) * 1000),
      maxTokensPerChunk: num(flags, "max-tokens", 12),
    });
    console.log(
      `wrote trace: ${summary.outPath} (${summary.durationMs} ms, ` +
        `${summary.chunkRecords} records, ${summary.tokens.length} tokens)`,
    );
  }
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  const flags = parseFlags(rest);
  try {
    switch (command) {
      case "init-checkpoint":
        cmdInitCheckpoint(flags);
        return 0;
      case "gen-audio":
        cmdGenAudio(flags);
        return 0;
      case "extract":
        cmdExtract(flags);
        return 0;
      default:
        console.error(
          "usage: trace-extract <init-checkpoint|gen-audio|extract> [flags] [audio...]",
        );
        return 2;
    }
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
