/** Seeded synthetic speech-like audio for exercising the extractor:
 * alternating voiced segments (harmonic stacks with varying pitch) and
 * short pauses, plus low-level noise. Deterministic per seed. */

import { mulberry32 } from "./prng.js";
import { writeWav } from "./wav.js";

export function generateAudio(path: string, seed: number, durationS: number, sampleRate = 16000): void {
  const rng = mulberry32(seed >>> 0);
  const n = Math.round(durationS * sampleRate);
  const samples = new Float64Array(n);
  let t = 0;
  while (t < n) {
    const voiced = rng() > 0.25;
    const segLen = Math.round((0.12 + rng() * 0.4) * sampleRate);
    if (voiced) {
      const f0 = 90 + rng() * 160;
      const harmonics = 2 + Math.floor(rng() * 4);
      const amp = 0.25 + rng() * 0.4;
      for (let i = 0; i < segLen && t + i < n; i++) {
        const time = (t + i) / sampleRate;
        let v = 0;
        for (let h = 1; h <= harmonics; h++) {
          v += Math.sin(2 * Math.PI * f0 * h * time) / h;
        }
        const envelope = Math.sin((Math.PI * i) / segLen);
        samples[t + i] = amp * envelope * v * 0.4 + (rng() - 0.5) * 0.02;
      }
    } else {
      for (let i = 0; i < segLen && t + i < n; i++) {
        samples[t + i] = (rng() - 0.5) * 0.01;
      }
    }
    t += segLen;
  }
  writeWav(path, sampleRate, samples);
}
