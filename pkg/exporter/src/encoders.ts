/**
 * Pluggable encoder suites. An encoder suite declares its output widths and
 * turns raw text/image bytes into the six tensor families of a bundle.
 *
 * The default suites are content-hash featurizers: every vector is a pure
 * function of the input bytes (SHA-256 in counter mode, mapped to [-1, 1)),
 * so re-running an export is byte-identical. They stand in for pretrained
 * encoders in offline environments; a real CLIP/BERT-style suite only needs
 * to implement this interface and declare its widths.
 */

import { createHash } from "node:crypto";

export interface EncoderSuite {
  name: string;
  version: string;
  jointWidth: number;
  tokenWidth: number;
  maxTokens: number;
  regionWidth: number;
  regionCount: number;
  toxicityWidth: number;
  jointText(text: string): Float64Array;
  jointImage(image: Buffer): Float64Array;
  tokenFeatures(text: string): Float64Array;   // maxTokens x tokenWidth, row-major
  regionFeatures(image: Buffer): Float64Array; // regionCount x regionWidth, row-major
  toxicity(text: string): Float64Array;
  sentimentCode(text: string): number;         // 0 very negative .. 4 very positive
}

function hashVector(seed: Buffer, tag: string, width: number): Float64Array {
  const out = new Float64Array(width);
  let block = Buffer.alloc(0);
  for (let i = 0; i < width; i++) {
    const offset = (i * 4) % 28;
    if (offset === 0) {
      const counter = Buffer.alloc(4);
      counter.writeUInt32LE(Math.floor((i * 4) / 28), 0);
      block = createHash("sha256").update(seed).update(tag).update(counter).digest();
    }
    // 4 hash bytes -> [-1, 1)
    out[i] = block.readUInt32LE(offset) / 2 ** 31 - 1.0;
  }
  return out;
}

const POSITIVE_WORDS = new Set(["good", "great", "love", "happy", "best", "nice", "win"]);
const NEGATIVE_WORDS = new Set(["bad", "hate", "awful", "worst", "sad", "angry", "lose"]);

function valenceCode(text: string): number {
  let score = 0;
  for (const token of text.toLowerCase().split(/\s+/)) {
    if (POSITIVE_WORDS.has(token)) score += 1;
    if (NEGATIVE_WORDS.has(token)) score -= 1;
  }
  if (score <= -2) return 0;
  if (score === -1) return 1;
  if (score === 1) return 3;
  if (score >= 2) return 4;
  return 2;
}

function makeHashSuite(
  name: string,
  dims: Pick<EncoderSuite, "jointWidth" | "tokenWidth" | "maxTokens" | "regionWidth" | "regionCount" | "toxicityWidth">,
): EncoderSuite {
  const version = "1";
  const textSeed = (text: string) =>
    createHash("sha256").update(`${name}/${version}/text\0`).update(text, "utf-8").digest();
  const imageSeed = (image: Buffer) =>
    createHash("sha256").update(`${name}/${version}/image\0`).update(image).digest();

  return {
    name,
    version,
    ...dims,
    jointText: (text) => hashVector(textSeed(text), "joint", dims.jointWidth),
    jointImage: (image) => hashVector(imageSeed(image), "joint", dims.jointWidth),
    tokenFeatures(text) {
      const out = new Float64Array(dims.maxTokens * dims.tokenWidth);
      const tokens = text.split(/\s+/).filter(Boolean).slice(0, dims.maxTokens);
      tokens.forEach((token, i) => {
        const row = hashVector(textSeed(token), `token${i}`, dims.tokenWidth);
        out.set(row, i * dims.tokenWidth);
      });
      return out; // rows past the last token stay zero (padding)
    },
    regionFeatures(image) {
      const out = new Float64Array(dims.regionCount * dims.regionWidth);
      const chunk = Math.max(1, Math.ceil(image.length / dims.regionCount));
      for (let i = 0; i < dims.regionCount; i++) {
        const slice = image.subarray(i * chunk, (i + 1) * chunk);
        if (!slice.length) break; // tiny images leave trailing zero regions
        out.set(hashVector(imageSeed(Buffer.from(slice)), `region${i}`, dims.regionWidth),
                i * dims.regionWidth);
      }
      return out;
    },
    toxicity: (text) => hashVector(textSeed(text), "tox", dims.toxicityWidth),
    sentimentCode: (text) => valenceCode(text),
  };
}

/** Full-scale widths matching the usual pretrained encoder stack. */
export const hashSuite = makeHashSuite("hash", {
  jointWidth: 512,
  tokenWidth: 768,
  maxTokens: 128,
  regionWidth: 2048,
  regionCount: 100,
  toxicityWidth: 768,
});

/** Desk-scale widths for quick experiments and tests. */
export const hashSmallSuite = makeHashSuite("hash-small", {
  jointWidth: 8,
  tokenWidth: 8,
  maxTokens: 6,
  regionWidth: 12,
  regionCount: 5,
  toxicityWidth: 8,
});

const SUITES: Record<string, EncoderSuite> = {
  [hashSuite.name]: hashSuite,
  [hashSmallSuite.name]: hashSmallSuite,
};

export function getEncoder(name: string): EncoderSuite {
  const suite = SUITES[name];
  if (!suite) {
    throw new Error(`unknown encoder '${name}' (available: ${Object.keys(SUITES).join(", ")})`);
  }
  return suite;
}
