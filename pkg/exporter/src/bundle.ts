/**
 * Runs an encoder suite over a manifest and writes a dataset-bundle
 * directory: manifest.jsonl, tasks.json, and the six tensor files. The
 * directory is staged under a temporary name and renamed in, so a failed
 * export never leaves a partial dataset.
 */

import { mkdtempSync, readFileSync, renameSync, rmSync, writeFileSync } from "node:fs";
import { dirname, join, resolve } from "node:path";

import type { EncoderSuite } from "./encoders.js";
import type { ManifestRecord, TaskSpec } from "./manifest.js";
import { packFloat64, packUint8 } from "./tensors.js";

export interface ExportResult {
  directory: string;
  exported: string[];
  skipped: { id: string; reason: string }[];
}

interface EncodedSample {
  record: ManifestRecord;
  jointTxt: Float64Array;
  jointImg: Float64Array;
  tokens: Float64Array;
  regions: Float64Array;
  toxicity: Float64Array;
  sentiment: number;
}

function encodeSample(record: ManifestRecord, encoder: EncoderSuite): EncodedSample {
  const image = readFileSync(record.imagePath);
  return {
    record,
    jointTxt: encoder.jointText(record.text),
    jointImg: encoder.jointImage(image),
    tokens: encoder.tokenFeatures(record.text),
    regions: encoder.regionFeatures(image),
    toxicity: encoder.toxicity(record.text),
    sentiment: encoder.sentimentCode(record.text),
  };
}

function concatRows(samples: Float64Array[], rowLength: number): Float64Array {
  const out = new Float64Array(samples.length * rowLength);
  samples.forEach((row, i) => {
    if (row.length !== rowLength) {
      throw new Error(`encoder emitted ${row.length} values where ${rowLength} were declared`);
    }
    out.set(row, i * rowLength);
  });
  return out;
}

function manifestLine(record: ManifestRecord, tasks: TaskSpec[]): string {
  const labels: Record<string, number | null> = {};
  for (const task of tasks) {
    labels[task.name] = record.labels?.[task.name] ?? null;
  }
  return JSON.stringify({ id: record.id, raw_text: record.text, labels });
}

export function exportBundle(
  records: ManifestRecord[],
  tasks: TaskSpec[],
  encoder: EncoderSuite,
  outDir: string,
  log: (line: string) => void = console.error,
): ExportResult {
  const encoded: EncodedSample[] = [];
  const skipped: { id: string; reason: string }[] = [];
  for (const record of records) {
    try {
      encoded.push(encodeSample(record, encoder));
    } catch (err) {
      const reason = err instanceof Error ? err.message : String(err);
      skipped.push({ id: record.id, reason });
      log(`skip ${record.id}: ${reason}`);
    }
  }
  if (!encoded.length) {
    throw new Error("no samples could be encoded; refusing to write an empty bundle");
  }

  const n = encoded.length;
  const target = resolve(outDir);
  const staging = mkdtempSync(join(dirname(target), ".export-"));
  try {
    const lines = encoded.map((s) => manifestLine(s.record, tasks)).join("\n") + "\n";
    writeFileSync(join(staging, "manifest.jsonl"), lines, "utf-8");
    const taskJson = tasks.map((t) => ({ name: t.name, class_count: t.classCount }));
    writeFileSync(join(staging, "tasks.json"), JSON.stringify(taskJson) + "\n", "utf-8");

    writeFileSync(join(staging, "joint_txt.bin"), packFloat64(
      [n, encoder.jointWidth], concatRows(encoded.map((s) => s.jointTxt), encoder.jointWidth)));
    writeFileSync(join(staging, "joint_img.bin"), packFloat64(
      [n, encoder.jointWidth], concatRows(encoded.map((s) => s.jointImg), encoder.jointWidth)));
    writeFileSync(join(staging, "token_feats.bin"), packFloat64(
      [n, encoder.maxTokens, encoder.tokenWidth],
      concatRows(encoded.map((s) => s.tokens), encoder.maxTokens * encoder.tokenWidth)));
    writeFileSync(join(staging, "region_feats.bin"), packFloat64(
      [n, encoder.regionCount, encoder.regionWidth],
      concatRows(encoded.map((s) => s.regions), encoder.regionCount * encoder.regionWidth)));
    writeFileSync(join(staging, "toxicity.bin"), packFloat64(
      [n, encoder.toxicityWidth], concatRows(encoded.map((s) => s.toxicity), encoder.toxicityWidth)));
    writeFileSync(join(staging, "sentiment.bin"), packUint8(
      [n], Uint8Array.from(encoded.map((s) => s.sentiment))));

    renameSync(staging, target);
  } catch (err) {
    rmSync(staging, { recursive: true, force: true });
    throw err;
  }
  return { directory: target, exported: encoded.map((s) => s.record.id), skipped };
}
