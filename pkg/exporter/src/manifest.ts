/**
 * Export manifest: one JSONL record per sample with the sample id, the image
 * path (relative paths resolve against the manifest's directory), the raw
 * text, and optional per-task labels.
 */

import { readFileSync } from "node:fs";
import { dirname, isAbsolute, resolve } from "node:path";
import { z } from "zod";

const recordSchema = z.object({
  id: z.string().min(1),
  image: z.string().min(1),
  text: z.string(),
  labels: z.record(z.string(), z.number().int().nullable()).optional(),
});

export type ManifestRecord = z.infer<typeof recordSchema> & { imagePath: string };

export interface TaskSpec {
  name: string;
  classCount: number;
}

export const DEFAULT_TASKS: TaskSpec[] = [
  { name: "sentiment", classCount: 3 },
  { name: "humor", classCount: 4 },
  { name: "sarcasm", classCount: 4 },
  { name: "offensiveness", classCount: 4 },
  { name: "motivational", classCount: 2 },
];

export function parseTaskList(spec: string): TaskSpec[] {
  const tasks: TaskSpec[] = [];
  for (const part of spec.split(",")) {
    const trimmed = part.trim();
    if (!trimmed) continue;
    const [name, count] = trimmed.split(":");
    const classCount = Number(count);
    if (!name || !Number.isInteger(classCount) || classCount < 2) {
      throw new Error(`bad task spec '${trimmed}', expected name:classes with classes >= 2`);
    }
    tasks.push({ name, classCount });
  }
  if (!tasks.length) throw new Error("no tasks given");
  return tasks;
}

export function loadManifest(path: string, tasks: TaskSpec[]): ManifestRecord[] {
  const base = dirname(resolve(path));
  const byName = new Map(tasks.map((t) => [t.name, t.classCount]));
  const records: ManifestRecord[] = [];
  const seen = new Set<string>();
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, i) => {
    if (!line.trim()) return;
    let parsed;
    try {
      parsed = recordSchema.parse(JSON.parse(line));
    } catch (err) {
      throw new Error(`${path}:${i + 1}: ${err instanceof Error ? err.message : err}`);
    }
    if (seen.has(parsed.id)) {
      throw new Error(`${path}:${i + 1}: duplicate sample id '${parsed.id}'`);
    }
    seen.add(parsed.id);
    for (const [task, value] of Object.entries(parsed.labels ?? {})) {
      const classCount = byName.get(task);
      if (classCount === undefined) {
        throw new Error(`${path}:${i + 1}: unknown task '${task}'`);
      }
      if (value !== null && (value < 0 || value >= classCount)) {
        throw new Error(
          `${path}:${i + 1}: label ${value} out of range for task '${task}' (${classCount} classes)`);
    }
    }
    const imagePath = isAbsolute(parsed.image) ? parsed.image : resolve(base, parsed.image);
    records.push({ ...parsed, imagePath });
  });
  if (!records.length) throw new Error(`${path}: manifest holds no samples`);
  return records;
}
