/**
 * Export a dataset bundle from a manifest of image/text samples:
 *
 *   node dist/cli.js --manifest toy/manifest.jsonl --out data/toy
 *
 * After writing, the bundle is validated by the consumer's own loader
 * (`python -m mmorient.cli build-graphs`); pass --no-validate when the
 * Python package is not installed.
 */

import { existsSync, rmSync } from "node:fs";
import { spawnSync } from "node:child_process";
import { pathToFileURL } from "node:url";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { exportBundle } from "./bundle.js";
import { getEncoder } from "./encoders.js";
import { DEFAULT_TASKS, loadManifest, parseTaskList } from "./manifest.js";

export function validateWithConsumer(directory: string, python: string): void {
  const result = spawnSync(python, ["-m", "mmorient.cli", "build-graphs", "--dataset", directory],
                           { encoding: "utf-8" });
  if (result.error) {
    throw new Error(`could not run ${python}: ${result.error.message}`);
  }
  if (result.status !== 0) {
    throw new Error(`bundle failed consumer validation:\n${result.stderr}`);
  }
}

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .option("manifest", { type: "string", demandOption: true, describe: "JSONL manifest of samples" })
    .option("out", { type: "string", demandOption: true, describe: "bundle directory to write" })
    .option("encoder", { type: "string", default: "hash", describe: "encoder suite name" })
    .option("tasks", { type: "string", describe: "name:classes,... (default five-task suite)" })
    .option("force", { type: "boolean", default: false, describe: "overwrite an existing bundle" })
    .option("validate", { type: "boolean", default: true, describe: "run the consumer's loader on the result" })
    .option("python", { type: "string", default: "python3", describe: "interpreter for --validate" })
    .strict()
    .fail((msg) => { throw new Error(msg); })
    .parse();

  const encoder = getEncoder(args.encoder);
  const tasks = args.tasks ? parseTaskList(args.tasks) : DEFAULT_TASKS;
  const records = loadManifest(args.manifest, tasks);
  if (existsSync(args.out)) {
    if (!args.force) throw new Error(`refusing to overwrite existing dataset at ${args.out}`);
    rmSync(args.out, { recursive: true });
  }
  const result = exportBundle(records, tasks, encoder, args.out);
  if (args.validate) {
    validateWithConsumer(result.directory, args.python);
  }
  console.log(`dataset ${result.directory}`);
  console.log(`encoder ${encoder.name} v${encoder.version} ` +
    `joint=${encoder.jointWidth} token=${encoder.maxTokens}x${encoder.tokenWidth} ` +
    `region=${encoder.regionCount}x${encoder.regionWidth} toxicity=${encoder.toxicityWidth}`);
  console.log(`exported ${result.exported.length} skipped ${result.skipped.length}` +
    (args.validate ? " validated" : ""));
  return 0;
}

const invokedDirectly = process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  main(hideBin(process.argv)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(`error: ${err instanceof Error ? err.message : err}`);
      process.exit(2);
    },
  );
}
