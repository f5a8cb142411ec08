/**
 * Command line entry point.
 *
 *   extract --manifest M --encoder KEY --out F [--device D]
 *
 * Writes the embeddings CSV to F and a metadata sidecar (encoder key,
 * checkpoint id, pooling, preprocessing, backend) to F.meta.json.
 */

import { ENCODERS } from "./encoders.js";
import { extractEmbeddings } from "./extract.js";

function usage(): string {
  const keys = ENCODERS.map((e) => e.key).join("|");
  return `usage: extract --manifest <file> --encoder <${keys}> --out <file> [--device <name>]`;
}

function parseArgs(argv: string[]): Map<string, string> {
  const options = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) {
      throw new Error(`unexpected argument '${arg}'\n${usage()}`);
    }
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new Error(`missing value for ${arg}\n${usage()}`);
    }
    options.set(arg.slice(2), value);
    i++;
  }
  return options;
}

export function main(argv: string[]): number {
  try {
    const [command, ...rest] = argv;
    if (command !== "extract") {
      throw new Error(`unknown command '${command ?? ""}'\n${usage()}`);
    }
    const options = parseArgs(rest);
    for (const required of ["manifest", "encoder", "out"]) {
      if (!options.has(required)) {
        throw new Error(`--${required} is required\n${usage()}`);
      }
    }
    for (const key of options.keys()) {
      if (!["manifest", "encoder", "out", "device"].includes(key)) {
        throw new Error(`unknown option --${key}\n${usage()}`);
      }
    }
    const result = extractEmbeddings({
      manifestPath: options.get("manifest")!,
      encoderKey: options.get("encoder")!,
      outPath: options.get("out")!,
      device: options.get("device"),
    });
    console.log(`wrote ${result.ids.length} embeddings to ${result.outPath}`);
    console.log(`wrote metadata to ${result.metadataPath}`);
    return 0;
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
