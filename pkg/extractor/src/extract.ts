/**
 * The extraction pipeline: manifest in, embeddings CSV plus metadata
 * sidecar out. One 768-dim vector per manifest id, pooled from the
 * backend's token matrix according to the encoder's pooling rule.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { DeterministicStubBackend, poolTokens, type TokenBackend } from "./backend.js";
import { encoderByKey } from "./encoders.js";
import { embeddingsCsv } from "./csv.js";
import { loadManifest, resolveImagePath } from "./manifest.js";

export interface ExtractOptions {
  manifestPath: string;
  encoderKey: string;
  outPath: string;
  /** accepted for CLI compatibility; the stub backend ignores it */
  device?: string;
  backend?: TokenBackend;
}

export interface ExtractResult {
  ids: string[];
  outPath: string;
  metadataPath: string;
}

export function metadataPathFor(outPath: string): string {
  return outPath + ".meta.json";
}

export function extractEmbeddings(options: ExtractOptions): ExtractResult {
  const encoder = encoderByKey(options.encoderKey);
  const backend = options.backend ?? new DeterministicStubBackend();
  const records = loadManifest(options.manifestPath);
  if (records.length === 0) {
    throw new Error(`${options.manifestPath} has no records`);
  }

  const ids: string[] = [];
  const vectors: Float64Array[] = [];
  for (const record of records) {
    const imagePath = resolveImagePath(options.manifestPath, record);
    let bytes: Buffer;
    try {
      bytes = readFileSync(imagePath);
    } catch (err) {
      throw new Error(`cannot read image for id '${record.id}' at ${imagePath}: ${String(err)}`);
    }
    const embedding = poolTokens(encoder, backend.tokensFor(encoder, bytes));
    ids.push(record.id);
    vectors.push(embedding);
  }

  writeFileSync(options.outPath, embeddingsCsv(ids, vectors), "utf-8");
  const metadataPath = metadataPathFor(options.outPath);
  const metadata = {
    encoder: encoder.key,
    checkpoint: encoder.checkpoint,
    dim: encoder.dim,
    pooling: encoder.pooling,
    preprocessing: encoder.preprocessing,
    backend: backend.name,
    device: options.device ?? "cpu",
    n_rows: ids.length,
  };
  writeFileSync(metadataPath, JSON.stringify(metadata, null, 2) + "\n", "utf-8");
  return { ids, outPath: options.outPath, metadataPath };
}
