/**
 * Embeddings CSV writer matching the probing harness's reader: header
 * `id,f0,...,f{d-1}`, one row per specimen, floats serialized with
 * JavaScript's shortest round-trip formatting (readable bit for bit by
 * any IEEE-754 parser).
 */

import { writeFileSync } from "node:fs";

export function embeddingsCsv(ids: string[], vectors: Float64Array[]): string {
  if (ids.length !== vectors.length) {
    throw new Error(`${ids.length} ids for ${vectors.length} vectors`);
  }
  if (vectors.length === 0) {
    throw new Error("no rows to write");
  }
  const dim = vectors[0].length;
  const header = "id," + Array.from({ length: dim }, (_, j) => `f${j}`).join(",");
  const lines = [header];
  for (let i = 0; i < ids.length; i++) {
    if (vectors[i].length !== dim) {
      throw new Error(`row '${ids[i]}' has ${vectors[i].length} values; expected ${dim}`);
    }
    lines.push(ids[i] + "," + Array.from(vectors[i], String).join(","));
  }
  return lines.join("\n") + "\n";
}

export function writeEmbeddingsCsv(path: string, ids: string[], vectors: Float64Array[]): void {
  writeFileSync(path, embeddingsCsv(ids, vectors), "utf-8");
}
