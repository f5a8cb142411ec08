/**
 * Specimen manifest reader. The file format is owned by the probing
 * harness: a CSV with header `id,label,image_path,pair_id`, where
 * label is one of eye-clean, moderate, heavy. This adapter only needs
 * ids and image paths but validates the full header so a wrong file
 * fails immediately.
 */

import { readFileSync } from "node:fs";
import path from "node:path";

export interface ManifestRecord {
  id: string;
  label: string;
  imagePath: string;
  pairId: string;
}

const HEADER = ["id", "label", "image_path", "pair_id"];
const LABELS = new Set(["eye-clean", "moderate", "heavy"]);

export function parseManifest(text: string, origin = "manifest"): ManifestRecord[] {
  const lines = text.split(/\r?\n/).filter((line) => line.trim().length > 0);
  if (lines.length === 0) {
    throw new Error(`${origin} is empty`);
  }
  const header = lines[0].split(",").map((cell) => cell.trim());
  if (header.length !== HEADER.length || HEADER.some((name, i) => header[i] !== name)) {
    throw new Error(`${origin}: header must be '${HEADER.join(",")}', got '${lines[0]}'`);
  }
  const records: ManifestRecord[] = [];
  const seen = new Set<string>();
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i].split(",").map((cell) => cell.trim());
    if (cells.length !== HEADER.length) {
      throw new Error(`${origin} line ${i + 1}: expected ${HEADER.length} fields, got ${cells.length}`);
    }
    const [id, label, imagePath, pairId] = cells;
    if (!id) {
      throw new Error(`${origin} line ${i + 1}: empty id`);
    }
    if (seen.has(id)) {
      throw new Error(`${origin} line ${i + 1}: duplicate id '${id}'`);
    }
    seen.add(id);
    if (!LABELS.has(label)) {
      throw new Error(`${origin} line ${i + 1}: unknown label '${label}'`);
    }
    records.push({ id, label, imagePath, pairId });
  }
  return records;
}

export function loadManifest(manifestPath: string): ManifestRecord[] {
  const text = readFileSync(manifestPath, "utf-8");
  return parseManifest(text, manifestPath);
}

/** Image paths are relative to the manifest's own directory. */
export function resolveImagePath(manifestPath: string, record: ManifestRecord): string {
  if (!record.imagePath) {
    throw new Error(`record '${record.id}' has no image_path`);
  }
  return path.resolve(path.dirname(manifestPath), record.imagePath);
}
