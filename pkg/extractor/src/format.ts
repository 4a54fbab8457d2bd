/**
 * Dataset interchange format, byte-compatible with the cardfuse toolkit:
 * a JSON manifest plus a raw little-endian float32 blob where record i
 * occupies [offset_i, offset_i + 4*(dim_image+dim_text)), image vector
 * first, then text vector.
 */

import { promises as fs } from "fs";

export const FORMAT_VERSION = 1;

export interface ManifestRecord {
  id: string;
  category: string;
  subcategory: string;
  split: "train" | "test";
  offset: number;
}

export interface Manifest {
  format_version: number;
  dim_image: number;
  dim_text: number;
  records: ManifestRecord[];
}

export interface EmbeddedRecord {
  id: string;
  category: string;
  subcategory: string;
  split: "train" | "test";
  imageVec: Float32Array;
  textVec: Float32Array;
}

export function recordBytes(dimImage: number, dimText: number): number {
  return 4 * (dimImage + dimText);
}

/** Serialize records into manifest + blob buffers (contiguous offsets). */
export function encodeDataset(
  records: EmbeddedRecord[],
  dimImage: number,
  dimText: number,
): { manifest: Manifest; blob: Buffer } {
  const per = recordBytes(dimImage, dimText);
  const blob = Buffer.alloc(per * records.length);
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  const entries: ManifestRecord[] = [];

  records.forEach((rec, i) => {
    if (rec.imageVec.length !== dimImage || rec.textVec.length !== dimText) {
      throw new Error(
        `record ${rec.id}: vector dims ${rec.imageVec.length}/${rec.textVec.length} ` +
          `do not match declared ${dimImage}/${dimText}`,
      );
    }
    const offset = i * per;
    let pos = offset;
    for (const v of rec.imageVec) {
      view.setFloat32(pos, v, true);
      pos += 4;
    }
    for (const v of rec.textVec) {
      view.setFloat32(pos, v, true);
      pos += 4;
    }
    entries.push({
      id: rec.id,
      category: rec.category,
      subcategory: rec.subcategory,
      split: rec.split,
      offset,
    });
  });

  return {
    manifest: {
      format_version: FORMAT_VERSION,
      dim_image: dimImage,
      dim_text: dimText,
      records: entries,
    },
    blob,
  };
}

export async function writeDataset(
  records: EmbeddedRecord[],
  dimImage: number,
  dimText: number,
  manifestPath: string,
  blobPath: string,
): Promise<void> {
  const { manifest, blob } = encodeDataset(records, dimImage, dimText);
  await fs.writeFile(manifestPath, JSON.stringify(manifest, null, 2) + "\n", "utf-8");
  await fs.writeFile(blobPath, blob);
}

export function decodeRecordVectors(
  blob: Buffer,
  manifest: Manifest,
  index: number,
): { imageVec: Float32Array; textVec: Float32Array } {
  const entry = manifest.records[index];
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  const read = (start: number, dim: number) => {
    const out = new Float32Array(dim);
    for (let i = 0; i < dim; i++) out[i] = view.getFloat32(start + 4 * i, true);
    return out;
  };
  return {
    imageVec: read(entry.offset, manifest.dim_image),
    textVec: read(entry.offset + 4 * manifest.dim_image, manifest.dim_text),
  };
}

/** Structural + content checks; returns every problem found, [] when clean. */
export async function validateDataset(
  manifestPath: string,
  blobPath: string,
): Promise<string[]> {
  const errors: string[] = [];
  let manifest: Manifest;
  try {
    manifest = JSON.parse(await fs.readFile(manifestPath, "utf-8")) as Manifest;
  } catch (e) {
    return [`manifest: ${(e as Error).message}`];
  }
  if (manifest.format_version !== FORMAT_VERSION) {
    errors.push(`manifest: unsupported format_version ${manifest.format_version}`);
  }
  for (const field of ["dim_image", "dim_text", "records"] as const) {
    if (manifest[field] === undefined) errors.push(`manifest: missing field ${field}`);
  }
  if (errors.length) return errors;

  const per = recordBytes(manifest.dim_image, manifest.dim_text);
  const blob = await fs.readFile(blobPath);
  if (blob.length !== per * manifest.records.length) {
    errors.push(
      `blob holds ${blob.length} bytes but manifest requires ${per * manifest.records.length}`,
    );
    return errors;
  }

  const seenIds = new Set<string>();
  const subcatOwner = new Map<string, string>();
  let prevOffset = -per;
  manifest.records.forEach((rec, i) => {
    if (seenIds.has(rec.id)) errors.push(`record ${rec.id}: duplicate id`);
    seenIds.add(rec.id);
    if (rec.split !== "train" && rec.split !== "test") {
      errors.push(`record ${rec.id}: invalid split ${rec.split}`);
    }
    const owner = subcatOwner.get(rec.subcategory);
    if (owner === undefined) subcatOwner.set(rec.subcategory, rec.category);
    else if (owner !== rec.category) {
      errors.push(`subcategory ${rec.subcategory} maps to both ${owner} and ${rec.category}`);
    }
    if (rec.offset < 0 || rec.offset + per > blob.length) {
      errors.push(`record ${rec.id}: offset ${rec.offset} out of bounds`);
    } else {
      if (rec.offset < prevOffset + per) {
        errors.push(`record ${rec.id}: offset ${rec.offset} overlaps or is not increasing`);
      }
      const { imageVec, textVec } = decodeRecordVectors(blob, manifest, i);
      const all = [imageVec, textVec];
      const names = ["image", "text"];
      all.forEach((vec, m) => {
        let norm = 0;
        for (let j = 0; j < vec.length; j++) {
          if (!Number.isFinite(vec[j])) {
            errors.push(`record ${rec.id}: non-finite value at index ${j} (${names[m]} vector)`);
            return;
          }
          norm += vec[j] * vec[j];
        }
        if (norm === 0) errors.push(`record ${rec.id}: ${names[m]} vector has zero norm`);
      });
    }
    prevOffset = rec.offset;
  });
  return errors;
}
