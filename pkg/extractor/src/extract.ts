/**
 * Extraction pipeline: walk a captions CSV (header id,text,category,
 * subcategory), resolve each id to exactly one file in the image
 * directory, run both encoders in batches, and emit the manifest + blob
 * pair. Output is deterministic for fixed inputs and encoders.
 */

import { promises as fs } from "fs";
import * as path from "path";
import Papa from "papaparse";

import { Encoder } from "./encoders.js";
import { EmbeddedRecord, writeDataset } from "./format.js";

export interface ExtractionJob {
  imageDir: string;
  captionsCsv: string;
  outManifest: string;
  outBlob: string;
  imageEncoder: Encoder;
  textEncoder: Encoder;
  batchSize?: number;
  /** skip logs unreadable images and continues; abort throws. */
  onUnreadable?: "abort" | "skip";
  /** optional second text column appended to the cover text. */
  includeInsideText?: boolean;
}

export interface CaptionRow {
  id: string;
  text: string;
  category: string;
  subcategory: string;
  inside_text?: string;
}

export interface ExtractionSummary {
  written: number;
  skipped: string[];
  dimImage: number;
  dimText: number;
}

export function parseCaptions(csv: string): CaptionRow[] {
  const parsed = Papa.parse<CaptionRow>(csv.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length) {
    const e = parsed.errors[0];
    throw new Error(`captions CSV: ${e.message} (row ${e.row})`);
  }
  const rows = parsed.data;
  const required = ["id", "text", "category", "subcategory"];
  const fields = parsed.meta.fields ?? [];
  for (const col of required) {
    if (!fields.includes(col)) throw new Error(`captions CSV: missing column ${col}`);
  }
  const seen = new Set<string>();
  for (const row of rows) {
    if (seen.has(row.id)) throw new Error(`captions CSV: duplicate id ${row.id}`);
    seen.add(row.id);
    if (!row.category || !row.subcategory) {
      throw new Error(`captions CSV: row ${row.id} has an empty label`);
    }
  }
  return rows;
}

/** Map ids to files whose basename (sans extension) equals the id. */
export async function resolveImages(
  imageDir: string,
  ids: string[],
): Promise<Map<string, string>> {
  const files = await fs.readdir(imageDir);
  const byStem = new Map<string, string[]>();
  for (const f of files) {
    const stem = path.parse(f).name;
    const list = byStem.get(stem) ?? [];
    list.push(f);
    byStem.set(stem, list);
  }
  const out = new Map<string, string>();
  for (const id of ids) {
    const matches = byStem.get(id) ?? [];
    if (matches.length !== 1) {
      throw new Error(
        `id ${id} resolves to ${matches.length} files in ${imageDir}; expected exactly one`,
      );
    }
    out.set(id, path.join(imageDir, matches[0]));
  }
  return out;
}

async function mapBatched<T, R>(
  items: T[],
  batchSize: number,
  run: (chunk: T[]) => Promise<R[]>,
): Promise<R[]> {
  const out: R[] = [];
  for (let i = 0; i < items.length; i += batchSize) {
    out.push(...(await run(items.slice(i, i + batchSize))));
  }
  return out;
}

export async function extract(job: ExtractionJob): Promise<ExtractionSummary> {
  const batchSize = job.batchSize ?? 16;
  const onUnreadable = job.onUnreadable ?? "abort";
  const rows = parseCaptions(await fs.readFile(job.captionsCsv, "utf-8"));
  const skipped: string[] = [];

  let usable: { row: CaptionRow; bytes: Buffer }[] = [];
  if (rows.length) {
    const paths = await resolveImages(
      job.imageDir,
      rows.map((r) => r.id),
    );
    for (const row of rows) {
      try {
        usable.push({ row, bytes: await fs.readFile(paths.get(row.id)!) });
      } catch (e) {
        if (onUnreadable === "abort") {
          throw new Error(`unreadable image for id ${row.id}: ${(e as Error).message}`);
        }
        console.error(`skipping ${row.id}: ${(e as Error).message}`);
        skipped.push(row.id);
      }
    }
  }

  const imageVecs = await mapBatched(usable, batchSize, (chunk) =>
    job.imageEncoder.encodeBatch(chunk.map((u) => u.bytes)),
  );
  const texts = usable.map((u) =>
    job.includeInsideText && u.row.inside_text
      ? `${u.row.text} ${u.row.inside_text}`
      : u.row.text,
  );
  const textVecs = await mapBatched(texts, batchSize, (chunk) =>
    job.textEncoder.encodeBatch(chunk),
  );

  const dimImage = job.imageEncoder.dim;
  const dimText = job.textEncoder.dim;
  const records: EmbeddedRecord[] = usable.map((u, i) => {
    if (imageVecs[i].length !== dimImage || textVecs[i].length !== dimText) {
      throw new Error(
        `id ${u.row.id}: encoder returned dims ${imageVecs[i].length}/${textVecs[i].length}, ` +
          `expected ${dimImage}/${dimText}`,
      );
    }
    return {
      id: u.row.id,
      category: u.row.category,
      subcategory: u.row.subcategory,
      split: "train",
      imageVec: imageVecs[i],
      textVec: textVecs[i],
    };
  });

  await writeDataset(records, dimImage, dimText, job.outManifest, job.outBlob);
  return { written: records.length, skipped, dimImage, dimText };
}
