import { describe, expect, it } from "vitest";
import { promises as fs } from "fs";
import * as os from "os";
import * as path from "path";

import {
  EmbeddedRecord,
  decodeRecordVectors,
  encodeDataset,
  validateDataset,
  writeDataset,
} from "../src/format.js";

function sampleRecords(n = 3, dim = 4): EmbeddedRecord[] {
  return Array.from({ length: n }, (_, i) => ({
    id: `r${i}`,
    category: "c0",
    subcategory: "c0.s0",
    split: "train" as const,
    imageVec: Float32Array.from({ length: dim }, (_, j) => i + j * 0.25),
    textVec: Float32Array.from({ length: dim }, (_, j) => -i - j * 0.5 - 1),
  }));
}

async function tempDir() {
  return fs.mkdtemp(path.join(os.tmpdir(), "extractor-"));
}

describe("encodeDataset", () => {
  it("packs little-endian image-then-text with contiguous offsets", () => {
    const { manifest, blob } = encodeDataset(sampleRecords(), 4, 4);
    expect(manifest.records.map((r) => r.offset)).toEqual([0, 32, 64]);
    expect(blob.length).toBe(96);
    // image[0] of record 1 sits at byte 32
    expect(blob.readFloatLE(32)).toBeCloseTo(1.0, 6);
    const { imageVec, textVec } = decodeRecordVectors(blob, manifest, 2);
    expect(Array.from(imageVec)).toEqual([2, 2.25, 2.5, 2.75]);
    expect(textVec[0]).toBeCloseTo(-3, 6);
  });

  it("rejects dim mismatches", () => {
    const records = sampleRecords();
    records[1].textVec = new Float32Array(3);
    expect(() => encodeDataset(records, 4, 4)).toThrow(/r1/);
  });
});

describe("validateDataset", () => {
  it("accepts its own output", async () => {
    const dir = await tempDir();
    const manifest = path.join(dir, "m.json");
    const blob = path.join(dir, "b.f32");
    await writeDataset(sampleRecords(), 4, 4, manifest, blob);
    expect(await validateDataset(manifest, blob)).toEqual([]);
  });

  it("flags an injected NaN with the record id", async () => {
    const dir = await tempDir();
    const manifest = path.join(dir, "m.json");
    const blob = path.join(dir, "b.f32");
    await writeDataset(sampleRecords(), 4, 4, manifest, blob);
    const raw = await fs.readFile(blob);
    raw.writeFloatLE(Number.NaN, 32 + 8);
    await fs.writeFile(blob, raw);
    const errors = await validateDataset(manifest, blob);
    expect(errors.some((e) => e.includes("r1") && e.includes("non-finite"))).toBe(true);
  });

  it("flags permuted offsets", async () => {
    const dir = await tempDir();
    const manifest = path.join(dir, "m.json");
    const blob = path.join(dir, "b.f32");
    await writeDataset(sampleRecords(), 4, 4, manifest, blob);
    const doc = JSON.parse(await fs.readFile(manifest, "utf-8"));
    [doc.records[0].offset, doc.records[1].offset] = [
      doc.records[1].offset,
      doc.records[0].offset,
    ];
    await fs.writeFile(manifest, JSON.stringify(doc));
    const errors = await validateDataset(manifest, blob);
    expect(errors.some((e) => e.includes("not increasing"))).toBe(true);
  });

  it("flags truncated blobs", async () => {
    const dir = await tempDir();
    const manifest = path.join(dir, "m.json");
    const blob = path.join(dir, "b.f32");
    await writeDataset(sampleRecords(), 4, 4, manifest, blob);
    const raw = await fs.readFile(blob);
    await fs.writeFile(blob, raw.subarray(0, raw.length - 4));
    const errors = await validateDataset(manifest, blob);
    expect(errors.some((e) => e.includes("92 bytes") && e.includes("96"))).toBe(true);
  });

  it("flags duplicate ids", async () => {
    const dir = await tempDir();
    const manifest = path.join(dir, "m.json");
    const blob = path.join(dir, "b.f32");
    const records = sampleRecords();
    records[2].id = "r0";
    await writeDataset(records, 4, 4, manifest, blob);
    const errors = await validateDataset(manifest, blob);
    expect(errors.some((e) => e.includes("duplicate id"))).toBe(true);
  });
});
