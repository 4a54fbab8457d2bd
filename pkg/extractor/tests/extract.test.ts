import { describe, expect, it } from "vitest";
import { promises as fs } from "fs";
import * as os from "os";
import * as path from "path";

import { HashEncoder, makeEncoders } from "../src/encoders.js";
import { extract, parseCaptions, resolveImages } from "../src/extract.js";
import { validateDataset } from "../src/format.js";
import { writeFixture } from "./helpers.js";

async function tempDir() {
  return fs.mkdtemp(path.join(os.tmpdir(), "extract-"));
}

describe("HashEncoder", () => {
  it("is deterministic and unit-norm", async () => {
    const enc = new HashEncoder("image");
    const [a] = await enc.encodeBatch([Buffer.from("same bytes")]);
    const [b] = await enc.encodeBatch([Buffer.from("same bytes")]);
    expect(Array.from(a)).toEqual(Array.from(b));
    expect(a.length).toBe(512);
    const norm = Math.sqrt(a.reduce((s, v) => s + v * v, 0));
    expect(norm).toBeCloseTo(1.0, 5);
  });

  it("separates different content and namespaces", async () => {
    const image = new HashEncoder("image", 64);
    const text = new HashEncoder("text", 64);
    const [a, b] = await image.encodeBatch([Buffer.from("x"), Buffer.from("y")]);
    const [c] = await text.encodeBatch(["x"]);
    const dot = (u: Float32Array, v: Float32Array) => u.reduce((s, x, i) => s + x * v[i], 0);
    expect(Math.abs(dot(a, b))).toBeLessThan(0.9);
    expect(Math.abs(dot(a, c))).toBeLessThan(0.9);
  });
});

describe("parseCaptions", () => {
  it("requires the documented header", () => {
    expect(() => parseCaptions("id,text,category\na,b,c")).toThrow(/subcategory/);
  });

  it("rejects duplicate ids", () => {
    const csv = "id,text,category,subcategory\na,t,c,s\na,t2,c,s";
    expect(() => parseCaptions(csv)).toThrow(/duplicate id a/);
  });

  it("rejects empty labels", () => {
    const csv = "id,text,category,subcategory\na,t,,s";
    expect(() => parseCaptions(csv)).toThrow(/empty label/);
  });
});

describe("resolveImages", () => {
  it("demands exactly one file per id", async () => {
    const dir = await tempDir();
    await fs.writeFile(path.join(dir, "a.png"), "x");
    await fs.writeFile(path.join(dir, "a.jpg"), "x");
    await expect(resolveImages(dir, ["a"])).rejects.toThrow(/2 files/);
    await expect(resolveImages(dir, ["missing"])).rejects.toThrow(/0 files/);
  });
});

describe("extract", () => {
  it("writes one record per CSV row at the declared dims", async () => {
    const dir = await tempDir();
    const { imageDir, captions } = await writeFixture({ n: 3, dir });
    const { image, text } = makeEncoders("hash");
    const summary = await extract({
      imageDir,
      captionsCsv: captions,
      outManifest: path.join(dir, "m.json"),
      outBlob: path.join(dir, "b.f32"),
      imageEncoder: image,
      textEncoder: text,
    });
    expect(summary).toMatchObject({ written: 3, dimImage: 512, dimText: 512 });
    const manifest = JSON.parse(await fs.readFile(path.join(dir, "m.json"), "utf-8"));
    expect(manifest.format_version).toBe(1);
    expect(manifest.records).toHaveLength(3);
    expect(await validateDataset(path.join(dir, "m.json"), path.join(dir, "b.f32"))).toEqual([]);
  });

  it("produces a valid empty dataset from an empty CSV", async () => {
    const dir = await tempDir();
    await fs.mkdir(path.join(dir, "images"));
    await fs.writeFile(path.join(dir, "captions.csv"), "id,text,category,subcategory\n");
    const { image, text } = makeEncoders("hash");
    const summary = await extract({
      imageDir: path.join(dir, "images"),
      captionsCsv: path.join(dir, "captions.csv"),
      outManifest: path.join(dir, "m.json"),
      outBlob: path.join(dir, "b.f32"),
      imageEncoder: image,
      textEncoder: text,
    });
    expect(summary.written).toBe(0);
    const manifest = JSON.parse(await fs.readFile(path.join(dir, "m.json"), "utf-8"));
    expect(manifest.records).toEqual([]);
    expect((await fs.stat(path.join(dir, "b.f32"))).size).toBe(0);
  });

  it("is byte-identical across reruns on the same inputs", async () => {
    const dir = await tempDir();
    const { imageDir, captions } = await writeFixture({ n: 4, dir });
    const { image, text } = makeEncoders("hash");
    const paths = [0, 1].map((i) => ({
      m: path.join(dir, `m${i}.json`),
      b: path.join(dir, `b${i}.f32`),
    }));
    for (const p of paths) {
      await extract({
        imageDir,
        captionsCsv: captions,
        outManifest: p.m,
        outBlob: p.b,
        imageEncoder: image,
        textEncoder: text,
      });
    }
    expect(await fs.readFile(paths[0].b)).toEqual(await fs.readFile(paths[1].b));
    expect(await fs.readFile(paths[0].m, "utf-8")).toEqual(await fs.readFile(paths[1].m, "utf-8"));
  });
});
