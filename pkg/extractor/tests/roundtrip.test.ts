/**
 * Cross-component round trip: everything this extractor writes must load
 * cleanly in the Python toolkit. Requires the cardfuse package to be
 * installed (python3 -m cardfuse.cli); the test fails loudly otherwise.
 */

import { describe, expect, it } from "vitest";
import { execFileSync } from "child_process";
import { promises as fs } from "fs";
import * as os from "os";
import * as path from "path";

import { makeEncoders } from "../src/encoders.js";
import { extract } from "../src/extract.js";
import { writeFixture } from "./helpers.js";

function runPrimary(args: string[]): { status: number; stdout: string; stderr: string } {
  try {
    const stdout = execFileSync("python3", ["-m", "cardfuse.cli", ...args], {
      encoding: "utf-8",
      stdio: ["ignore", "pipe", "pipe"],
    });
    return { status: 0, stdout, stderr: "" };
  } catch (e: any) {
    return { status: e.status ?? 1, stdout: e.stdout ?? "", stderr: e.stderr ?? "" };
  }
}

describe("primary toolkit round trip", () => {
  it("inspect accepts a 5-item extraction without warnings", async () => {
    const dir = await fs.mkdtemp(path.join(os.tmpdir(), "roundtrip-"));
    const { imageDir, captions } = await writeFixture({ n: 5, dir });
    const manifest = path.join(dir, "manifest.json");
    const blob = path.join(dir, "vectors.f32");
    const { image, text } = makeEncoders("hash");
    const summary = await extract({
      imageDir,
      captionsCsv: captions,
      outManifest: manifest,
      outBlob: blob,
      imageEncoder: image,
      textEncoder: text,
    });
    expect(summary).toMatchObject({ written: 5, dimImage: 512, dimText: 512 });

    const inspect = runPrimary(["inspect", "--manifest", manifest, "--blob", blob]);
    expect(inspect.status).toBe(0);
    expect(inspect.stdout).toContain("records: 5");
    expect(inspect.stdout).toContain("dim_image: 512  dim_text: 512");
    expect(inspect.stderr).not.toMatch(/warning/i);

    // and the primary can re-split what we wrote
    const outDir = path.join(dir, "resplit");
    const split = runPrimary([
      "split",
      "--manifest", manifest,
      "--blob", blob,
      "--train-fraction", "0.6",
      "--seed", "1",
      "--out", outDir,
    ]);
    expect(split.status).toBe(0);
    const resplit = JSON.parse(await fs.readFile(path.join(outDir, "manifest.json"), "utf-8"));
    const splits = resplit.records.map((r: any) => r.split);
    expect(splits).toContain("train");
    expect(splits).toContain("test");
  });
});
