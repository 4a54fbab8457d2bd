/**
 * Embedding backends. The real encoders (CLIP ViT-B image tower, Universal
 * Sentence Encoder v4) are loaded lazily so the pipeline, file format, and
 * tests work without the model weights; `hash` is a deterministic offline
 * stand-in that maps content bytes to a unit vector.
 */

import { createHash } from "crypto";

/** Import by variable name so the optional model packages stay out of the
 * type graph; callers get a uniform install hint when one is missing. */
async function importOptional(name: string, hint: string): Promise<any> {
  try {
    return await import(name);
  } catch {
    throw new Error(`${name} unavailable: ${hint}`);
  }
}

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  /** Inputs are raw image bytes for image encoders, strings for text. */
  encodeBatch(inputs: (Buffer | string)[]): Promise<Float32Array[]>;
}

/**
 * Deterministic content-hash encoder: sha256 of the input seeds a small
 * PRNG that fills the vector, which is then L2-normalized. Same bytes in,
 * same vector out, on any run.
 */
export class HashEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;

  constructor(namespace: "image" | "text", dim = 512) {
    this.name = `hash-${namespace}`;
    this.dim = dim;
    this.namespace = namespace;
  }

  private namespace: string;

  async encodeBatch(inputs: (Buffer | string)[]): Promise<Float32Array[]> {
    return inputs.map((input) => this.encodeOne(input));
  }

  private encodeOne(input: Buffer | string): Float32Array {
    const digest = createHash("sha256")
      .update(this.namespace)
      .update(typeof input === "string" ? Buffer.from(input, "utf-8") : input)
      .digest();
    // xorshift128 seeded from the digest
    let s0 = digest.readUInt32LE(0) || 1;
    let s1 = digest.readUInt32LE(4) || 2;
    let s2 = digest.readUInt32LE(8) || 3;
    let s3 = digest.readUInt32LE(12) || 4;
    const next = () => {
      const t = s3;
      const s = s0;
      s3 = s2;
      s2 = s1;
      s1 = s;
      let v = t ^ (t << 11);
      v ^= v >>> 8;
      s0 = (v ^ s ^ (s >>> 19)) >>> 0;
      return s0 / 0xffffffff;
    };
    const vec = new Float32Array(this.dim);
    let norm = 0;
    for (let i = 0; i < this.dim; i++) {
      vec[i] = 2 * next() - 1;
      norm += vec[i] * vec[i];
    }
    norm = Math.sqrt(norm);
    for (let i = 0; i < this.dim; i++) vec[i] = vec[i] / norm;
    return vec;
  }
}

/** CLIP ViT-B/32 image tower (512-D projection) via @xenova/transformers. */
export class ClipImageEncoder implements Encoder {
  readonly name: string;
  readonly dim = 512;
  private model: any;
  private processor: any;
  private rawImage: any;

  constructor(readonly variant = "Xenova/clip-vit-base-patch32") {
    this.name = `clip:${variant}`;
  }

  private async load() {
    if (this.model) return;
    const mod = await importOptional(
      "@xenova/transformers",
      "install it (and allow model downloads) or use --encoder hash",
    );
    this.processor = await mod.AutoProcessor.from_pretrained(this.variant);
    this.model = await mod.CLIPVisionModelWithProjection.from_pretrained(this.variant);
    this.rawImage = mod.RawImage;
  }

  async encodeBatch(inputs: (Buffer | string)[]): Promise<Float32Array[]> {
    await this.load();
    const out: Float32Array[] = [];
    for (const input of inputs) {
      const blob = new Blob([input as any]);
      const image = await this.rawImage.fromBlob(blob);
      const processed = await this.processor(image);
      const { image_embeds } = await this.model(processed);
      out.push(Float32Array.from(image_embeds.data));
    }
    return out;
  }
}

/** Universal Sentence Encoder v4 (512-D) via tfjs. */
export class UseTextEncoder implements Encoder {
  readonly name = "use:v4";
  readonly dim = 512;
  private model: any;

  private async load() {
    if (this.model) return;
    const hint = "install it together with @tensorflow/tfjs, or use --encoder hash";
    await importOptional("@tensorflow/tfjs", hint);
    const use = await importOptional("@tensorflow-models/universal-sentence-encoder", hint);
    this.model = await use.load();
  }

  async encodeBatch(inputs: (Buffer | string)[]): Promise<Float32Array[]> {
    await this.load();
    const texts = inputs.map((i) => String(i));
    const tensor = await this.model.embed(texts);
    const rows: number[][] = await tensor.array();
    tensor.dispose();
    return rows.map((r) => Float32Array.from(r));
  }
}

export function makeEncoders(kind: "hash" | "clip-use", dim = 512): {
  image: Encoder;
  text: Encoder;
} {
  if (kind === "hash") {
    return { image: new HashEncoder("image", dim), text: new HashEncoder("text", dim) };
  }
  return { image: new ClipImageEncoder(), text: new UseTextEncoder() };
}
