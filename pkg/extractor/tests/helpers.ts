import { deflateSync } from "zlib";
import { promises as fs } from "fs";
import * as path from "path";

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(buf: Buffer): number {
  let c = 0xffffffff;
  for (const byte of buf) c = CRC_TABLE[(c ^ byte) & 0xff] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Buffer): Buffer {
  const len = Buffer.alloc(4);
  len.writeUInt32BE(data.length);
  const body = Buffer.concat([Buffer.from(type, "ascii"), data]);
  const crc = Buffer.alloc(4);
  crc.writeUInt32BE(crc32(body));
  return Buffer.concat([len, body, crc]);
}

/** Minimal valid truecolor PNG of a single solid pixel. */
export function tinyPng(rgb: [number, number, number]): Buffer {
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(1, 0); // width
  ihdr.writeUInt32BE(1, 4); // height
  ihdr[8] = 8; // bit depth
  ihdr[9] = 2; // truecolor
  const scanline = Buffer.from([0, rgb[0], rgb[1], rgb[2]]);
  return Buffer.concat([
    Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]),
    chunk("IHDR", ihdr),
    chunk("IDAT", deflateSync(scanline)),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

export interface FixtureOptions {
  n?: number;
  dir: string;
}

/** n images + captions CSV with two categories / two subcategories. */
export async function writeFixture({ n = 5, dir }: FixtureOptions) {
  const imageDir = path.join(dir, "images");
  await fs.mkdir(imageDir, { recursive: true });
  const rows = ["id,text,category,subcategory"];
  for (let i = 0; i < n; i++) {
    const id = `card${i}`;
    await fs.writeFile(path.join(imageDir, `${id}.png`), tinyPng([40 * i, 10, 255 - 40 * i]));
    const cat = i % 2 ? "Holidays" : "Messages";
    const sub = i % 2 ? "Holidays.birthday" : "Messages.thanks";
    rows.push(`${id},"greeting text number ${i}",${cat},${sub}`);
  }
  const captions = path.join(dir, "captions.csv");
  await fs.writeFile(captions, rows.join("\n") + "\n");
  return { imageDir, captions };
}
