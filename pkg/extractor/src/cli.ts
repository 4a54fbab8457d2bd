#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { makeEncoders } from "./encoders.js";
import { extract } from "./extract.js";
import { validateDataset } from "./format.js";

await yargs(hideBin(process.argv))
  .scriptName("cardfuse-extract")
  .command(
    "extract",
    "encode an image folder + captions CSV into manifest/blob files",
    (y) =>
      y
        .option("images", { type: "string", demandOption: true, describe: "image directory" })
        .option("captions", {
          type: "string",
          demandOption: true,
          describe: "CSV with header id,text,category,subcategory",
        })
        .option("out-manifest", { type: "string", demandOption: true })
        .option("out-blob", { type: "string", demandOption: true })
        .option("encoder", {
          choices: ["clip-use", "hash"] as const,
          default: "clip-use" as const,
          describe: "clip-use: pretrained CLIP image + USE v4 text; hash: offline stand-in",
        })
        .option("dim", { type: "number", default: 512, describe: "hash encoder dimension" })
        .option("batch-size", { type: "number", default: 16 })
        .option("include-inside-text", { type: "boolean", default: false })
        .option("skip-unreadable", { type: "boolean", default: false }),
    async (argv) => {
      const { image, text } = makeEncoders(argv.encoder, argv.dim);
      const summary = await extract({
        imageDir: argv.images,
        captionsCsv: argv.captions,
        outManifest: argv["out-manifest"],
        outBlob: argv["out-blob"],
        imageEncoder: image,
        textEncoder: text,
        batchSize: argv["batch-size"],
        onUnreadable: argv["skip-unreadable"] ? "skip" : "abort",
        includeInsideText: argv["include-inside-text"],
      });
      console.log(
        `wrote ${summary.written} records (dims ${summary.dimImage}/${summary.dimText})` +
          (summary.skipped.length ? `, skipped ${summary.skipped.length}` : ""),
      );
    },
  )
  .command(
    "validate",
    "check a manifest/blob pair",
    (y) =>
      y
        .option("manifest", { type: "string", demandOption: true })
        .option("blob", { type: "string", demandOption: true }),
    async (argv) => {
      const errors = await validateDataset(argv.manifest, argv.blob);
      if (errors.length) {
        for (const e of errors) console.error(`error: ${e}`);
        process.exit(1);
      }
      console.log("ok");
    },
  )
  .demandCommand(1)
  .strict()
  .fail((msg, err) => {
    console.error(`error: ${msg ?? err?.message}`);
    process.exit(err && !msg ? 1 : 2);
  })
  .parseAsync();
