#!/usr/bin/env node
/**
 * Command-line entry point.
 *
 * Example:
 *   node dist/cli.js --images-dir items/ --backbone stub --dim 64 \
 *     --out features.bin --format binary
 *
 * `--backbone` is either the literal "stub" (deterministic hash features,
 * needs --dim) or a directory holding a saved tfjs layers model.
 */

import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import { resolveBackbone } from './backbone'
import { FileFormat } from './format'
import { runExport } from './export'

async function main(): Promise<number> {
  const args = await yargs(hideBin(process.argv))
    .option('images-dir', { type: 'string', describe: 'directory of item images (item id = file stem)' })
    .option('crops-dir', { type: 'string', describe: 'directory of region crops named <item>.<mode>.<r>.png' })
    .option('out', { type: 'string', demandOption: true, describe: 'output feature file' })
    .option('backbone', { type: 'string', default: 'stub', describe: '"stub" or a tfjs layers model directory' })
    .option('dim', { type: 'number', describe: 'feature width (stub backbone only)' })
    .option('seed', { type: 'number', default: 0, describe: 'stub backbone seed' })
    .option('batch-size', { type: 'number', default: 16 })
    .option('format', { choices: ['jsonl', 'binary'] as const, default: 'jsonl' as FileFormat })
    .strict()
    .parse()

  const backbone = await resolveBackbone(args.backbone, { dim: args.dim, seed: args.seed })
  const summary = await runExport({
    imagesDir: args['images-dir'],
    cropsDir: args['crops-dir'],
    outPath: args.out,
    backbone,
    batchSize: args['batch-size'],
    format: args.format as FileFormat,
  })
  console.log(JSON.stringify({ n_records: summary.nRecords, n_skipped: summary.nSkipped, dim: summary.dim }))
  return 0
}

main()
  .then(code => process.exit(code))
  .catch(err => {
    console.error(`error: ${err.message ?? err}`)
    process.exit(1)
  })
