/**
 * Export jobs: run a backbone over item images (and optional region crops)
 * and write one feature file.
 *
 * Item ids come from file stems. Region crops follow the naming scheme
 * `<item_id>.<mode>.<r>.png` with mode in {color, texture, hybrid} and r
 * in {0, 1, 2}. Unreadable images and malformed crop names are skipped
 * with a warning and counted in the summary.
 */

import * as fs from 'fs'
import * as path from 'path'
import { Backbone } from './backbone'
import { FeatureRecord, FileFormat, writeFeatureFile } from './format'
import { loadPng, preprocess } from './image'

export interface ExportJob {
  imagesDir?: string
  cropsDir?: string
  outPath: string
  backbone: Backbone
  batchSize: number
  format: FileFormat
}

export interface ExportSummary {
  nRecords: number
  nSkipped: number
  dim: number
}

const MODES = new Set(['color', 'texture', 'hybrid'])
const CROP_NAME = /^(.+)\.(color|texture|hybrid)\.([0-2])\.png$/

interface PendingRecord {
  file: string
  itemId: string
  mode?: string
  region?: number
}

function listPngs(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter(name => name.toLowerCase().endsWith('.png'))
    .sort()
}

function globalRecords(dir: string): PendingRecord[] {
  return listPngs(dir).map(name => ({
    file: path.join(dir, name),
    itemId: name.slice(0, -'.png'.length),
  }))
}

function cropRecords(dir: string): { records: PendingRecord[]; skipped: number } {
  const records: PendingRecord[] = []
  let skipped = 0
  for (const name of listPngs(dir)) {
    const match = CROP_NAME.exec(name)
    if (!match || !MODES.has(match[2])) {
      console.warn(`skipping crop with unrecognized name: ${name}`)
      skipped += 1
      continue
    }
    records.push({
      file: path.join(dir, name),
      itemId: match[1],
      mode: match[2],
      region: Number(match[3]),
    })
  }
  return { records, skipped }
}

export async function runExport(job: ExportJob): Promise<ExportSummary> {
  if (!job.imagesDir && !job.cropsDir) {
    throw new Error('nothing to export: give an images dir, a crops dir, or both')
  }
  const pending: PendingRecord[] = []
  let skipped = 0
  if (job.imagesDir) {
    pending.push(...globalRecords(job.imagesDir))
  }
  if (job.cropsDir) {
    const crops = cropRecords(job.cropsDir)
    pending.push(...crops.records)
    skipped += crops.skipped
  }

  const loaded: { meta: PendingRecord; input: Float32Array }[] = []
  for (const meta of pending) {
    try {
      const img = loadPng(meta.file)
      loaded.push({ meta, input: preprocess(img, job.backbone.inputSize) })
    } catch (err) {
      console.warn(`skipping unreadable image ${meta.file}: ${err}`)
      skipped += 1
    }
  }
  if (loaded.length === 0) {
    throw new Error('no readable images found')
  }

  const records: FeatureRecord[] = []
  for (let start = 0; start < loaded.length; start += job.batchSize) {
    const batch = loaded.slice(start, start + job.batchSize)
    const vectors = await job.backbone.embedBatch(batch.map(b => b.input))
    batch.forEach((entry, i) => {
      records.push({
        itemId: entry.meta.itemId,
        mode: entry.meta.mode,
        region: entry.meta.region,
        vector: vectors[i],
      })
    })
  }
  writeFeatureFile(job.outPath, job.backbone.dim, records, job.format)
  return { nRecords: records.length, nSkipped: skipped, dim: job.backbone.dim }
}
