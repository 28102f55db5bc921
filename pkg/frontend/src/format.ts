/**
 * Feature file writers.
 *
 * Two interchangeable forms, agreed bit-exactly with the training-side
 * loader:
 *
 * - JSON lines: a header line {"dim": d}, then one record per vector
 *   {"item_id", "vector": [...]} with optional "mode" and "region" keys.
 * - Binary: magic "CANNFV01", little-endian uint32 dim, then records of
 *   uint16 id length, UTF-8 id, dim float32 values. Region records encode
 *   their key as "item_id\tmode\tregion" in the id field.
 */

import * as fs from 'fs'

export const BINARY_MAGIC = 'CANNFV01'

export interface FeatureRecord {
  itemId: string
  vector: Float32Array
  mode?: string
  region?: number
}

export type FileFormat = 'jsonl' | 'binary'

function recordKey(record: FeatureRecord): string {
  if (record.mode !== undefined) {
    return `${record.itemId}\t${record.mode}\t${record.region}`
  }
  return record.itemId
}

/** Global records first, then region records, each sorted by key. */
export function sortRecords(records: FeatureRecord[]): FeatureRecord[] {
  const globals = records.filter(r => r.mode === undefined)
  const regions = records.filter(r => r.mode !== undefined)
  const byKey = (a: FeatureRecord, b: FeatureRecord) =>
    recordKey(a) < recordKey(b) ? -1 : recordKey(a) > recordKey(b) ? 1 : 0
  globals.sort(byKey)
  regions.sort(byKey)
  return [...globals, ...regions]
}

function checkDims(dim: number, records: FeatureRecord[]): void {
  for (const record of records) {
    if (record.vector.length !== dim) {
      throw new Error(
        `record ${record.itemId} has ${record.vector.length} values, expected ${dim}`,
      )
    }
  }
}

export function encodeJsonl(dim: number, records: FeatureRecord[]): string {
  checkDims(dim, records)
  const lines = [JSON.stringify({ dim })]
  for (const record of sortRecords(records)) {
    const obj: Record<string, unknown> = { item_id: record.itemId }
    if (record.mode !== undefined) {
      obj.mode = record.mode
      obj.region = record.region
    }
    obj.vector = Array.from(record.vector)
    lines.push(JSON.stringify(obj))
  }
  return lines.join('\n') + '\n'
}

export function encodeBinary(dim: number, records: FeatureRecord[]): Buffer {
  checkDims(dim, records)
  const parts: Buffer[] = [Buffer.from(BINARY_MAGIC, 'ascii')]
  const dimBuf = Buffer.alloc(4)
  dimBuf.writeUInt32LE(dim)
  parts.push(dimBuf)
  for (const record of sortRecords(records)) {
    const id = Buffer.from(recordKey(record), 'utf-8')
    const head = Buffer.alloc(2)
    head.writeUInt16LE(id.length)
    const values = Buffer.alloc(4 * dim)
    for (let i = 0; i < dim; i++) {
      values.writeFloatLE(record.vector[i], 4 * i)
    }
    parts.push(head, id, values)
  }
  return Buffer.concat(parts)
}

export function writeFeatureFile(
  path: string,
  dim: number,
  records: FeatureRecord[],
  format: FileFormat,
): void {
  if (format === 'binary') {
    fs.writeFileSync(path, encodeBinary(dim, records))
  } else {
    fs.writeFileSync(path, encodeJsonl(dim, records))
  }
}
