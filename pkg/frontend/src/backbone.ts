/**
 * Feature backbones.
 *
 * A backbone maps preprocessed image tensors to fixed-width feature
 * vectors. Two implementations:
 *
 * - TfjsBackbone wraps a saved tfjs layers model (model.json plus weight
 *   shards in one directory). A 4D output is global-average-pooled over
 *   its spatial axes, so exporting a classifier's convolutional trunk
 *   yields the conventional pooled penultimate feature.
 * - StubBackbone hashes the preprocessed pixels into a unit-norm
 *   pseudo-random vector. It needs no weights, making it a deterministic
 *   stand-in for pipeline tests.
 */

import * as crypto from 'crypto'
import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

export interface Backbone {
  inputSize: number
  dim: number
  embedBatch(inputs: Float32Array[]): Promise<Float32Array[]>
}

// -- deterministic stub ------------------------------------------------------

/** Standard normals from counter-mode SHA-256, platform independent. */
function hashNormals(seedHash: Buffer, n: number): Float64Array {
  const out = new Float64Array(n)
  let produced = 0
  let counter = 0
  while (produced < n) {
    const block = crypto
      .createHash('sha256')
      .update(seedHash)
      .update(Buffer.from(new Uint32Array([counter]).buffer))
      .digest()
    counter += 1
    for (let i = 0; i + 8 <= block.length && produced < n; i += 8) {
      const u1 = (block.readUInt32LE(i) + 0.5) / 4294967296
      const u2 = (block.readUInt32LE(i + 4) + 0.5) / 4294967296
      out[produced++] = Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2)
    }
  }
  return out
}

export class StubBackbone implements Backbone {
  constructor(
    public readonly dim: number,
    private readonly seed: number,
    public readonly inputSize: number = 32,
  ) {
    if (dim < 1) throw new Error(`stub backbone dim must be positive, got ${dim}`)
  }

  async embedBatch(inputs: Float32Array[]): Promise<Float32Array[]> {
    return inputs.map(input => {
      const seedHash = crypto
        .createHash('sha256')
        .update(`stub|${this.seed}|`)
        .update(Buffer.from(input.buffer, input.byteOffset, input.byteLength))
        .digest()
      const normals = hashNormals(seedHash, this.dim)
      let norm = 0
      for (const v of normals) norm += v * v
      norm = Math.sqrt(norm)
      const vector = new Float32Array(this.dim)
      for (let i = 0; i < this.dim; i++) vector[i] = normals[i] / norm
      return vector
    })
  }
}

// -- tfjs layers model -------------------------------------------------------

interface WeightsManifestGroup {
  paths: string[]
  weights: tf.io.WeightsManifestEntry[]
}

/** Read a model.json plus its weight shards without a file:// IO handler. */
export async function loadLayersModelFromDir(dir: string): Promise<tf.LayersModel> {
  const spec = JSON.parse(fs.readFileSync(path.join(dir, 'model.json'), 'utf-8'))
  const manifest: WeightsManifestGroup[] = spec.weightsManifest
  const weightSpecs = manifest.flatMap(group => group.weights)
  const shards = manifest.flatMap(group =>
    group.paths.map(p => fs.readFileSync(path.join(dir, p))),
  )
  const weightData = Buffer.concat(shards)
  return tf.loadLayersModel({
    load: async () => ({
      modelTopology: spec.modelTopology,
      weightSpecs,
      weightData: weightData.buffer.slice(
        weightData.byteOffset,
        weightData.byteOffset + weightData.byteLength,
      ),
      format: spec.format,
      generatedBy: spec.generatedBy,
      convertedBy: spec.convertedBy,
    }),
  })
}

/** Save a layers model as model.json + weights.bin in one directory. */
export async function saveLayersModelToDir(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true })
  await model.save({
    save: async artifacts => {
      const weightData = artifacts.weightData as ArrayBuffer
      fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(weightData))
      fs.writeFileSync(
        path.join(dir, 'model.json'),
        JSON.stringify({
          modelTopology: artifacts.modelTopology,
          format: artifacts.format,
          generatedBy: artifacts.generatedBy,
          convertedBy: artifacts.convertedBy,
          weightsManifest: [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }],
        }),
      )
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } }
    },
  })
}

export class TfjsBackbone implements Backbone {
  readonly inputSize: number
  readonly dim: number

  private constructor(private readonly model: tf.LayersModel) {
    const inShape = model.inputs[0].shape
    const outShape = model.outputs[0].shape
    this.inputSize = inShape[1] as number
    this.dim = outShape[outShape.length - 1] as number
  }

  static async fromDir(dir: string): Promise<TfjsBackbone> {
    return new TfjsBackbone(await loadLayersModelFromDir(dir))
  }

  async embedBatch(inputs: Float32Array[]): Promise<Float32Array[]> {
    const n = inputs.length
    const size = this.inputSize
    const flat = new Float32Array(n * size * size * 3)
    inputs.forEach((input, i) => flat.set(input, i * size * size * 3))
    const result = tf.tidy(() => {
      const batch = tf.tensor4d(flat, [n, size, size, 3])
      let out = this.model.predict(batch) as tf.Tensor
      if (out.rank === 4) {
        out = tf.mean(out, [1, 2]) // pooled penultimate activation
      }
      return out
    })
    const data = (await result.data()) as Float32Array
    result.dispose()
    const rows: Float32Array[] = []
    for (let i = 0; i < n; i++) {
      rows.push(data.slice(i * this.dim, (i + 1) * this.dim))
    }
    return rows
  }
}

export async function resolveBackbone(
  name: string,
  options: { dim?: number; seed?: number },
): Promise<Backbone> {
  if (name === 'stub') {
    if (options.dim === undefined) {
      throw new Error('the stub backbone requires an explicit --dim')
    }
    return new StubBackbone(options.dim, options.seed ?? 0)
  }
  return TfjsBackbone.fromDir(name)
}
