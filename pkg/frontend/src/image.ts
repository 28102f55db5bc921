/**
 * PNG loading and deterministic preprocessing.
 *
 * Preprocessing is fixed so that reruns produce byte-identical features:
 * resize the shorter side to the backbone's native input with bilinear
 * interpolation, center-crop to a square, scale pixel values to [-1, 1].
 */

import * as fs from 'fs'
import { PNG } from 'pngjs'

export interface RgbImage {
  width: number
  height: number
  /** row-major RGB triples, 0..255 */
  pixels: Float32Array
}

export function loadPng(path: string): RgbImage {
  const png = PNG.sync.read(fs.readFileSync(path))
  const pixels = new Float32Array(png.width * png.height * 3)
  for (let i = 0; i < png.width * png.height; i++) {
    pixels[3 * i] = png.data[4 * i]
    pixels[3 * i + 1] = png.data[4 * i + 1]
    pixels[3 * i + 2] = png.data[4 * i + 2]
  }
  return { width: png.width, height: png.height, pixels }
}

function sample(img: RgbImage, x: number, y: number, c: number): number {
  const cx = Math.min(Math.max(x, 0), img.width - 1)
  const cy = Math.min(Math.max(y, 0), img.height - 1)
  return img.pixels[3 * (cy * img.width + cx) + c]
}

export function resizeBilinear(img: RgbImage, width: number, height: number): RgbImage {
  const out = new Float32Array(width * height * 3)
  const scaleX = img.width / width
  const scaleY = img.height / height
  for (let y = 0; y < height; y++) {
    // half-pixel centers keep the mapping symmetric
    const srcY = (y + 0.5) * scaleY - 0.5
    const y0 = Math.floor(srcY)
    const fy = srcY - y0
    for (let x = 0; x < width; x++) {
      const srcX = (x + 0.5) * scaleX - 0.5
      const x0 = Math.floor(srcX)
      const fx = srcX - x0
      for (let c = 0; c < 3; c++) {
        const top = sample(img, x0, y0, c) * (1 - fx) + sample(img, x0 + 1, y0, c) * fx
        const bottom = sample(img, x0, y0 + 1, c) * (1 - fx) + sample(img, x0 + 1, y0 + 1, c) * fx
        out[3 * (y * width + x) + c] = top * (1 - fy) + bottom * fy
      }
    }
  }
  return { width, height, pixels: out }
}

export function centerCrop(img: RgbImage, size: number): RgbImage {
  const left = Math.floor((img.width - size) / 2)
  const top = Math.floor((img.height - size) / 2)
  if (left < 0 || top < 0) {
    throw new Error(`cannot crop ${size}x${size} from ${img.width}x${img.height}`)
  }
  const out = new Float32Array(size * size * 3)
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      for (let c = 0; c < 3; c++) {
        out[3 * (y * size + x) + c] = img.pixels[3 * ((top + y) * img.width + (left + x)) + c]
      }
    }
  }
  return { width: size, height: size, pixels: out }
}

/** Resize shorter side to `inputSize`, center-crop, scale to [-1, 1]. */
export function preprocess(img: RgbImage, inputSize: number): Float32Array {
  const scale = inputSize / Math.min(img.width, img.height)
  const resized = resizeBilinear(
    img,
    Math.max(inputSize, Math.round(img.width * scale)),
    Math.max(inputSize, Math.round(img.height * scale)),
  )
  const cropped = centerCrop(resized, inputSize)
  const out = new Float32Array(cropped.pixels.length)
  for (let i = 0; i < out.length; i++) {
    out[i] = cropped.pixels[i] / 127.5 - 1.0
  }
  return out
}
