/**
 * Minimal raster handling: PPM (P6) and PNG loading, cropping, and
 * letterbox resizing to the model input size.
 */

import { readFileSync } from 'fs'
import { PNG } from 'pngjs'

export interface Raster {
  width: number
  height: number
  /** RGB, row-major, 3 bytes per pixel. */
  data: Uint8Array
}

export function readPpm(path: string): Raster {
  const buf = readFileSync(path)
  if (buf[0] !== 0x50 || buf[1] !== 0x36) {
    throw new Error(`${path}: not a binary PPM (P6) file`)
  }
  // header: "P6" <ws> width <ws> height <ws> maxval <single ws> raster
  let pos = 2
  const fields: number[] = []
  while (fields.length < 3) {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++
    if (buf[pos] === 0x23) {
      // comment line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
      continue
    }
    let start = pos
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++
    fields.push(parseInt(buf.subarray(start, pos).toString('ascii'), 10))
  }
  pos++ // the single whitespace after maxval
  const [width, height, maxval] = fields
  if (maxval !== 255) throw new Error(`${path}: unsupported maxval ${maxval}`)
  const data = new Uint8Array(buf.subarray(pos, pos + width * height * 3))
  if (data.length !== width * height * 3) throw new Error(`${path}: truncated raster`)
  return { width, height, data }
}

export function readPng(path: string): Raster {
  const png = PNG.sync.read(readFileSync(path))
  const data = new Uint8Array(png.width * png.height * 3)
  for (let i = 0; i < png.width * png.height; i++) {
    data[i * 3] = png.data[i * 4]
    data[i * 3 + 1] = png.data[i * 4 + 1]
    data[i * 3 + 2] = png.data[i * 4 + 2]
  }
  return { width: png.width, height: png.height, data }
}

export function readImage(path: string): Raster {
  if (path.toLowerCase().endsWith('.ppm')) return readPpm(path)
  if (path.toLowerCase().endsWith('.png')) return readPng(path)
  throw new Error(`unsupported image format: ${path}`)
}

export function crop(img: Raster, x0: number, y0: number, w: number, h: number): Raster {
  const xi = Math.floor(x0)
  const yi = Math.floor(y0)
  const wi = Math.min(Math.round(w), img.width - xi)
  const hi = Math.min(Math.round(h), img.height - yi)
  const data = new Uint8Array(wi * hi * 3)
  for (let row = 0; row < hi; row++) {
    const src = ((yi + row) * img.width + xi) * 3
    data.set(img.data.subarray(src, src + wi * 3), row * wi * 3)
  }
  return { width: wi, height: hi, data }
}

export interface Letterboxed {
  raster: Raster
  /** One scale for both axes: aspect ratio is preserved, the rest is padding. */
  scale: number
  padX: number
  padY: number
}

/**
 * Scale the raster so its longest side equals `inputSize` (nearest
 * neighbour), then pad to a square canvas, centring the content.
 */
export function letterbox(img: Raster, inputSize: number, fill = 114): Letterboxed {
  const scale = inputSize / Math.max(img.width, img.height)
  const w = Math.max(1, Math.round(img.width * scale))
  const h = Math.max(1, Math.round(img.height * scale))
  const padX = Math.floor((inputSize - w) / 2)
  const padY = Math.floor((inputSize - h) / 2)
  const data = new Uint8Array(inputSize * inputSize * 3).fill(fill)
  for (let y = 0; y < h; y++) {
    const srcY = Math.min(img.height - 1, Math.floor(y / scale))
    for (let x = 0; x < w; x++) {
      const srcX = Math.min(img.width - 1, Math.floor(x / scale))
      const src = (srcY * img.width + srcX) * 3
      const dst = ((y + padY) * inputSize + (x + padX)) * 3
      data[dst] = img.data[src]
      data[dst + 1] = img.data[src + 1]
      data[dst + 2] = img.data[src + 2]
    }
  }
  return { raster: { width: inputSize, height: inputSize, data }, scale, padX, padY }
}

/** Map a box from letterboxed-input coordinates back to the cropped region. */
export function unletterbox(
  box: [number, number, number, number],
  lb: Letterboxed,
  regionW: number,
  regionH: number,
): [number, number, number, number] {
  const clampX = (v: number) => Math.min(Math.max(v, 0), regionW)
  const clampY = (v: number) => Math.min(Math.max(v, 0), regionH)
  return [
    clampX((box[0] - lb.padX) / lb.scale),
    clampY((box[1] - lb.padY) / lb.scale),
    clampX((box[2] - lb.padX) / lb.scale),
    clampY((box[3] - lb.padY) / lb.scale),
  ]
}
