/**
 * Model hosting. The adapter only drives a model; which one is behind the
 * interface is a deployment choice. The bundled stub detects the filled
 * rectangles of synthetically rendered boards by colour, which is enough
 * to exercise the whole protocol and merge pipeline end to end without
 * trained weights.
 */

import { readFileSync } from 'fs'
import { z } from 'zod'
import type { Raster } from './image.js'

export interface ModelDetection {
  box: [number, number, number, number] // input-scale pixels
  score: number
  classId: number
}

export interface DetectorModel {
  modelId: string
  detect(input: Raster): ModelDetection[]
}

const StubWeightsSchema = z.object({
  kind: z.literal('stub-rect'),
  background: z.tuple([z.number(), z.number(), z.number()]),
  classes: z.array(
    z.object({
      id: z.number().int().nonnegative(),
      color: z.tuple([z.number(), z.number(), z.number()]),
    }),
  ),
  tolerance: z.number().default(32),
  min_component: z.number().default(9),
  score: z.number().min(0).max(1).default(0.9),
})
export type StubWeights = z.infer<typeof StubWeightsSchema>

function colorDistance(data: Uint8Array, offset: number, color: [number, number, number]): number {
  return (
    Math.abs(data[offset] - color[0]) +
    Math.abs(data[offset + 1] - color[1]) +
    Math.abs(data[offset + 2] - color[2])
  )
}

/**
 * Colour-keyed rectangle finder: connected components (4-neighbour flood
 * fill) of pixels near a class colour become detections with that class.
 */
export class StubRectangleModel implements DetectorModel {
  readonly modelId: string

  constructor(private weights: StubWeights) {
    this.modelId = 'stub-rect'
  }

  detect(input: Raster): ModelDetection[] {
    const { width, height, data } = input
    const label = new Int16Array(width * height).fill(-1)
    for (let i = 0; i < width * height; i++) {
      for (const cls of this.weights.classes) {
        if (colorDistance(data, i * 3, cls.color) <= this.weights.tolerance) {
          label[i] = cls.id
          break
        }
      }
    }
    const seen = new Uint8Array(width * height)
    const out: ModelDetection[] = []
    const stack: number[] = []
    for (let start = 0; start < width * height; start++) {
      if (label[start] < 0 || seen[start]) continue
      const classId = label[start]
      let minX = width
      let minY = height
      let maxX = 0
      let maxY = 0
      let count = 0
      stack.push(start)
      seen[start] = 1
      while (stack.length > 0) {
        const i = stack.pop()!
        const x = i % width
        const y = (i / width) | 0
        count++
        if (x < minX) minX = x
        if (y < minY) minY = y
        if (x > maxX) maxX = x
        if (y > maxY) maxY = y
        const neighbours = [i - 1, i + 1, i - width, i + width]
        for (const j of neighbours) {
          if (j < 0 || j >= width * height || seen[j] || label[j] !== classId) continue
          if ((j === i - 1 || j === i + 1) && ((j % width) - x) ** 2 > 1) continue // row wrap
          seen[j] = 1
          stack.push(j)
        }
      }
      if (count >= this.weights.min_component) {
        out.push({
          box: [minX, minY, maxX + 1, maxY + 1],
          score: this.weights.score,
          classId,
        })
      }
    }
    // deterministic order: by class then position
    out.sort((a, b) => a.classId - b.classId || a.box[1] - b.box[1] || a.box[0] - b.box[0])
    return out
  }
}

/** Load the model named by the weights file. Stub weights are JSON. */
export function loadModel(weightsPath: string): DetectorModel {
  const raw = JSON.parse(readFileSync(weightsPath, 'utf-8'))
  const parsed = StubWeightsSchema.safeParse(raw)
  if (!parsed.success) {
    throw new Error(`unsupported weights file ${weightsPath}: ${parsed.error.message}`)
  }
  return new StubRectangleModel(parsed.data)
}
