/**
 * Core request handling shared by serve mode and the exporter: crop the
 * requested region, letterbox it to the target input, run the model, and
 * map boxes back to region-local pixels.
 */

import { existsSync, readFileSync } from 'fs'
import { resolve } from 'path'
import { z } from 'zod'
import { crop, letterbox, readImage, unletterbox, type Raster } from './image.js'
import type { DetectorModel } from './model.js'
import type { RawDetection, WorkRequest } from './protocol.js'

export const AdapterConfigSchema = z.object({
  weights: z.string(),
  device: z.string().default('cpu'),
  input_size: z.number().int().positive().default(640),
  conf_floor: z.number().min(0).max(1).default(0.05),
  half: z.boolean().default(false),
  images_dir: z.string().default('.'),
})
export type AdapterConfig = z.infer<typeof AdapterConfigSchema>

export function loadConfig(path: string): AdapterConfig {
  return AdapterConfigSchema.parse(JSON.parse(readFileSync(path, 'utf-8')))
}

export class ImageCache {
  private cache = new Map<string, Raster>()

  constructor(private imagesDir: string) {}

  get(imagePath: string): Raster {
    const full = resolve(this.imagesDir, imagePath)
    if (!existsSync(full)) throw new Error(`image not found: ${full}`)
    let raster = this.cache.get(full)
    if (!raster) {
      raster = readImage(full)
      this.cache.set(full, raster)
    }
    return raster
  }
}

export interface RegionResult {
  detections: RawDetection[]
  /** Effective per-axis scales of the letterbox step (aspect preserved, so equal up to rounding). */
  meta: { scale_x: number; scale_y: number; pad_x: number; pad_y: number }
}

export function detectRegionWithMeta(
  model: DetectorModel,
  config: AdapterConfig,
  image: Raster,
  region: [number, number, number, number],
  targetInput: number,
): RegionResult {
  const [x0, y0, w, h] = region
  const regionRaster = crop(image, x0, y0, w, h)
  const size = targetInput > 0 ? targetInput : config.input_size
  const lb = letterbox(regionRaster, size)
  const detections: RawDetection[] = []
  for (const det of model.detect(lb.raster)) {
    if (det.score < config.conf_floor) continue
    const box = unletterbox(det.box, lb, regionRaster.width, regionRaster.height)
    if (box[2] - box[0] <= 0 || box[3] - box[1] <= 0) continue
    detections.push({ box, score: det.score, class_id: det.classId })
  }
  return {
    detections,
    meta: {
      scale_x: Math.round(regionRaster.width * lb.scale) / regionRaster.width,
      scale_y: Math.round(regionRaster.height * lb.scale) / regionRaster.height,
      pad_x: lb.padX,
      pad_y: lb.padY,
    },
  }
}

export function detectRegion(
  model: DetectorModel,
  config: AdapterConfig,
  image: Raster,
  region: [number, number, number, number],
  targetInput: number,
): RawDetection[] {
  return detectRegionWithMeta(model, config, image, region, targetInput).detections
}

export function handleRequest(
  model: DetectorModel,
  config: AdapterConfig,
  cache: ImageCache,
  request: WorkRequest,
): RawDetection[] {
  if (request.image_path === null) {
    throw new Error(`unit ${request.unit_id}: request carries no image path`)
  }
  const image = cache.get(request.image_path)
  return detectRegion(model, config, image, request.region, request.target_input)
}
