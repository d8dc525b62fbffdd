/**
 * Export mode: run the model over every tile of every image's grid
 * manifest and write one interchange file per image, consumable by the
 * precomputed backend. Shares the detection core with serve mode, so the
 * two modes produce identical results for identical inputs.
 */

import { mkdirSync, readFileSync, writeFileSync } from 'fs'
import { join } from 'path'
import { AdapterConfig, ImageCache, detectRegion } from './adapter.js'
import { loadModel } from './model.js'
import {
  GridFileSchema,
  GridManifest,
  recordToLine,
  round6,
  type DetectionRecord,
} from './protocol.js'

interface CocoImage {
  id: number
  file_name: string
  width: number
  height: number
}

function imageIdOf(fileName: string): string {
  // mirror of the primary's ingest: file name stem, slashes flattened
  const stem = fileName.replace(/\.[^./]+$/, '')
  return stem.replace(/\//g, '_')
}

export interface ExportSummary {
  backend_id: string
  strategy: string
  images: string[]
  records: number
}

export function exportDetections(
  cocoPath: string,
  gridsPath: string,
  config: AdapterConfig,
  outDir: string,
  strategy = 'export',
): ExportSummary {
  const model = loadModel(config.weights)
  const cache = new ImageCache(config.images_dir)
  const backendId = `yolo-adapter:${model.modelId}`

  const coco = JSON.parse(readFileSync(cocoPath, 'utf-8'))
  const images: CocoImage[] = coco.images ?? []
  const fileByImageId = new Map<string, string>()
  for (const img of images) fileByImageId.set(imageIdOf(img.file_name), img.file_name)

  const gridFile = GridFileSchema.parse(JSON.parse(readFileSync(gridsPath, 'utf-8')))
  const grids: GridManifest[] = 'grids' in gridFile ? gridFile.grids : [gridFile]

  mkdirSync(outDir, { recursive: true })
  let total = 0
  const exported: string[] = []
  for (const grid of grids) {
    const fileName = fileByImageId.get(grid.image_id)
    if (fileName === undefined) continue
    const raster = cache.get(fileName)
    const lines: string[] = []
    for (const tile of grid.tiles) {
      const detections = detectRegion(
        model,
        config,
        raster,
        [tile.x0, tile.y0, tile.w, tile.h],
        grid.tile_size,
      )
      for (const det of detections) {
        const record: DetectionRecord = {
          image_id: grid.image_id,
          strategy,
          tile,
          box_tile: det.box,
          box_global: [
            round6(det.box[0] + tile.x0),
            round6(det.box[1] + tile.y0),
            round6(det.box[2] + tile.x0),
            round6(det.box[3] + tile.y0),
          ],
          score: det.score,
          class_id: det.class_id,
          class_name: null,
          boundary_distance: null,
          agreement: null,
          adjusted_score: null,
        }
        lines.push(recordToLine(record))
        total++
      }
    }
    writeFileSync(join(outDir, `${grid.image_id}.jsonl`), lines.map((l) => l + '\n').join(''))
    exported.push(grid.image_id)
  }
  const summary: ExportSummary = {
    backend_id: backendId,
    strategy,
    images: exported,
    records: total,
  }
  writeFileSync(join(outDir, 'index.json'), JSON.stringify(summary, null, 2) + '\n')
  return summary
}
