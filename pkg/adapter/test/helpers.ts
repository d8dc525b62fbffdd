import { writeFileSync } from 'fs'
import type { StubWeights } from '../src/model.js'

export interface Rect {
  x1: number
  y1: number
  x2: number
  y2: number
  color: [number, number, number]
}

export const BACKGROUND: [number, number, number] = [20, 60, 20]
export const CLASS_COLORS: [number, number, number][] = [
  [200, 40, 40],
  [40, 160, 40],
]

/** Flat-background board with filled rectangles, as binary PPM (P6). */
export function writeBoardPpm(path: string, width: number, height: number, rects: Rect[]): void {
  const data = Buffer.alloc(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    data[i * 3] = BACKGROUND[0]
    data[i * 3 + 1] = BACKGROUND[1]
    data[i * 3 + 2] = BACKGROUND[2]
  }
  for (const rect of rects) {
    for (let y = Math.max(0, rect.y1); y < Math.min(height, rect.y2); y++) {
      for (let x = Math.max(0, rect.x1); x < Math.min(width, rect.x2); x++) {
        const i = (y * width + x) * 3
        data[i] = rect.color[0]
        data[i + 1] = rect.color[1]
        data[i + 2] = rect.color[2]
      }
    }
  }
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, 'ascii')
  writeFileSync(path, Buffer.concat([header, data]))
}

export function stubWeights(): StubWeights {
  return {
    kind: 'stub-rect',
    background: BACKGROUND,
    classes: [
      { id: 0, color: CLASS_COLORS[0] },
      { id: 1, color: CLASS_COLORS[1] },
    ],
    tolerance: 32,
    min_component: 9,
    score: 0.9,
  }
}

export function writeStubWeights(path: string): void {
  writeFileSync(path, JSON.stringify(stubWeights(), null, 2))
}

export function writeAdapterConfig(path: string, weights: string, imagesDir: string): void {
  writeFileSync(
    path,
    JSON.stringify(
      { weights, device: 'cpu', input_size: 640, conf_floor: 0.05, half: false, images_dir: imagesDir },
      null,
      2,
    ),
  )
}
