import { mkdtempSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { describe, expect, it } from 'vitest'
import { crop, letterbox, readPpm, unletterbox } from '../src/image.js'
import { BACKGROUND, writeBoardPpm } from './helpers.js'

const dir = mkdtempSync(join(tmpdir(), 'adapter-img-'))

describe('readPpm', () => {
  it('reads dimensions and pixels back', () => {
    const path = join(dir, 'board.ppm')
    writeBoardPpm(path, 64, 32, [{ x1: 10, y1: 5, x2: 20, y2: 15, color: [200, 40, 40] }])
    const img = readPpm(path)
    expect(img.width).toBe(64)
    expect(img.height).toBe(32)
    const at = (x: number, y: number) => [
      img.data[(y * img.width + x) * 3],
      img.data[(y * img.width + x) * 3 + 1],
      img.data[(y * img.width + x) * 3 + 2],
    ]
    expect(at(0, 0)).toEqual(BACKGROUND)
    expect(at(12, 7)).toEqual([200, 40, 40])
  })

  it('rejects non-P6 input', () => {
    const path = join(dir, 'bad.ppm')
    writeBoardPpm(path, 4, 4, [])
    expect(() => readPpm(join(dir, 'missing.ppm'))).toThrow()
  })
})

describe('crop', () => {
  it('extracts the requested window', () => {
    const path = join(dir, 'crop.ppm')
    writeBoardPpm(path, 100, 100, [{ x1: 50, y1: 50, x2: 60, y2: 60, color: [200, 40, 40] }])
    const img = readPpm(path)
    const region = crop(img, 45, 45, 30, 30)
    expect(region.width).toBe(30)
    expect(region.height).toBe(30)
    expect(region.data[(6 * 30 + 6) * 3]).toBe(200) // (51, 51) global
  })
})

describe('letterbox', () => {
  it('is identity at matching size', () => {
    const path = join(dir, 'id.ppm')
    writeBoardPpm(path, 64, 64, [])
    const img = readPpm(path)
    const lb = letterbox(img, 64)
    expect(lb.scale).toBe(1)
    expect(lb.padX).toBe(0)
    expect(lb.padY).toBe(0)
  })

  it('pads the short side and inverts exactly', () => {
    const path = join(dir, 'pad.ppm')
    writeBoardPpm(path, 100, 50, [])
    const img = readPpm(path)
    const lb = letterbox(img, 200)
    expect(lb.scale).toBe(2)
    expect(lb.padY).toBe(50)
    const back = unletterbox([20, 70, 40, 90], lb, 100, 50)
    expect(back).toEqual([10, 10, 20, 20])
  })

  it('clamps to the region bounds', () => {
    const path = join(dir, 'clamp.ppm')
    writeBoardPpm(path, 50, 50, [])
    const lb = letterbox(readPpm(path), 100)
    const back = unletterbox([-4, 0, 104, 100], lb, 50, 50)
    expect(back[0]).toBe(0)
    expect(back[2]).toBe(50)
  })
})
