/**
 * Wire schemas for the detector backend protocol and the detection
 * interchange format (newline-delimited JSON on both).
 */

import { z } from 'zod'

export const PROTOCOL_VERSION = 1

export const HandshakeSchema = z.object({
  protocol_version: z.literal(PROTOCOL_VERSION),
  backend_id: z.string(),
  max_in_flight: z.number().int().positive(),
})
export type Handshake = z.infer<typeof HandshakeSchema>

export const RequestSchema = z.object({
  unit_id: z.string(),
  image_path: z.string().nullable(),
  region: z.tuple([z.number(), z.number(), z.number(), z.number()]), // x0, y0, w, h
  target_input: z.number().int().positive(),
})
export type WorkRequest = z.infer<typeof RequestSchema>

export const RawDetectionSchema = z.object({
  box: z.tuple([z.number(), z.number(), z.number(), z.number()]), // region-local x1, y1, x2, y2
  score: z.number().min(0).max(1),
  class_id: z.number().int().nonnegative(),
})
export type RawDetection = z.infer<typeof RawDetectionSchema>

/** Effective letterbox scales, informational (boxes are already region-local). */
export const ResponseMetaSchema = z.object({
  scale_x: z.number().positive(),
  scale_y: z.number().positive(),
  pad_x: z.number().nonnegative(),
  pad_y: z.number().nonnegative(),
})

export const ResponseSchema = z.union([
  z.object({
    unit_id: z.string(),
    detections: z.array(RawDetectionSchema),
    meta: ResponseMetaSchema.optional(),
  }),
  z.object({ unit_id: z.string(), error: z.string() }),
])
export type WorkResponse = z.infer<typeof ResponseSchema>

/** One line of the interchange file consumed by the precomputed backend. */
export const DetectionRecordSchema = z.object({
  image_id: z.string(),
  strategy: z.string(),
  tile: z
    .object({
      row: z.number().int(),
      col: z.number().int(),
      x0: z.number().int(),
      y0: z.number().int(),
      w: z.number().int(),
      h: z.number().int(),
    })
    .nullable(),
  box_tile: z.tuple([z.number(), z.number(), z.number(), z.number()]).nullable(),
  box_global: z.tuple([z.number(), z.number(), z.number(), z.number()]),
  score: z.number().min(0).max(1),
  class_id: z.number().int().nonnegative(),
  class_name: z.string().nullable(),
  boundary_distance: z.number().nullable(),
  agreement: z.number().nullable(),
  adjusted_score: z.number().nullable(),
})
export type DetectionRecord = z.infer<typeof DetectionRecordSchema>

/** Grid manifest written by `tiledet plan` (single image or dataset form). */
export const GridManifestSchema = z.object({
  image_id: z.string(),
  image_w: z.number().int(),
  image_h: z.number().int(),
  tile_size: z.number().int(),
  stride: z.number().int(),
  tiles: z.array(
    z.object({
      row: z.number().int(),
      col: z.number().int(),
      x0: z.number().int(),
      y0: z.number().int(),
      w: z.number().int(),
      h: z.number().int(),
    }),
  ),
})
export type GridManifest = z.infer<typeof GridManifestSchema>

export const GridFileSchema = z.union([
  z.object({ grids: z.array(GridManifestSchema) }),
  GridManifestSchema,
])

export function round6(value: number): number {
  return Math.round(value * 1e6) / 1e6
}

/** Serialize an interchange record with the fixed key order the readers expect. */
export function recordToLine(record: DetectionRecord): string {
  const box6 = (b: readonly number[]) => b.map(round6)
  return JSON.stringify({
    image_id: record.image_id,
    strategy: record.strategy,
    tile: record.tile,
    box_tile: record.box_tile === null ? null : box6(record.box_tile),
    box_global: box6(record.box_global),
    score: round6(record.score),
    class_id: record.class_id,
    class_name: record.class_name,
    boundary_distance: record.boundary_distance === null ? null : round6(record.boundary_distance),
    agreement: record.agreement === null ? null : round6(record.agreement),
    adjusted_score: record.adjusted_score === null ? null : round6(record.adjusted_score),
  })
}
