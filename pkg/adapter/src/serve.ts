/**
 * Serve mode: long-running process speaking the backend protocol on
 * stdin/stdout. Model-load failures exit non-zero before the handshake;
 * per-request failures produce an error response and the process stays up.
 */

import { createInterface } from 'readline'
import { AdapterConfig, ImageCache, detectRegionWithMeta } from './adapter.js'
import { loadModel } from './model.js'
import { PROTOCOL_VERSION, RequestSchema, type WorkResponse } from './protocol.js'

export async function serve(config: AdapterConfig): Promise<number> {
  const model = loadModel(config.weights) // throws before handshake on bad weights
  const cache = new ImageCache(config.images_dir)

  const write = (response: WorkResponse | object) => {
    process.stdout.write(JSON.stringify(response) + '\n')
  }

  write({
    protocol_version: PROTOCOL_VERSION,
    backend_id: `yolo-adapter:${model.modelId}`,
    max_in_flight: 1,
  })

  const lines = createInterface({ input: process.stdin, crlfDelay: Infinity })
  for await (const line of lines) {
    const text = line.trim()
    if (!text) continue
    let unitId = ''
    try {
      const request = RequestSchema.parse(JSON.parse(text))
      unitId = request.unit_id
      if (request.image_path === null) {
        throw new Error(`unit ${unitId}: request carries no image path`)
      }
      const image = cache.get(request.image_path)
      const result = detectRegionWithMeta(model, config, image, request.region, request.target_input)
      write({ unit_id: unitId, detections: result.detections, meta: result.meta })
    } catch (err) {
      write({ unit_id: unitId, error: err instanceof Error ? err.message : String(err) })
    }
  }
  return 0
}
