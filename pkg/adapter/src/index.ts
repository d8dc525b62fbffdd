export {
  AdapterConfigSchema,
  loadConfig,
  detectRegion,
  detectRegionWithMeta,
  handleRequest,
  ImageCache,
} from './adapter.js'
export { exportDetections } from './export.js'
export { serve } from './serve.js'
export { loadModel, StubRectangleModel } from './model.js'
export { crop, letterbox, readImage, readPng, readPpm, unletterbox } from './image.js'
export {
  HandshakeSchema,
  RequestSchema,
  ResponseSchema,
  DetectionRecordSchema,
  GridManifestSchema,
  PROTOCOL_VERSION,
  recordToLine,
} from './protocol.js'
