#!/usr/bin/env node
/**
 * CLI: `serve --config adapter.json` hosts the subprocess protocol;
 * `export --coco ... --grids ... --config ... --out ...` writes a
 * precomputed-detections directory.
 */

import { loadConfig } from './adapter.js'
import { exportDetections } from './export.js'
import { serve } from './serve.js'

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>()
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    if (!arg.startsWith('--')) throw new Error(`unexpected argument: ${arg}`)
    const value = argv[i + 1]
    if (value === undefined || value.startsWith('--')) throw new Error(`flag ${arg} needs a value`)
    flags.set(arg.slice(2), value)
    i++
  }
  return flags
}

function required(flags: Map<string, string>, name: string): string {
  const value = flags.get(name)
  if (value === undefined) throw new Error(`missing required flag --${name}`)
  return value
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2)
  try {
    if (command === 'serve') {
      const flags = parseFlags(rest)
      return await serve(loadConfig(required(flags, 'config')))
    }
    if (command === 'export') {
      const flags = parseFlags(rest)
      const summary = exportDetections(
        required(flags, 'coco'),
        required(flags, 'grids'),
        loadConfig(required(flags, 'config')),
        required(flags, 'out'),
        flags.get('strategy') ?? 'export',
      )
      process.stderr.write(
        `exported ${summary.records} records for ${summary.images.length} images\n`,
      )
      return 0
    }
    process.stderr.write('usage: tiledet-adapter <serve|export> [--flags]\n')
    return 2
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : String(err)}\n`)
    return 1
  }
}

main().then((code) => process.exit(code))
