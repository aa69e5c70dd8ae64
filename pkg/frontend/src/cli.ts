// bridge CLI:
//   export-softmax  --images DIR --out ROOT [--classes N] [--seed S]
//   export-features --patch-manifest FILE --patches DIR --out ROOT
//                   [--extractor NAME] [--seed S]

import { exportPatchFeatures, exportSoftmax } from './export.js'
import { extractorByName, ToyConvSegmenter } from './models.js'

function parseArgs(argv: string[]): { verb: string; opts: Record<string, string> } {
  const [verb, ...rest] = argv
  const opts: Record<string, string> = {}
  for (let i = 0; i < rest.length; i += 2) {
    if (!rest[i].startsWith('--') || i + 1 >= rest.length) {
      throw new Error(`malformed arguments near '${rest[i]}'`)
    }
    opts[rest[i].slice(2)] = rest[i + 1]
  }
  return { verb, opts }
}

function main(argv: string[]): number {
  const { verb, opts } = parseArgs(argv)
  const seed = parseInt(opts.seed ?? '0', 10)
  if (verb === 'export-softmax') {
    const nClasses = parseInt(opts.classes ?? '3', 10)
    const model = new ToyConvSegmenter(nClasses, seed)
    const manifest = exportSoftmax(opts.images, opts.out, model)
    console.log(`exported softmax for ${manifest.images.length} images (${model.name})`)
    return 0
  }
  if (verb === 'export-features') {
    const extractor = extractorByName(opts.extractor ?? 'densenet201-stub', seed)
    const manifest = exportPatchFeatures(
      opts['patch-manifest'],
      opts.patches,
      opts.out,
      extractor,
    )
    console.log(
      `exported ${manifest.images.length} feature vectors ` +
        `(dim ${manifest.featureDim}, skipped ${manifest.skippedPatches?.length ?? 0})`,
    )
    return 0
  }
  console.error(`unknown verb '${verb}'`)
  return 2
}

process.exit(main(process.argv.slice(2)))
