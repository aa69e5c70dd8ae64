// Export paths: model softmax/prediction masks into the dataset layout,
// and per-patch features keyed by the pipeline's patch manifest.
// The bridge only ever writes; the pipeline reads.

import { mkdirSync, readdirSync, readFileSync, writeFileSync, existsSync } from 'node:fs'
import { basename, join } from 'node:path'

import { Image, readPpm, writePpm, writeTensor } from './owt.js'
import { FeatureExtractor, SegmentationModel } from './models.js'

export interface ExportManifest {
  model: string
  classes: string[]
  images: string[]
  outputRoot: string
  extractor?: string
  featureDim?: number
  skippedPatches?: number[]
}

function ensureLayout(root: string): void {
  for (const sub of ['images', 'softmax', 'gt', 'features', 'pred']) {
    mkdirSync(join(root, sub), { recursive: true })
  }
}

export function exportSoftmax(
  imagesDir: string,
  outRoot: string,
  model: SegmentationModel,
): ExportManifest {
  ensureLayout(outRoot)
  const ids = readdirSync(imagesDir)
    .filter(f => f.endsWith('.ppm'))
    .sort()
    .map(f => basename(f, '.ppm'))

  for (const id of ids) {
    const img = readPpm(join(imagesDir, `${id}.ppm`))
    const probs = model.predict(img)
    const nc = model.classNames.length
    if (probs.length !== img.width * img.height * nc) {
      throw new Error(`model output shape mismatch for '${id}'`)
    }
    writePpm(img, join(outRoot, 'images', `${id}.ppm`))
    writeTensor(
      { dtype: 'f32', shape: [img.height, img.width, nc], data: Float32Array.from(probs) },
      join(outRoot, 'softmax', `${id}.owt`),
    )
    const mask = new Int32Array(img.width * img.height)
    for (let p = 0; p < mask.length; p++) {
      let best = 0
      for (let k = 1; k < nc; k++) {
        if (probs[nc * p + k] > probs[nc * p + best]) best = k
      }
      mask[p] = best + 1
    }
    writeTensor(
      { dtype: 'i32', shape: [img.height, img.width], data: mask },
      join(outRoot, 'pred', `${id}.owt`),
    )
  }
  const manifest: ExportManifest = {
    model: model.name,
    classes: model.classNames,
    images: ids,
    outputRoot: outRoot,
  }
  writeFileSync(join(outRoot, 'export-manifest.json'), JSON.stringify(manifest, null, 1))
  return manifest
}

interface PatchEntry {
  object_id: number
  image_id: string
  bbox: number[]
}

export function exportPatchFeatures(
  patchManifestPath: string,
  patchesDir: string,
  outRoot: string,
  extractor: FeatureExtractor,
): ExportManifest {
  mkdirSync(join(outRoot, 'features'), { recursive: true })
  const doc = JSON.parse(readFileSync(patchManifestPath, 'utf-8'))
  const patches: PatchEntry[] = doc.patches
  const written: string[] = []
  const skipped: number[] = []
  for (const entry of patches) {
    const ppm = join(patchesDir, `${entry.object_id}.ppm`)
    if (!existsSync(ppm)) {
      skipped.push(entry.object_id)
      continue
    }
    const patch: Image = readPpm(ppm)
    if (patch.width < extractor.minInput || patch.height < extractor.minInput) {
      skipped.push(entry.object_id)
      continue
    }
    const vec = extractor.extract(patch)
    if (vec.length !== extractor.dim) {
      throw new Error(`extractor '${extractor.name}' returned ${vec.length} dims`)
    }
    writeTensor(
      { dtype: 'f32', shape: [extractor.dim], data: Float32Array.from(vec) },
      join(outRoot, 'features', `${entry.object_id}.owt`),
    )
    written.push(String(entry.object_id))
  }
  const manifest: ExportManifest = {
    model: 'n/a',
    classes: [],
    images: written,
    outputRoot: outRoot,
    extractor: extractor.name,
    featureDim: extractor.dim,
    skippedPatches: skipped,
  }
  writeFileSync(join(outRoot, 'features-manifest.json'), JSON.stringify(manifest, null, 1))
  return manifest
}
