import assert from 'node:assert/strict'
import { mkdirSync, mkdtempSync, readFileSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { test } from 'node:test'

import { exportPatchFeatures, exportSoftmax } from '../src/export.js'
import { extractorByName, ToyConvSegmenter } from '../src/models.js'
import { Image, readTensor, writePpm } from '../src/owt.js'

function tmp(): string {
  return mkdtempSync(join(tmpdir(), 'bridge-'))
}

function blockImage(size: number, seedByte: number): Image {
  const rgb = new Uint8Array(size * size * 3)
  for (let i = 0; i < rgb.length; i++) rgb[i] = (seedByte + i * 13) % 256
  return { width: size, height: size, rgb }
}

function writeImages(dir: string, n: number, size = 16): void {
  mkdirSync(dir, { recursive: true })
  for (let i = 0; i < n; i++) {
    writePpm(blockImage(size, 20 * i), join(dir, `img_${i}.ppm`))
  }
}

test('softmax export: normalized rows inside the open interval', () => {
  const root = tmp()
  writeImages(join(root, 'raw'), 3)
  const model = new ToyConvSegmenter(4, 1)
  const manifest = exportSoftmax(join(root, 'raw'), join(root, 'ds'), model)
  assert.equal(manifest.images.length, 3)
  assert.deepEqual(manifest.classes, ['class_1', 'class_2', 'class_3', 'class_4'])
  for (const id of manifest.images) {
    const t = readTensor(join(root, 'ds', 'softmax', `${id}.owt`))
    assert.equal(t.dtype, 'f32')
    assert.deepEqual(t.shape, [16, 16, 4])
    for (let p = 0; p < 16 * 16; p++) {
      let sum = 0
      for (let k = 0; k < 4; k++) {
        const v = t.data[4 * p + k]
        assert.ok(v > 0 && v < 1)
        sum += v
      }
      assert.ok(Math.abs(sum - 1) < 1e-4)
    }
    const mask = readTensor(join(root, 'ds', 'pred', `${id}.owt`))
    assert.equal(mask.dtype, 'i32')
    for (const v of mask.data) assert.ok(v >= 1 && v <= 4)
  }
})

test('softmax export is deterministic', () => {
  const root = tmp()
  writeImages(join(root, 'raw'), 2)
  const a = join(root, 'a')
  const b = join(root, 'b')
  exportSoftmax(join(root, 'raw'), a, new ToyConvSegmenter(3, 7))
  exportSoftmax(join(root, 'raw'), b, new ToyConvSegmenter(3, 7))
  const fa = readFileSync(join(a, 'softmax', 'img_0.owt'))
  const fb = readFileSync(join(b, 'softmax', 'img_0.owt'))
  assert.deepEqual(fa, fb)
})

function writePatchSet(dir: string): string {
  mkdirSync(dir, { recursive: true })
  const entries = []
  for (const [oid, size] of [[0, 16], [1, 24], [2, 4]] as const) {
    writePpm(blockImage(size, 11 * oid + 3), join(dir, `${oid}.ppm`))
    entries.push({ object_id: oid, image_id: `img_${oid}`, bbox: [0, 0, size, size] })
  }
  const manifestPath = join(dir, 'manifest.json')
  writeFileSync(manifestPath, JSON.stringify({ patches: entries }))
  return manifestPath
}

test('feature export: constant dimension, undersized patches skipped', () => {
  const root = tmp()
  const manifestPath = writePatchSet(join(root, 'patches'))
  for (const [name, dim] of [
    ['densenet201-stub', 1920],
    ['resnet18-stub', 512],
  ] as const) {
    const out = join(root, name)
    const manifest = exportPatchFeatures(manifestPath, join(root, 'patches'), out, extractorByName(name))
    assert.equal(manifest.featureDim, dim)
    assert.deepEqual(manifest.skippedPatches, [2]) // 4x4 below minimum input
    for (const oid of manifest.images) {
      const t = readTensor(join(out, 'features', `${oid}.owt`))
      assert.equal(t.dtype, 'f32')
      assert.deepEqual(t.shape, [dim])
      for (const v of t.data) assert.ok(Number.isFinite(v))
    }
  }
})

test('feature export is deterministic and size-independent in dimension', () => {
  const root = tmp()
  const manifestPath = writePatchSet(join(root, 'patches'))
  const ex = extractorByName('small-stub')
  const m1 = exportPatchFeatures(manifestPath, join(root, 'patches'), join(root, 'o1'), ex)
  const m2 = exportPatchFeatures(manifestPath, join(root, 'patches'), join(root, 'o2'), ex)
  assert.deepEqual(m1.images, m2.images)
  for (const oid of m1.images) {
    const a = readFileSync(join(root, 'o1', 'features', `${oid}.owt`))
    const b = readFileSync(join(root, 'o2', 'features', `${oid}.owt`))
    assert.deepEqual(a, b)
  }
  // patches of different sizes produced the same dimensionality
  const d16 = readTensor(join(root, 'o1', 'features', '0.owt')).shape
  const d24 = readTensor(join(root, 'o1', 'features', '1.owt')).shape
  assert.deepEqual(d16, d24)
})
