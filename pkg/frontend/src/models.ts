// Model interfaces plus deterministic built-in stand-ins.
//
// Real pretrained networks slot in behind these two interfaces; the
// built-ins keep the bridge runnable offline. The built-in extractor
// pools its convolutional maps over both spatial dimensions, so the
// output dimension never depends on patch size (the same property the
// adaptive-average-pool head of the reference extractors provides).

import { Image } from './owt.js'

export interface SegmentationModel {
  name: string
  classNames: string[]
  /** per-pixel class probabilities, packed (h, w, c), rows sum to 1 */
  predict(img: Image): Float64Array
}

export interface FeatureExtractor {
  name: string
  dim: number
  minInput: number
  extract(patch: Image): Float64Array
}

/** mulberry32: small deterministic PRNG, good enough for weight init */
export function rng(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a |= 0
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function gaussianWeights(n: number, scale: number, seed: number): Float64Array {
  const rand = rng(seed)
  const out = new Float64Array(n)
  for (let i = 0; i < n; i += 2) {
    const u = Math.max(rand(), 1e-12)
    const v = rand()
    const r = Math.sqrt(-2 * Math.log(u))
    out[i] = r * Math.cos(2 * Math.PI * v) * scale
    if (i + 1 < n) out[i + 1] = r * Math.sin(2 * Math.PI * v) * scale
  }
  return out
}

/** 3x3 convolution bank over normalized RGB, zero padding, tanh. */
function convFeatures(img: Image, filters: Float64Array, channels: number): Float64Array {
  const { width: w, height: h, rgb } = img
  const out = new Float64Array(h * w * channels)
  for (let r = 0; r < h; r++) {
    for (let c = 0; c < w; c++) {
      for (let k = 0; k < channels; k++) {
        let acc = 0
        for (let dr = -1; dr <= 1; dr++) {
          for (let dc = -1; dc <= 1; dc++) {
            const nr = r + dr
            const nc = c + dc
            if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue
            const base = 27 * k + 3 * (3 * (dr + 1) + (dc + 1))
            const px = 3 * (nr * w + nc)
            acc += filters[base] * (rgb[px] / 255)
            acc += filters[base + 1] * (rgb[px + 1] / 255)
            acc += filters[base + 2] * (rgb[px + 2] / 255)
          }
        }
        out[channels * (r * w + c) + k] = Math.tanh(acc)
      }
    }
  }
  return out
}

export class ToyConvSegmenter implements SegmentationModel {
  name: string
  classNames: string[]
  private filters: Float64Array
  private head: Float64Array
  private channels = 8

  constructor(nClasses: number, seed = 0) {
    this.name = `toy-conv-${nClasses}c-s${seed}`
    this.classNames = Array.from({ length: nClasses }, (_, i) => `class_${i + 1}`)
    this.filters = gaussianWeights(27 * this.channels, 0.6, seed)
    // head maps [rgb, conv] -> logits
    this.head = gaussianWeights(nClasses * (3 + this.channels), 1.5, seed + 1)
  }

  predict(img: Image): Float64Array {
    const { width: w, height: h, rgb } = img
    const nc = this.classNames.length
    const nf = 3 + this.channels
    const conv = convFeatures(img, this.filters, this.channels)
    const out = new Float64Array(h * w * nc)
    const logits = new Float64Array(nc)
    for (let p = 0; p < h * w; p++) {
      let maxLogit = -Infinity
      for (let k = 0; k < nc; k++) {
        let acc = 0
        for (let j = 0; j < 3; j++) acc += this.head[nf * k + j] * (rgb[3 * p + j] / 255)
        for (let j = 0; j < this.channels; j++) {
          acc += this.head[nf * k + 3 + j] * conv[this.channels * p + j]
        }
        logits[k] = acc
        if (acc > maxLogit) maxLogit = acc
      }
      let sum = 0
      for (let k = 0; k < nc; k++) {
        logits[k] = Math.exp(logits[k] - maxLogit)
        sum += logits[k]
      }
      // open-interval clamp, then renormalize
      let total = 0
      for (let k = 0; k < nc; k++) {
        logits[k] = Math.max(logits[k] / sum, 1e-6)
        total += logits[k]
      }
      for (let k = 0; k < nc; k++) out[nc * p + k] = logits[k] / total
    }
    return out
  }
}

export class GapConvExtractor implements FeatureExtractor {
  name: string
  dim: number
  minInput: number
  private filters: Float64Array

  constructor(name: string, dim: number, minInput = 8, seed = 0) {
    this.name = name
    this.dim = dim
    this.minInput = minInput
    this.filters = gaussianWeights(27 * dim, 0.6, seed)
  }

  extract(patch: Image): Float64Array {
    const { width: w, height: h } = patch
    if (w < this.minInput || h < this.minInput) {
      throw new Error(`patch ${w}x${h} below minimum input ${this.minInput}`)
    }
    const conv = convFeatures(patch, this.filters, this.dim)
    const pooled = new Float64Array(this.dim)
    const n = w * h
    for (let p = 0; p < n; p++) {
      for (let k = 0; k < this.dim; k++) pooled[k] += conv[this.dim * p + k]
    }
    for (let k = 0; k < this.dim; k++) pooled[k] /= n
    return pooled
  }
}

// stand-ins named after the reference extractors, emitting the same
// penultimate-layer dimensionality
export function extractorByName(name: string, seed = 0): FeatureExtractor {
  switch (name) {
    case 'densenet201-stub':
      return new GapConvExtractor(name, 1920, 8, seed)
    case 'resnet18-stub':
      return new GapConvExtractor(name, 512, 8, seed)
    case 'resnet152-stub':
      return new GapConvExtractor(name, 2048, 8, seed)
    case 'small-stub':
      return new GapConvExtractor(name, 64, 8, seed)
    default:
      throw new Error(`unknown extractor '${name}'`)
  }
}
