// OWT1 tensor files and binary PPM images, byte-compatible with the
// owseg pipeline. Layout: magic "OWT1", dtype code u8 (1=u8, 2=i32,
// 3=f32, 4=f64), ndim u8, ndim little-endian u64 extents, row-major
// little-endian payload.

import { readFileSync, writeFileSync } from 'node:fs'

export type Dtype = 'u8' | 'i32' | 'f32' | 'f64'

const DTYPE_CODE: Record<Dtype, number> = { u8: 1, i32: 2, f32: 3, f64: 4 }
const CODE_DTYPE: Record<number, Dtype> = { 1: 'u8', 2: 'i32', 3: 'f32', 4: 'f64' }
const ITEM_SIZE: Record<Dtype, number> = { u8: 1, i32: 4, f32: 4, f64: 8 }

export interface Tensor {
  dtype: Dtype
  shape: number[]
  data: Uint8Array | Int32Array | Float32Array | Float64Array
}

function product(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1)
}

export function writeTensor(t: Tensor, path: string): void {
  if (t.shape.length === 0 || t.shape.some(d => d < 1)) {
    throw new Error(`invalid shape [${t.shape}]`)
  }
  if (product(t.shape) !== t.data.length) {
    throw new Error(`shape [${t.shape}] does not match ${t.data.length} values`)
  }
  const itemSize = ITEM_SIZE[t.dtype]
  const header = Buffer.alloc(6 + 8 * t.shape.length)
  header.write('OWT1', 0, 'ascii')
  header.writeUInt8(DTYPE_CODE[t.dtype], 4)
  header.writeUInt8(t.shape.length, 5)
  t.shape.forEach((d, i) => header.writeBigUInt64LE(BigInt(d), 6 + 8 * i))

  const payload = Buffer.alloc(t.data.length * itemSize)
  const view = new DataView(payload.buffer, payload.byteOffset)
  for (let i = 0; i < t.data.length; i++) {
    const v = t.data[i]
    if (t.dtype === 'u8') view.setUint8(i, v)
    else if (t.dtype === 'i32') view.setInt32(4 * i, v, true)
    else if (t.dtype === 'f32') view.setFloat32(4 * i, v, true)
    else view.setFloat64(8 * i, v, true)
  }
  writeFileSync(path, Buffer.concat([header, payload]))
}

export function readTensor(path: string): Tensor {
  const raw = readFileSync(path)
  if (raw.length < 6 || raw.toString('ascii', 0, 4) !== 'OWT1') {
    throw new Error(`${path}: not an OWT1 file`)
  }
  const dtype = CODE_DTYPE[raw.readUInt8(4)]
  if (!dtype) throw new Error(`${path}: unknown dtype code`)
  const ndim = raw.readUInt8(5)
  const shape: number[] = []
  for (let i = 0; i < ndim; i++) {
    shape.push(Number(raw.readBigUInt64LE(6 + 8 * i)))
  }
  const n = product(shape)
  const offset = 6 + 8 * ndim
  if (raw.length !== offset + n * ITEM_SIZE[dtype]) {
    throw new Error(`${path}: truncated payload`)
  }
  const view = new DataView(raw.buffer, raw.byteOffset + offset)
  let data: Tensor['data']
  if (dtype === 'u8') {
    data = new Uint8Array(n)
    for (let i = 0; i < n; i++) data[i] = view.getUint8(i)
  } else if (dtype === 'i32') {
    data = new Int32Array(n)
    for (let i = 0; i < n; i++) data[i] = view.getInt32(4 * i, true)
  } else if (dtype === 'f32') {
    data = new Float32Array(n)
    for (let i = 0; i < n; i++) data[i] = view.getFloat32(4 * i, true)
  } else {
    data = new Float64Array(n)
    for (let i = 0; i < n; i++) data[i] = view.getFloat64(8 * i, true)
  }
  return { dtype, shape, data }
}

export interface Image {
  width: number
  height: number
  rgb: Uint8Array // packed (h, w, 3)
}

export function writePpm(img: Image, path: string): void {
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, 'ascii')
  writeFileSync(path, Buffer.concat([header, Buffer.from(img.rgb)]))
}

export function readPpm(path: string): Image {
  const raw = readFileSync(path)
  if (raw.toString('ascii', 0, 2) !== 'P6') throw new Error(`${path}: not P6`)
  // header fields separated by whitespace, '#' comments run to newline
  const fields: number[] = []
  let pos = 2
  while (fields.length < 3) {
    while (pos < raw.length && /\s/.test(String.fromCharCode(raw[pos]))) pos++
    if (raw[pos] === 0x23) {
      while (pos < raw.length && raw[pos] !== 0x0a) pos++
      continue
    }
    let start = pos
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos++
    fields.push(parseInt(raw.toString('ascii', start, pos), 10))
  }
  pos++
  const [width, height, maxval] = fields
  if (maxval !== 255) throw new Error(`${path}: only 8-bit PPM supported`)
  const need = width * height * 3
  if (raw.length < pos + need) throw new Error(`${path}: truncated payload`)
  return { width, height, rgb: new Uint8Array(raw.subarray(pos, pos + need)) }
}
