/**
 * Binary descriptor files (.kpln), bit-compatible with the core toolkit.
 *
 * Layout, little-endian:
 *   magic "KPLN" | version u32 | K u32 | R u32 | C u32 (= 5)
 *   query point 3 x f64
 *   per plane: origin 3 x f64, u/v/w axes 9 x f64, side f64
 *   channels plane-major, order [depth, valid, nx, ny, nz], row-major f32
 */

import * as fs from 'fs';

export const MAGIC = 0x4e4c504b; // "KPLN" as little-endian u32
export const VERSION = 1;
export const NUM_CHANNELS = 5;

const HEADER_BYTES = 20;
const QUERY_BYTES = 24;
const PLANE_BYTES = 13 * 8;

export interface PlaneFrame {
  origin: Float64Array; // 3
  uAxis: Float64Array; // 3
  vAxis: Float64Array; // 3
  wAxis: Float64Array; // 3
  side: number;
}

export interface Descriptor {
  numPlanes: number;
  resolution: number;
  query: Float64Array; // 3
  planes: PlaneFrame[];
  /** [plane][channel][row][col], channel order depth, valid, nx, ny, nz */
  channels: Float32Array;
}

export class KplnFormatError extends Error {}

export function channelIndex(d: Descriptor, plane: number, channel: number, i: number, j: number): number {
  const r = d.resolution;
  return ((plane * NUM_CHANNELS + channel) * r + i) * r + j;
}

export function expectedBytes(numPlanes: number, resolution: number): number {
  return (
    HEADER_BYTES + QUERY_BYTES + numPlanes * PLANE_BYTES +
    numPlanes * NUM_CHANNELS * resolution * resolution * 4
  );
}

export function decode(blob: Buffer): Descriptor {
  if (blob.length < HEADER_BYTES) {
    throw new KplnFormatError('file too short for header');
  }
  if (blob.readUInt32LE(0) !== MAGIC) {
    throw new KplnFormatError('bad magic');
  }
  const version = blob.readUInt32LE(4);
  if (version !== VERSION) {
    throw new KplnFormatError(`unsupported version ${version}`);
  }
  const numPlanes = blob.readUInt32LE(8);
  const resolution = blob.readUInt32LE(12);
  const numChannels = blob.readUInt32LE(16);
  if (numChannels !== NUM_CHANNELS) {
    throw new KplnFormatError(`expected ${NUM_CHANNELS} channels per plane, got ${numChannels}`);
  }
  if (numPlanes < 1) {
    throw new KplnFormatError('plane count must be >= 1');
  }
  if (resolution < 3 || resolution % 2 === 0) {
    throw new KplnFormatError(`resolution must be odd and >= 3, got ${resolution}`);
  }
  const expected = expectedBytes(numPlanes, resolution);
  if (blob.length !== expected) {
    throw new KplnFormatError(`file size ${blob.length} != expected ${expected}`);
  }

  let offset = HEADER_BYTES;
  const query = new Float64Array(3);
  for (let c = 0; c < 3; c++) {
    query[c] = blob.readDoubleLE(offset);
    offset += 8;
  }
  const planes: PlaneFrame[] = [];
  for (let p = 0; p < numPlanes; p++) {
    const vals = new Float64Array(13);
    for (let c = 0; c < 13; c++) {
      vals[c] = blob.readDoubleLE(offset);
      offset += 8;
    }
    planes.push({
      origin: vals.slice(0, 3),
      uAxis: vals.slice(3, 6),
      vAxis: vals.slice(6, 9),
      wAxis: vals.slice(9, 12),
      side: vals[12],
    });
  }

  const count = numPlanes * NUM_CHANNELS * resolution * resolution;
  const channels = new Float32Array(count);
  for (let t = 0; t < count; t++) {
    channels[t] = blob.readFloatLE(offset + 4 * t);
  }
  for (let t = 0; t < count; t++) {
    if (!Number.isFinite(channels[t])) {
      throw new KplnFormatError('channels contain NaN or infinite values');
    }
  }
  return { numPlanes, resolution, query, planes, channels };
}

export function encode(d: Descriptor): Buffer {
  const blob = Buffer.alloc(expectedBytes(d.numPlanes, d.resolution));
  blob.writeUInt32LE(MAGIC, 0);
  blob.writeUInt32LE(VERSION, 4);
  blob.writeUInt32LE(d.numPlanes, 8);
  blob.writeUInt32LE(d.resolution, 12);
  blob.writeUInt32LE(NUM_CHANNELS, 16);
  let offset = HEADER_BYTES;
  for (let c = 0; c < 3; c++) {
    blob.writeDoubleLE(d.query[c], offset);
    offset += 8;
  }
  for (const plane of d.planes) {
    for (const arr of [plane.origin, plane.uAxis, plane.vAxis, plane.wAxis]) {
      for (let c = 0; c < 3; c++) {
        blob.writeDoubleLE(arr[c], offset);
        offset += 8;
      }
    }
    blob.writeDoubleLE(plane.side, offset);
    offset += 8;
  }
  for (let t = 0; t < d.channels.length; t++) {
    blob.writeFloatLE(d.channels[t], offset + 4 * t);
  }
  return blob;
}

export function readKpln(path: string): Descriptor {
  return decode(fs.readFileSync(path));
}

export function writeKpln(path: string, d: Descriptor): void {
  fs.writeFileSync(path, encode(d));
}

/** Channel planes split by modality, each length K*R*R (normals 3*K*R*R). */
export interface Modalities {
  depth: Float32Array;
  valid: Float32Array;
  normal: Float32Array;
}

export function splitModalities(d: Descriptor): Modalities {
  const r = d.resolution;
  const cells = r * r;
  const depth = new Float32Array(d.numPlanes * cells);
  const valid = new Float32Array(d.numPlanes * cells);
  const normal = new Float32Array(d.numPlanes * 3 * cells);
  for (let p = 0; p < d.numPlanes; p++) {
    for (let t = 0; t < cells; t++) {
      depth[p * cells + t] = d.channels[(p * NUM_CHANNELS + 0) * cells + t];
      valid[p * cells + t] = d.channels[(p * NUM_CHANNELS + 1) * cells + t];
      for (let c = 0; c < 3; c++) {
        normal[(p * 3 + c) * cells + t] = d.channels[(p * NUM_CHANNELS + 2 + c) * cells + t];
      }
    }
  }
  return { depth, valid, normal };
}

export function mergeModalities(base: Descriptor, m: Modalities): Descriptor {
  const r = base.resolution;
  const cells = r * r;
  const channels = new Float32Array(base.channels.length);
  for (let p = 0; p < base.numPlanes; p++) {
    for (let t = 0; t < cells; t++) {
      channels[(p * NUM_CHANNELS + 0) * cells + t] = m.depth[p * cells + t];
      channels[(p * NUM_CHANNELS + 1) * cells + t] = m.valid[p * cells + t];
      for (let c = 0; c < 3; c++) {
        channels[(p * NUM_CHANNELS + 2 + c) * cells + t] = m.normal[(p * 3 + c) * cells + t];
      }
    }
  }
  return { ...base, planes: base.planes.slice(), channels };
}
