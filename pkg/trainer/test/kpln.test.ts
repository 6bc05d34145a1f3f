import { describe, expect, it } from 'vitest';

import {
  decode,
  encode,
  expectedBytes,
  KplnFormatError,
  mergeModalities,
  splitModalities,
} from '../src/kpln';
import { mulberry32, randomDescriptor } from './helpers';

describe('kpln serialization', () => {
  it('round-trips byte-exactly on random descriptors', () => {
    const rand = mulberry32(1);
    for (let t = 0; t < 50; t++) {
      const desc = randomDescriptor(rand);
      const blob = encode(desc);
      expect(encode(decode(blob)).equals(blob)).toBe(true);
    }
  });

  it('preserves frames and channels through decode', () => {
    const rand = mulberry32(2);
    const desc = randomDescriptor(rand, 2, 5);
    const back = decode(encode(desc));
    expect(back.numPlanes).toBe(2);
    expect(back.resolution).toBe(5);
    expect(Array.from(back.query)).toEqual(Array.from(desc.query));
    expect(Array.from(back.channels)).toEqual(Array.from(desc.channels));
    for (let p = 0; p < 2; p++) {
      expect(Array.from(back.planes[p].wAxis)).toEqual(Array.from(desc.planes[p].wAxis));
      expect(back.planes[p].side).toBe(desc.planes[p].side);
    }
  });

  it('rejects bad magic', () => {
    const blob = encode(randomDescriptor(mulberry32(3)));
    blob.writeUInt32LE(0xdeadbeef, 0);
    expect(() => decode(blob)).toThrow(KplnFormatError);
    expect(() => decode(blob)).toThrow(/magic/);
  });

  it('rejects truncated and oversized files', () => {
    const blob = encode(randomDescriptor(mulberry32(4)));
    expect(() => decode(blob.subarray(0, blob.length - 4))).toThrow(/size/);
    expect(() => decode(Buffer.concat([blob, Buffer.from([0])]))).toThrow(/size/);
  });

  it('rejects even resolutions', () => {
    const desc = randomDescriptor(mulberry32(5), 1, 3);
    const blob = encode(desc);
    blob.writeUInt32LE(4, 12);
    expect(() => decode(blob)).toThrow(/odd/);
  });

  it('rejects NaN channels', () => {
    const desc = randomDescriptor(mulberry32(6), 1, 3);
    desc.channels[0] = NaN;
    expect(() => decode(encode(desc))).toThrow(/NaN/);
  });

  it('splits and merges modalities losslessly', () => {
    const desc = randomDescriptor(mulberry32(7), 3, 5);
    const merged = mergeModalities(desc, splitModalities(desc));
    expect(Array.from(merged.channels)).toEqual(Array.from(desc.channels));
  });

  it('computes file sizes', () => {
    expect(expectedBytes(3, 35)).toBe(20 + 24 + 3 * 104 + 3 * 5 * 35 * 35 * 4);
  });
});
