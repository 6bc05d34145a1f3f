import { Descriptor, NUM_CHANNELS, PlaneFrame } from '../src/kpln';

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function normalize(v: Float64Array): Float64Array {
  const n = Math.hypot(v[0], v[1], v[2]);
  return new Float64Array([v[0] / n, v[1] / n, v[2] / n]);
}

export function randomFrame(rand: () => number): PlaneFrame {
  const w = normalize(new Float64Array([rand() - 0.5, rand() - 0.5, rand() - 0.5]));
  let seed = new Float64Array([rand() - 0.5, rand() - 0.5, rand() - 0.5]);
  const dot = seed[0] * w[0] + seed[1] * w[1] + seed[2] * w[2];
  const u = normalize(
    new Float64Array([seed[0] - dot * w[0], seed[1] - dot * w[1], seed[2] - dot * w[2]]),
  );
  const v = new Float64Array([
    w[1] * u[2] - w[2] * u[1],
    w[2] * u[0] - w[0] * u[2],
    w[0] * u[1] - w[1] * u[0],
  ]);
  return {
    origin: new Float64Array([rand() - 0.5, rand() - 0.5, rand() - 0.5]),
    uAxis: u,
    vAxis: v,
    wAxis: w,
    side: 0.5 + rand(),
  };
}

/** Random descriptor with f32 channels; valid flags binary, normals unit
 * at valid cells and zero elsewhere, depth zero at invalid cells. */
export function randomDescriptor(
  rand: () => number,
  numPlanes?: number,
  resolution?: number,
): Descriptor {
  const k = numPlanes ?? 1 + Math.floor(rand() * 3);
  const r = resolution ?? [3, 5, 7][Math.floor(rand() * 3)];
  const cells = r * r;
  const origin = new Float64Array([rand() - 0.5, rand() - 0.5, rand() - 0.5]);
  const planes: PlaneFrame[] = [];
  for (let p = 0; p < k; p++) {
    const frame = randomFrame(rand);
    frame.origin = origin;
    planes.push(frame);
  }
  const channels = new Float32Array(k * NUM_CHANNELS * cells);
  for (let p = 0; p < k; p++) {
    for (let t = 0; t < cells; t++) {
      const valid = rand() < 0.5 ? 1 : 0;
      channels[(p * NUM_CHANNELS + 1) * cells + t] = valid;
      if (valid) {
        channels[(p * NUM_CHANNELS + 0) * cells + t] = Math.fround(0.2 * (rand() - 0.5));
        const n = normalize(
          new Float64Array([rand() - 0.5, rand() - 0.5, rand() - 0.5]),
        );
        for (let c = 0; c < 3; c++) {
          channels[(p * NUM_CHANNELS + 2 + c) * cells + t] = Math.fround(n[c]);
        }
      }
    }
  }
  return { numPlanes: k, resolution: r, query: origin, planes, channels };
}
