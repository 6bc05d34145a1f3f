/**
 * One-shot inference: read a descriptor file, run the model, write the
 * completed descriptor. The skip rule is imposed on the raw prediction:
 * input-valid cells keep their exact input values, cells invalid on both
 * sides get zero depth and normals, and valid flags are clamped to [0, 1].
 */

import * as tf from '@tensorflow/tfjs';

import { Descriptor, mergeModalities, readKpln, splitModalities, writeKpln } from './kpln';
import { CompletionModel, loadCheckpoint } from './train';

export function predictDescriptor(completion: CompletionModel, input: Descriptor): Descriptor {
  const { model, config } = completion;
  if (input.numPlanes !== config.numPlanes || input.resolution !== config.resolution) {
    throw new Error(
      `descriptor is ${input.numPlanes}x${input.resolution}, ` +
        `checkpoint expects ${config.numPlanes}x${config.resolution}`,
    );
  }
  const r = input.resolution;
  const k = input.numPlanes;
  const cells = r * r;
  const inMod = splitModalities(input);

  const [outDepth, outValid, outNormal] = tf.tidy(() => {
    const x = tf.buffer([1, r, r, 5 * k], 'float32');
    for (let p = 0; p < k; p++) {
      for (let i = 0; i < r; i++) {
        for (let j = 0; j < r; j++) {
          const t = i * r + j;
          x.set(inMod.depth[p * cells + t], 0, i, j, p);
          x.set(inMod.valid[p * cells + t], 0, i, j, k + p);
          for (let c = 0; c < 3; c++) {
            x.set(inMod.normal[(p * 3 + c) * cells + t], 0, i, j, 2 * k + p * 3 + c);
          }
        }
      }
    }
    const [d, v, n] = model.predict(x.toTensor()) as tf.Tensor[];
    return [
      d.dataSync() as Float32Array,
      v.dataSync() as Float32Array,
      n.dataSync() as Float32Array,
    ];
  });

  // tensor layout is [i][j][channel]; repack to [plane][cell]
  const depth = new Float32Array(k * cells);
  const valid = new Float32Array(k * cells);
  const normal = new Float32Array(k * 3 * cells);
  for (let p = 0; p < k; p++) {
    for (let t = 0; t < cells; t++) {
      depth[p * cells + t] = outDepth[t * k + p];
      valid[p * cells + t] = Math.min(1, Math.max(0, outValid[t * k + p]));
      for (let c = 0; c < 3; c++) {
        normal[(p * 3 + c) * cells + t] = outNormal[t * 3 * k + p * 3 + c];
      }
    }
  }
  for (let p = 0; p < k; p++) {
    for (let t = 0; t < cells; t++) {
      const idx = p * cells + t;
      if (inMod.valid[idx] >= 0.5) {
        depth[idx] = inMod.depth[idx];
        valid[idx] = inMod.valid[idx];
        for (let c = 0; c < 3; c++) {
          normal[(p * 3 + c) * cells + t] = inMod.normal[(p * 3 + c) * cells + t];
        }
      } else if (valid[idx] < 0.5) {
        depth[idx] = 0;
        for (let c = 0; c < 3; c++) {
          normal[(p * 3 + c) * cells + t] = 0;
        }
      }
    }
  }
  return mergeModalities(input, { depth, valid, normal });
}

export async function serve(checkpointDir: string, inPath: string, outPath: string): Promise<void> {
  const completion = await loadCheckpoint(checkpointDir);
  const input = readKpln(inPath);
  writeKpln(outPath, predictDescriptor(completion, input));
}
