/**
 * Training loop for the descriptor completion model.
 *
 * Consumes directories of paired .kpln files (inputs = observed
 * descriptors, targets = completed ground truth, matched by filename).
 * The forward pass hard-blends the model prediction with the input at
 * input-valid cells, so learning pressure falls entirely on the empty
 * cells, and minimizes the weighted three-term descriptor loss with masks
 * taken from the target valid flags.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

import { Descriptor, readKpln, splitModalities } from './kpln';
import { DEFAULT_WEIGHTS, LossWeights } from './loss';
import { buildModel, CompletionModel, ModelConfig } from './model';
export { CompletionModel } from './model';

export interface TrainConfig {
  levelId: number;
  filterSize?: number; // default: 35 at level 0, halved (kept odd) per level
  batchSize: number;
  learningRate: number;
  steps: number;
  widths: [number, number, number];
  weights: LossWeights;
  seed: number;
}

export const DEFAULT_TRAIN: TrainConfig = {
  levelId: 0,
  batchSize: 128,
  learningRate: 1e-6,
  steps: 1000,
  widths: [32, 64, 128],
  weights: DEFAULT_WEIGHTS,
  seed: 0,
};

export function levelFilterSize(levelId: number): number {
  let size = 35;
  for (let i = 0; i < levelId; i++) {
    size = Math.floor(size / 2);
    if (size % 2 === 0) {
      size += 1;
    }
  }
  return size;
}

export interface Dataset {
  names: string[];
  numPlanes: number;
  resolution: number;
  inputs: Descriptor[];
  targets: Descriptor[];
}

export function loadDataset(inputDir: string, targetDir: string): Dataset {
  const names = fs
    .readdirSync(inputDir)
    .filter((n) => n.endsWith('.kpln'))
    .sort();
  if (names.length === 0) {
    throw new Error(`no .kpln files in ${inputDir}`);
  }
  const inputs: Descriptor[] = [];
  const targets: Descriptor[] = [];
  let numPlanes = 0;
  let resolution = 0;
  for (const name of names) {
    const inPath = path.join(inputDir, name);
    const gtPath = path.join(targetDir, name);
    if (!fs.existsSync(gtPath)) {
      throw new Error(`missing target for ${name} in ${targetDir}`);
    }
    const a = readKpln(inPath);
    const b = readKpln(gtPath);
    if (numPlanes === 0) {
      numPlanes = a.numPlanes;
      resolution = a.resolution;
    }
    for (const [d, p] of [[a, inPath], [b, gtPath]] as Array<[Descriptor, string]>) {
      if (d.numPlanes !== numPlanes || d.resolution !== resolution) {
        throw new Error(
          `shape mismatch in ${p}: got ${d.numPlanes}x${d.resolution}, ` +
            `expected ${numPlanes}x${resolution}`,
        );
      }
    }
    inputs.push(a);
    targets.push(b);
  }
  return { names, numPlanes, resolution, inputs, targets };
}

/** Channels-last tensors for one descriptor list: [N, R, R, K*c]. */
function stackTensors(descs: Descriptor[], numPlanes: number, resolution: number) {
  const n = descs.length;
  const cells = resolution * resolution;
  const depth = new Float32Array(n * cells * numPlanes);
  const valid = new Float32Array(n * cells * numPlanes);
  const normal = new Float32Array(n * cells * 3 * numPlanes);
  descs.forEach((d, s) => {
    const m = splitModalities(d);
    // modality arrays are [plane][cell]; tensors want [cell][plane]
    for (let p = 0; p < numPlanes; p++) {
      for (let t = 0; t < cells; t++) {
        depth[(s * cells + t) * numPlanes + p] = m.depth[p * cells + t];
        valid[(s * cells + t) * numPlanes + p] = m.valid[p * cells + t];
        for (let c = 0; c < 3; c++) {
          normal[(s * cells + t) * 3 * numPlanes + p * 3 + c] =
            m.normal[(p * 3 + c) * cells + t];
        }
      }
    }
  });
  const shape3 = [n, resolution, resolution, numPlanes];
  return {
    depth: tf.tensor4d(depth, shape3 as [number, number, number, number]),
    valid: tf.tensor4d(valid, shape3 as [number, number, number, number]),
    normal: tf.tensor4d(normal, [n, resolution, resolution, 3 * numPlanes]),
  };
}

export interface TensorBatches {
  x: tf.Tensor4D;
  inDepth: tf.Tensor4D;
  inValid: tf.Tensor4D;
  inNormal: tf.Tensor4D;
  gtDepth: tf.Tensor4D;
  gtValid: tf.Tensor4D;
  gtNormal: tf.Tensor4D;
}

export function datasetTensors(data: Dataset): TensorBatches {
  const inputs = stackTensors(data.inputs, data.numPlanes, data.resolution);
  const targets = stackTensors(data.targets, data.numPlanes, data.resolution);
  const x = tf.concat(
    [inputs.depth, inputs.valid, inputs.normal],
    -1,
  ) as tf.Tensor4D;
  return {
    x,
    inDepth: inputs.depth as tf.Tensor4D,
    inValid: inputs.valid as tf.Tensor4D,
    inNormal: inputs.normal as tf.Tensor4D,
    gtDepth: targets.depth as tf.Tensor4D,
    gtValid: targets.valid as tf.Tensor4D,
    gtNormal: targets.normal as tf.Tensor4D,
  };
}

/** Blend prediction with the observed input at input-valid cells. */
export function applySkip(
  pred: { depth: tf.Tensor; valid: tf.Tensor; normal: tf.Tensor },
  input: { depth: tf.Tensor; valid: tf.Tensor; normal: tf.Tensor },
): { depth: tf.Tensor; valid: tf.Tensor; normal: tf.Tensor } {
  const mask = input.valid.greaterEqual(0.5).cast('float32');
  const inv = tf.sub(1, mask);
  const mask3 = tf.tile(mask.reshape([...mask.shape.slice(0, 3), -1, 1]), [1, 1, 1, 1, 3])
    .reshape(pred.normal.shape);
  const inv3 = tf.sub(1, mask3);
  return {
    depth: tf.add(tf.mul(mask, input.depth), tf.mul(inv, pred.depth)),
    valid: tf.add(mask, tf.mul(inv, pred.valid)),
    normal: tf.add(tf.mul(mask3, input.normal), tf.mul(inv3, pred.normal)),
  };
}

/**
 * Tensor version of the descriptor loss: per-plane masked means averaged
 * over planes, masks from the target valid flags.
 */
export function tensorLoss(
  pred: { depth: tf.Tensor; valid: tf.Tensor; normal: tf.Tensor },
  gt: { depth: tf.Tensor; valid: tf.Tensor; normal: tf.Tensor },
  weights: LossWeights,
): tf.Scalar {
  return tf.tidy(() => {
    const validLoss = tf.mean(tf.abs(tf.sub(pred.valid, gt.valid)));

    const mask = gt.valid.greaterEqual(0.5).cast('float32'); // [B,R,R,K]
    const counts = tf.sum(mask, [1, 2]); // [B,K]
    const safe = tf.maximum(counts, 1);

    const depthAbs = tf.mul(tf.abs(tf.sub(pred.depth, gt.depth)), mask);
    const depthLoss = tf.mean(tf.div(tf.sum(depthAbs, [1, 2]), safe));

    const shape = gt.normal.shape;
    const k = shape[3]! / 3;
    const gn = gt.normal.reshape([shape[0]!, shape[1]!, shape[2]!, k, 3]);
    const pn = pred.normal.reshape([shape[0]!, shape[1]!, shape[2]!, k, 3]);
    const dot = tf.sum(tf.mul(gn, pn), -1);
    const product = tf.mul(tf.norm(gn, 'euclidean', -1), tf.norm(pn, 'euclidean', -1));
    // step() instead of greater(): this mask sits on the gradient path
    // and comparisons carry no gradient in tfjs
    const nonzero = tf.step(product);
    const cos = tf.div(dot, tf.maximum(product, 1e-12));
    const angular = tf.mul(tf.sub(1, cos), nonzero);
    const normalAbs = tf.mul(angular, mask);
    const normalLoss = tf.mean(tf.div(tf.sum(normalAbs, [1, 2]), safe));

    return tf.add(
      tf.add(tf.mul(validLoss, weights.valid), tf.mul(depthLoss, weights.depth)),
      tf.mul(normalLoss, weights.normal),
    ).asScalar();
  });
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export interface TrainResult {
  losses: number[];
  model: CompletionModel;
}

export function forwardHeads(
  model: tf.LayersModel,
  x: tf.Tensor,
): { depth: tf.Tensor; valid: tf.Tensor; normal: tf.Tensor } {
  const [depth, valid, normal] = model.apply(x, { training: true }) as tf.Tensor[];
  return { depth, valid, normal };
}

export function train(
  data: Dataset,
  cfg: TrainConfig,
  onStep?: (step: number, loss: number) => void,
): TrainResult {
  const filterSize = cfg.filterSize ?? levelFilterSize(cfg.levelId);
  const modelConfig: ModelConfig = {
    resolution: data.resolution,
    numPlanes: data.numPlanes,
    filterSize,
    widths: cfg.widths,
    seed: cfg.seed,
  };
  const completion = buildModel(modelConfig);
  const tensors = datasetTensors(data);
  const optimizer = tf.train.adam(cfg.learningRate);
  const rand = mulberry32(cfg.seed + 1);
  const n = data.inputs.length;
  const batch = Math.min(cfg.batchSize, n);

  let order: number[] = [];
  const nextIndices = () => {
    const idx: number[] = [];
    while (idx.length < batch) {
      if (order.length === 0) {
        order = Array.from({ length: n }, (_, i) => i);
        for (let i = n - 1; i > 0; i--) {
          const j = Math.floor(rand() * (i + 1));
          [order[i], order[j]] = [order[j], order[i]];
        }
      }
      idx.push(order.pop()!);
    }
    return idx;
  };

  const losses: number[] = [];
  for (let step = 0; step < cfg.steps; step++) {
    const picks = tf.tensor1d(nextIndices(), 'int32');
    const loss = tf.tidy(() => {
      const xb = tf.gather(tensors.x, picks);
      const inB = {
        depth: tf.gather(tensors.inDepth, picks),
        valid: tf.gather(tensors.inValid, picks),
        normal: tf.gather(tensors.inNormal, picks),
      };
      const gtB = {
        depth: tf.gather(tensors.gtDepth, picks),
        valid: tf.gather(tensors.gtValid, picks),
        normal: tf.gather(tensors.gtNormal, picks),
      };
      const value = optimizer.minimize(
        () => {
          const pred = forwardHeads(completion.model, xb);
          const blended = applySkip(pred, inB);
          return tensorLoss(blended, gtB, cfg.weights);
        },
        true,
      ) as tf.Scalar;
      return value.dataSync()[0];
    });
    picks.dispose();
    losses.push(loss);
    if (onStep) {
      onStep(step, loss);
    }
  }
  optimizer.dispose();
  return { losses, model: completion };
}

export async function saveCheckpoint(dir: string, completion: CompletionModel): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  await completion.model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const weightData = artifacts.weightData as ArrayBuffer;
      fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(weightData));
      fs.writeFileSync(
        path.join(dir, 'model.json'),
        JSON.stringify(
          {
            config: completion.config,
            modelTopology: artifacts.modelTopology,
            weightSpecs: artifacts.weightSpecs,
          },
          null,
          2,
        ),
      );
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON',
        },
      };
    }),
  );
}

export async function loadCheckpoint(dir: string): Promise<CompletionModel> {
  const meta = JSON.parse(fs.readFileSync(path.join(dir, 'model.json'), 'utf-8'));
  const weights = fs.readFileSync(path.join(dir, 'weights.bin'));
  const model = await tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: meta.modelTopology,
      weightSpecs: meta.weightSpecs,
      weightData: weights.buffer.slice(weights.byteOffset, weights.byteOffset + weights.byteLength),
    }),
  );
  return { model, config: meta.config as ModelConfig };
}
