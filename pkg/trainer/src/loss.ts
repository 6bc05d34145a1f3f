/**
 * Descriptor loss, double-precision reference implementation.
 *
 * Valid term: mean |V - V_hat| over every cell of every plane. Depth and
 * normal terms: per plane, the mean over cells the ground truth marks
 * valid (flag >= 0.5), averaged over the K planes; a plane without valid
 * cells contributes 0. The normal penalty per cell is 1 - cos(angle),
 * 0 when either normal is zero. This matches the core toolkit's loss
 * bit-for-bit up to summation order.
 */

import { Descriptor, NUM_CHANNELS } from './kpln';

export interface LossWeights {
  valid: number;
  depth: number;
  normal: number;
}

export const DEFAULT_WEIGHTS: LossWeights = { valid: 0.75, depth: 1.0, normal: 0.01 };

export interface LossBreakdown {
  validLoss: number;
  depthLoss: number;
  normalLoss: number;
  total: number;
}

export function computeLosses(
  pred: Descriptor,
  gt: Descriptor,
  weights: LossWeights = DEFAULT_WEIGHTS,
): LossBreakdown {
  if (pred.numPlanes !== gt.numPlanes || pred.resolution !== gt.resolution) {
    throw new Error('descriptors must share plane count and resolution');
  }
  const k = gt.numPlanes;
  const cells = gt.resolution * gt.resolution;

  let validSum = 0;
  let depthTerms = 0;
  let normalTerms = 0;
  for (let p = 0; p < k; p++) {
    const base = p * NUM_CHANNELS * cells;
    let masked = 0;
    let depthSum = 0;
    let normalSum = 0;
    for (let t = 0; t < cells; t++) {
      const gv = gt.channels[base + cells + t];
      const pv = pred.channels[base + cells + t];
      validSum += Math.abs(pv - gv);
      if (gv >= 0.5) {
        masked += 1;
        depthSum += Math.abs(pred.channels[base + t] - gt.channels[base + t]);
        const gx = gt.channels[base + 2 * cells + t];
        const gy = gt.channels[base + 3 * cells + t];
        const gz = gt.channels[base + 4 * cells + t];
        const px = pred.channels[base + 2 * cells + t];
        const py = pred.channels[base + 3 * cells + t];
        const pz = pred.channels[base + 4 * cells + t];
        if (gx === px && gy === py && gz === pz) {
          continue; // identical normals cost exactly zero
        }
        const product =
          Math.sqrt(gx * gx + gy * gy + gz * gz) * Math.sqrt(px * px + py * py + pz * pz);
        if (product > 0) {
          const cos = Math.min(1, Math.max(-1, (gx * px + gy * py + gz * pz) / product));
          normalSum += 1 - cos;
        }
      }
    }
    if (masked > 0) {
      depthTerms += depthSum / masked;
      normalTerms += normalSum / masked;
    }
  }

  const validLoss = validSum / (k * cells);
  const depthLoss = depthTerms / k;
  const normalLoss = normalTerms / k;
  return {
    validLoss,
    depthLoss,
    normalLoss,
    total: weights.valid * validLoss + weights.depth * depthLoss + weights.normal * normalLoss,
  };
}
