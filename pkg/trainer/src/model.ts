/**
 * U-shaped encoder-decoder over stacked descriptor planes.
 *
 * Input is an [R, R, 5K] tensor of descriptor channels. The encoder
 * applies a large first convolution (the per-level filter size), then two
 * max-pool stages; the decoder mirrors them with nearest-neighbor
 * upsampling and encoder skip concatenations. Three heads with identical
 * layer structure emit depth (K channels, linear), valid flags (K
 * channels, sigmoid so they stay in [0, 1]) and normals (3K channels,
 * linear). Resolutions not divisible by 4 are zero-padded internally and
 * cropped on output.
 */

import * as tf from '@tensorflow/tfjs';

export class Mish extends tf.layers.Layer {
  static className = 'Mish';

  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    const x = Array.isArray(inputs) ? inputs[0] : inputs;
    return tf.tidy(() => tf.mul(x, tf.tanh(tf.softplus(x))));
  }

  computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return inputShape;
  }
}
tf.serialization.registerClass(Mish);

/**
 * Nearest-neighbor 2x upsampling via stack + reshape. The builtin
 * upSampling2d(nearest) backpropagates through resize with mismatched
 * pixel centers and yields wrong gradients on this backend; stack and
 * reshape gradients are exact.
 */
export class NearestUp2 extends tf.layers.Layer {
  static className = 'NearestUp2';

  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    const x = (Array.isArray(inputs) ? inputs[0] : inputs) as tf.Tensor4D;
    return tf.tidy(() => {
      const [b, h, w, c] = x.shape;
      const rows = tf.stack([x, x], 2).reshape([b, 2 * h, w, c]);
      return tf.stack([rows, rows], 3).reshape([b, 2 * h, 2 * w, c]);
    });
  }

  computeOutputShape(inputShape: tf.Shape): tf.Shape {
    const [b, h, w, c] = inputShape as number[];
    return [b, h * 2, w * 2, c];
  }
}
tf.serialization.registerClass(NearestUp2);

export interface ModelConfig {
  resolution: number;
  numPlanes: number;
  filterSize: number;
  widths: [number, number, number];
  seed: number;
}

export interface CompletionModel {
  model: tf.LayersModel;
  config: ModelConfig;
}

function convBlock(
  x: tf.SymbolicTensor,
  filters: number,
  kernel: number,
  seed: number,
  name: string,
): tf.SymbolicTensor {
  const conv = tf.layers
    .conv2d({
      filters,
      kernelSize: kernel,
      padding: 'same',
      kernelInitializer: tf.initializers.glorotUniform({ seed }),
      name,
    })
    .apply(x) as tf.SymbolicTensor;
  return new Mish({ name: `${name}_mish` }).apply(conv) as tf.SymbolicTensor;
}

export function buildModel(config: ModelConfig): CompletionModel {
  const { resolution, numPlanes, filterSize, widths, seed } = config;
  if (filterSize < 1 || filterSize % 2 === 0) {
    throw new Error('filterSize must be odd and >= 1');
  }
  const pad = (4 - (resolution % 4)) % 4;
  const padded = resolution + pad;
  const [w0, w1, w2] = widths;

  const input = tf.input({ shape: [resolution, resolution, 5 * numPlanes], name: 'channels' });
  let x = input as tf.SymbolicTensor;
  if (pad > 0) {
    x = tf.layers
      .zeroPadding2d({ padding: [[0, pad], [0, pad]], name: 'pad' })
      .apply(x) as tf.SymbolicTensor;
  }

  const enc0 = convBlock(x, w0, filterSize, seed + 1, 'enc0');
  const enc0b = convBlock(enc0, w0, 3, seed + 2, 'enc0b');
  const pool0 = tf.layers.maxPooling2d({ poolSize: 2, name: 'pool0' }).apply(enc0b) as tf.SymbolicTensor;
  const enc1 = convBlock(pool0, w1, 3, seed + 3, 'enc1');
  const pool1 = tf.layers.maxPooling2d({ poolSize: 2, name: 'pool1' }).apply(enc1) as tf.SymbolicTensor;
  const bottleneck = convBlock(pool1, w2, 3, seed + 4, 'bottleneck');

  const up1 = new NearestUp2({ name: 'up1' }).apply(bottleneck) as tf.SymbolicTensor;
  const cat1 = tf.layers.concatenate({ name: 'cat1' }).apply([up1, enc1]) as tf.SymbolicTensor;
  const dec1 = convBlock(cat1, w1, 3, seed + 5, 'dec1');
  const up0 = new NearestUp2({ name: 'up0' }).apply(dec1) as tf.SymbolicTensor;
  const cat0 = tf.layers.concatenate({ name: 'cat0' }).apply([up0, enc0b]) as tf.SymbolicTensor;
  const dec0 = convBlock(cat0, w0, 3, seed + 6, 'dec0');

  // three heads with identical layer structure, one per modality;
  // only the last convolution differs in width and activation
  const heads: tf.SymbolicTensor[] = [];
  const headSpecs: Array<[string, number, 'sigmoid' | undefined]> = [
    ['depth', numPlanes, undefined],
    ['valid', numPlanes, 'sigmoid'],
    ['normal', 3 * numPlanes, undefined],
  ];
  headSpecs.forEach(([name, channels, activation], t) => {
    const hidden = convBlock(dec0, w0, 3, seed + 10 + t, `head_${name}`);
    let out = tf.layers
      .conv2d({
        filters: channels,
        kernelSize: 1,
        padding: 'same',
        activation,
        kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 20 + t }),
        name: `${name}_out`,
      })
      .apply(hidden) as tf.SymbolicTensor;
    if (pad > 0) {
      out = tf.layers
        .cropping2D({ cropping: [[0, pad], [0, pad]], name: `${name}_crop` })
        .apply(out) as tf.SymbolicTensor;
    }
    heads.push(out);
  });

  const model = tf.model({ inputs: input, outputs: heads, name: 'descriptor_completion' });
  void padded;
  return { model, config };
}
