/** LSTM regression network: (seqLen, 2) forcing history -> next-day flow. */

import * as tf from "@tensorflow/tfjs";

import { N_FEATURES } from "./dataset.js";
import { deriveSeed } from "./random.js";

export interface ModelSpec {
  seqLen: number;
  hidden: number; // units per LSTM layer
  layers: number; // number of stacked LSTM layers
  seed: number; // drives all weight initializers
}

export const DEFAULT_HIDDEN = 64;
export const DEFAULT_LAYERS = 1;

export function buildLstm(spec: ModelSpec): tf.Sequential {
  const { seqLen, hidden, layers, seed } = spec;
  if (!Number.isInteger(hidden) || hidden < 1) {
    throw new Error(`hidden units must be a positive integer, got ${hidden}`);
  }
  if (!Number.isInteger(layers) || layers < 1) {
    throw new Error(`layer count must be a positive integer, got ${layers}`);
  }
  const model = tf.sequential();
  for (let i = 0; i < layers; i++) {
    model.add(
      tf.layers.lstm({
        units: hidden,
        returnSequences: i < layers - 1,
        inputShape: i === 0 ? [seqLen, N_FEATURES] : undefined,
        kernelInitializer: tf.initializers.glorotUniform({
          seed: deriveSeed(seed, 2 * i),
        }),
        recurrentInitializer: tf.initializers.orthogonal({
          gain: 1,
          seed: deriveSeed(seed, 2 * i + 1),
        }),
        unitForgetBias: true,
      }),
    );
  }
  model.add(
    tf.layers.dense({
      units: 1,
      kernelInitializer: tf.initializers.glorotUniform({
        seed: deriveSeed(seed, 2 * layers),
      }),
    }),
  );
  return model;
}
