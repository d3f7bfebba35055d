/**
 * Benchmark training protocol.
 *
 * One run trains a freshly initialized network with Adam on mini-batches
 * of sequence-to-one samples under the batch KGE loss, early-stopping on
 * validation KGE with best-weights restore. The protocol trains a grid
 * of seeds x learning rates and selects the run with the highest
 * validation KGE; ties break toward the lower seed, then the lower
 * learning rate. Runs that hit non-finite losses or predictions are
 * flagged failed and excluded from selection unless every run failed.
 */

import * as tf from "@tensorflow/tfjs";

import { SampleSet } from "./dataset.js";
import { kge } from "./metrics.js";
import { kgeLoss } from "./loss.js";
import { buildLstm, DEFAULT_HIDDEN, DEFAULT_LAYERS } from "./model.js";
import { deriveSeed, mulberry32, shuffleInPlace } from "./random.js";

export const SEQ_LEN_CHOICES = [300, 330, 365, 390] as const;
export const DEFAULT_SEQ_LEN = 365;
export const DEFAULT_SEEDS = 10;
export const DEFAULT_LRS = [0.01, 0.03] as const;
export const DEFAULT_BATCH = 64;
export const DEFAULT_MAX_EPOCHS = 2000;
export const DEFAULT_PATIENCE = 25;

export interface PeriodSamples {
  train: SampleSet;
  val: SampleSet;
  test: SampleSet;
  /** Optional full test range (missing-q days included) for sim output. */
  testFull?: SampleSet;
}

export interface TrainOptions {
  seed: number;
  lr: number;
  epochs?: number;
  batchSize?: number;
  patience?: number;
  hidden?: number;
  layers?: number;
  verbose?: boolean;
}

export interface RunResult {
  seed: number;
  initialLr: number;
  epochsRun: number;
  failed: boolean;
  trainKge: number; // NaN when it could not be computed
  valKge: number; // -Infinity when it could not be computed
  /** Best-epoch predictions (clamped at zero), aligned with each SampleSet. */
  predictions: {
    train: Float64Array;
    val: Float64Array;
    test: Float64Array;
    testFull?: Float64Array;
  };
}

function predictClamped(model: tf.LayersModel, samples: SampleSet): Float64Array {
  if (samples.nSamples === 0) return new Float64Array(0);
  const raw = tf.tidy(() => {
    const x = tf.tensor3d(samples.inputs, [samples.nSamples, samples.seqLen, 2]);
    const y = model.predict(x, { batchSize: 1024 }) as tf.Tensor;
    return y.reshape([samples.nSamples]);
  });
  const values = raw.dataSync();
  raw.dispose();
  const out = new Float64Array(samples.nSamples);
  for (let i = 0; i < out.length; i++) out[i] = Math.max(0, values[i]);
  return out;
}

/** KGE that reports -Infinity instead of throwing on degenerate input. */
export function safeKge(sim: ArrayLike<number>, obs: ArrayLike<number>): number {
  try {
    const value = kge(sim, obs).kge;
    return Number.isFinite(value) ? value : -Infinity;
  } catch {
    return -Infinity;
  }
}

/** Train one network; returns its record and best-epoch predictions. */
export function trainRun(samples: PeriodSamples, opts: TrainOptions): RunResult {
  const epochs = opts.epochs ?? DEFAULT_MAX_EPOCHS;
  const batchSize = opts.batchSize ?? DEFAULT_BATCH;
  const patience = opts.patience ?? DEFAULT_PATIENCE;
  if (!Number.isInteger(epochs) || epochs < 0) {
    throw new Error(`epochs must be a non-negative integer, got ${epochs}`);
  }
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new Error(`batch size must be a positive integer, got ${batchSize}`);
  }
  const nTrain = samples.train.nSamples;
  if (nTrain < 2 || samples.val.nSamples < 2) {
    throw new Error("need at least 2 train and 2 validation samples");
  }
  const model = buildLstm({
    seqLen: samples.train.seqLen,
    hidden: opts.hidden ?? DEFAULT_HIDDEN,
    layers: opts.layers ?? DEFAULT_LAYERS,
    seed: opts.seed,
  });
  const optimizer = tf.train.adam(opts.lr);
  const xTrain = tf.tensor3d(samples.train.inputs, [
    nTrain,
    samples.train.seqLen,
    2,
  ]);
  const yTrain = tf.tensor1d(Float32Array.from(samples.train.targets));
  const order = Int32Array.from({ length: nTrain }, (_, i) => i);
  const rng = mulberry32(deriveSeed(opts.seed, 0x5af3));

  let bestValKge = -Infinity;
  let bestWeights: tf.Tensor[] | null = null;
  let wait = 0;
  let epochsRun = 0;
  let failed = false;

  for (let epoch = 0; epoch < epochs; epoch++) {
    shuffleInPlace(order, rng);
    let epochLoss = 0;
    let nBatches = 0;
    for (let b0 = 0; b0 < nTrain; b0 += batchSize) {
      const idx = order.slice(b0, Math.min(b0 + batchSize, nTrain));
      const cost = tf.tidy(() => {
        const idxT = tf.tensor1d(idx, "int32");
        const xb = tf.gather(xTrain, idxT);
        const yb = tf.gather(yTrain, idxT);
        return optimizer.minimize(
          () =>
            kgeLoss(
              (model.apply(xb) as tf.Tensor).reshape([idx.length]) as tf.Tensor1D,
              yb as tf.Tensor1D,
            ),
          true,
        ) as tf.Scalar;
      });
      epochLoss += cost.dataSync()[0];
      cost.dispose();
      nBatches++;
    }
    if (!Number.isFinite(epochLoss / nBatches)) {
      failed = true;
      break;
    }
    epochsRun = epoch + 1;
    const valPred = predictClamped(model, samples.val);
    const valKge = safeKge(valPred, samples.val.targets);
    if (opts.verbose) {
      process.stderr.write(
        `seed ${opts.seed} lr ${opts.lr} epoch ${epochsRun}: ` +
          `loss ${(epochLoss / nBatches).toFixed(4)} val KGE ${valKge.toFixed(4)}\n`,
      );
    }
    if (valKge > bestValKge) {
      bestValKge = valKge;
      wait = 0;
      if (bestWeights) bestWeights.forEach((w) => w.dispose());
      bestWeights = model.getWeights().map((w) => w.clone());
    } else {
      wait++;
      if (wait >= patience) break;
    }
  }

  if (bestWeights) {
    model.setWeights(bestWeights);
    bestWeights.forEach((w) => w.dispose());
  }
  const predictions = {
    train: predictClamped(model, samples.train),
    val: predictClamped(model, samples.val),
    test: predictClamped(model, samples.test),
    testFull: samples.testFull
      ? predictClamped(model, samples.testFull)
      : undefined,
  };
  const trainKge = safeKge(predictions.train, samples.train.targets);
  const valKge = safeKge(predictions.val, samples.val.targets);
  if (!Number.isFinite(valKge)) failed = true;

  xTrain.dispose();
  yTrain.dispose();
  optimizer.dispose();
  model.dispose();

  return {
    seed: opts.seed,
    initialLr: opts.lr,
    epochsRun,
    failed,
    trainKge: Number.isFinite(trainKge) ? trainKge : NaN,
    valKge,
    predictions,
  };
}

export interface ProtocolOptions {
  seeds?: number; // number of seeds, 0..n-1
  lrs?: readonly number[];
  epochs?: number;
  batchSize?: number;
  patience?: number;
  hidden?: number;
  layers?: number;
  verbose?: boolean;
}

export interface ProtocolResult {
  runs: RunResult[];
  selected: number; // index into runs
}

/** Rank key used for selection: higher val KGE, then lower seed and lr. */
function better(a: RunResult, b: RunResult): boolean {
  if (a.valKge !== b.valKge) return a.valKge > b.valKge;
  if (a.seed !== b.seed) return a.seed < b.seed;
  return a.initialLr < b.initialLr;
}

/** Train the full seeds x learning-rates grid and pick the best run. */
export function runProtocol(
  samples: PeriodSamples,
  opts: ProtocolOptions = {},
): ProtocolResult {
  const nSeeds = opts.seeds ?? DEFAULT_SEEDS;
  const lrs = opts.lrs ?? DEFAULT_LRS;
  if (!Number.isInteger(nSeeds) || nSeeds < 1) {
    throw new Error(`seed count must be a positive integer, got ${nSeeds}`);
  }
  if (lrs.length === 0 || lrs.some((lr) => !(lr > 0))) {
    throw new Error("learning rates must be positive");
  }
  const runs: RunResult[] = [];
  for (let seed = 0; seed < nSeeds; seed++) {
    for (const lr of lrs) {
      runs.push(trainRun(samples, { ...opts, seed, lr }));
    }
  }
  const pool = runs.some((r) => !r.failed) ? runs.filter((r) => !r.failed) : runs;
  let best = pool[0];
  for (const run of pool) {
    if (better(run, best)) best = run;
  }
  return { runs, selected: runs.indexOf(best) };
}
