/**
 * Sequence-to-one sample construction.
 *
 * Each sample pairs the standardized (precipitation, PET) history over a
 * fixed lookback window with the observed discharge on the window's last
 * day. A day yields a sample only when it is inside the period's
 * evaluation mask (so missing-discharge days are skipped) and has a full
 * lookback of forcing behind it. Standardization statistics always come
 * from the training period so validation and test samples see the same
 * input scaling.
 */

import {
  ForcingSeries,
  PeriodWindow,
  seriesLength,
} from "./data.js";

export const N_FEATURES = 2; // precipitation, PET

export interface Standardizer {
  pMean: number;
  pStd: number;
  petMean: number;
  petStd: number;
}

/** Mean/std of the forcing inputs over a period's evaluation range. */
export function computeStandardizer(
  series: ForcingSeries,
  window: PeriodWindow,
): Standardizer {
  const stat = (values: Float64Array): [number, number] => {
    let total = 0;
    const n = window.evalStop - window.evalStart;
    for (let i = window.evalStart; i < window.evalStop; i++) total += values[i];
    const mu = total / n;
    let varSum = 0;
    for (let i = window.evalStart; i < window.evalStop; i++) {
      varSum += (values[i] - mu) ** 2;
    }
    const sd = Math.sqrt(varSum / n);
    return [mu, sd > 0 ? sd : 1];
  };
  const [pMean, pStd] = stat(series.p);
  const [petMean, petStd] = stat(series.pet);
  return { pMean, pStd, petMean, petStd };
}

export interface SampleSet {
  /** Row-major [nSamples, seqLen, N_FEATURES] model inputs. */
  inputs: Float32Array;
  /** Observed discharge on each sample's last day [mm/day]. */
  targets: Float64Array;
  /** Series index of each sample's last (target) day. */
  dayIndex: Int32Array;
  nSamples: number;
  seqLen: number;
}

/** Samples for one period: days with observed discharge and a full lookback. */
export function buildSamples(
  series: ForcingSeries,
  window: PeriodWindow,
  seqLen: number,
  stats: Standardizer,
): SampleSet {
  const n = seriesLength(series);
  const days: number[] = [];
  for (let t = 0; t < n; t++) {
    if (window.evalMask[t] && t >= seqLen - 1) days.push(t);
  }
  return fromDays(series, days, seqLen, stats);
}

/**
 * Prediction samples for every period day with a full lookback, whether or
 * not discharge was observed (targets are NaN on missing days). Used to
 * write complete simulated series.
 */
export function buildPredictionSamples(
  series: ForcingSeries,
  window: PeriodWindow,
  seqLen: number,
  stats: Standardizer,
): SampleSet {
  const days: number[] = [];
  for (let t = window.evalStart; t < window.evalStop; t++) {
    if (t >= seqLen - 1) days.push(t);
  }
  return fromDays(series, days, seqLen, stats);
}

function fromDays(
  series: ForcingSeries,
  days: number[],
  seqLen: number,
  stats: Standardizer,
): SampleSet {
  if (!Number.isInteger(seqLen) || seqLen < 1) {
    throw new Error(`sequence length must be a positive integer, got ${seqLen}`);
  }
  const inputs = new Float32Array(days.length * seqLen * N_FEATURES);
  const targets = new Float64Array(days.length);
  for (let s = 0; s < days.length; s++) {
    const t = days[s];
    targets[s] = series.qObs[t];
    let k = s * seqLen * N_FEATURES;
    for (let i = t - seqLen + 1; i <= t; i++) {
      inputs[k++] = (series.p[i] - stats.pMean) / stats.pStd;
      inputs[k++] = (series.pet[i] - stats.petMean) / stats.petStd;
    }
  }
  return {
    inputs,
    targets,
    dayIndex: Int32Array.from(days),
    nSamples: days.length,
    seqLen,
  };
}
