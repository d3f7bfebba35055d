/**
 * Streamflow efficiency metrics in double precision.
 *
 * Mirrors the reference implementation's conventions exactly: population
 * statistics (divide by n), correlation taken as 0 when the simulation is
 * constant, an error when the observations are constant or zero-mean, and
 * automatic exclusion of days with non-finite observations. The shared
 * fixture file (../fixtures/kge_fixtures.json) pins both implementations
 * together to 1e-9.
 */

/** KGE of the constant mean-flow benchmark: alpha = 0, r := 0, beta = 1. */
export const MEAN_BENCHMARK_KGE = 1.0 - Math.SQRT2;

export interface KgeReport {
  kge: number;
  kgeSS: number; // skill score vs the mean-flow benchmark
  r: number; // linear correlation (0 by convention if sim is constant)
  alpha: number; // std(sim) / std(obs)
  beta: number; // mean(sim) / mean(obs)
  n: number; // number of evaluated days
}

function paired(
  sim: ArrayLike<number>,
  obs: ArrayLike<number>,
  mask?: ArrayLike<boolean> | null,
): [number[], number[]] {
  if (sim.length !== obs.length) {
    throw new Error("sim and obs must be aligned 1-D arrays");
  }
  if (mask != null && mask.length !== obs.length) {
    throw new Error("mask must align with the series");
  }
  const s: number[] = [];
  const o: number[] = [];
  for (let i = 0; i < obs.length; i++) {
    if (!Number.isFinite(obs[i])) continue;
    if (mask != null && !mask[i]) continue;
    s.push(sim[i]);
    o.push(obs[i]);
  }
  return [s, o];
}

function mean(values: number[]): number {
  let total = 0;
  for (const v of values) total += v;
  return total / values.length;
}

/**
 * Kling-Gupta efficiency of `sim` against `obs`.
 *
 * Days where `mask` is false or `obs` is non-finite are excluded. Throws
 * when fewer than two days survive or the observations are constant.
 */
export function kge(
  sim: ArrayLike<number>,
  obs: ArrayLike<number>,
  mask?: ArrayLike<boolean> | null,
): KgeReport {
  const [s, o] = paired(sim, obs, mask);
  const n = o.length;
  if (n < 2) {
    throw new Error(`need at least 2 evaluated days, got ${n}`);
  }
  const muS = mean(s);
  const muO = mean(o);
  let varS = 0;
  let varO = 0;
  let cov = 0;
  for (let i = 0; i < n; i++) {
    const ds = s[i] - muS;
    const dObs = o[i] - muO;
    varS += ds * ds;
    varO += dObs * dObs;
    cov += ds * dObs;
  }
  const sdS = Math.sqrt(varS / n);
  const sdO = Math.sqrt(varO / n);
  if (sdO === 0 || muO === 0) {
    throw new Error("observations are constant or zero-mean");
  }
  const alpha = sdS / sdO;
  const beta = muS / muO;
  const r = sdS === 0 ? 0 : cov / n / (sdS * sdO);
  const value =
    1 - Math.sqrt((1 - alpha) ** 2 + (1 - beta) ** 2 + (1 - r) ** 2);
  return { kge: value, kgeSS: kgeSkillScore(value), r, alpha, beta, n };
}

/** Rescale KGE so the mean-flow benchmark scores 0 and a perfect fit 1. */
export function kgeSkillScore(kgeValue: number): number {
  return 1 - (1 - kgeValue) / Math.SQRT2;
}

/** Root-mean-square error over the evaluated days. */
export function rmse(
  sim: ArrayLike<number>,
  obs: ArrayLike<number>,
  mask?: ArrayLike<boolean> | null,
): number {
  const [s, o] = paired(sim, obs, mask);
  if (o.length === 0) {
    throw new Error("no evaluated days");
  }
  let total = 0;
  for (let i = 0; i < o.length; i++) {
    total += (s[i] - o[i]) ** 2;
  }
  return Math.sqrt(total / o.length);
}
