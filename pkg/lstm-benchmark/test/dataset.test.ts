import { describe, expect, it } from "vitest";

import { ForcingSeries, PeriodWindow, parseIsoDate } from "../src/data.js";
import {
  N_FEATURES,
  buildPredictionSamples,
  buildSamples,
  computeStandardizer,
} from "../src/dataset.js";

function makeSeries(nDays: number): ForcingSeries {
  const p = new Float64Array(nDays);
  const pet = new Float64Array(nDays);
  const q = new Float64Array(nDays);
  for (let i = 0; i < nDays; i++) {
    p[i] = i; // strictly increasing: easy to locate in windows
    pet[i] = 100 + i;
    q[i] = 0.5 * i + 1;
  }
  return { startDay: parseIsoDate("2000-01-01")!, p, pet, qObs: q };
}

function windowOver(n: number, start: number, stop: number, q: Float64Array): PeriodWindow {
  const evalMask = new Uint8Array(n);
  for (let i = start; i < stop; i++) {
    evalMask[i] = Number.isFinite(q[i]) ? 1 : 0;
  }
  return { evalStart: start, evalStop: stop, evalMask };
}

describe("computeStandardizer", () => {
  it("uses only the period's days, population statistics", () => {
    const s = makeSeries(30);
    const w = windowOver(30, 10, 20, s.qObs);
    const stats = computeStandardizer(s, w);
    // p over days 10..19 is 10..19: mean 14.5, population std of 0..9 offsets
    const vals = Array.from({ length: 10 }, (_, i) => 10 + i);
    const mu = vals.reduce((a, b) => a + b, 0) / 10;
    const sd = Math.sqrt(vals.reduce((a, v) => a + (v - mu) ** 2, 0) / 10);
    expect(stats.pMean).toBeCloseTo(mu, 12);
    expect(stats.pStd).toBeCloseTo(sd, 12);
    expect(stats.petMean).toBeCloseTo(mu + 100, 12);
    expect(stats.petStd).toBeCloseTo(sd, 12);
  });

  it("falls back to unit scale for constant inputs", () => {
    const s = makeSeries(10);
    s.pet.fill(2.5);
    const stats = computeStandardizer(s, windowOver(10, 0, 10, s.qObs));
    expect(stats.petMean).toBe(2.5);
    expect(stats.petStd).toBe(1);
  });
});

describe("buildSamples", () => {
  it("aligns windows to the target day and standardizes inputs", () => {
    const s = makeSeries(30);
    const w = windowOver(30, 10, 20, s.qObs);
    const stats = computeStandardizer(s, w);
    const seqLen = 5;
    const set = buildSamples(s, w, seqLen, stats);
    expect(set.nSamples).toBe(10);
    expect(Array.from(set.dayIndex)).toEqual(
      Array.from({ length: 10 }, (_, i) => 10 + i),
    );
    expect(Array.from(set.targets)).toEqual(
      Array.from({ length: 10 }, (_, i) => 0.5 * (10 + i) + 1),
    );
    // First sample covers days 6..10; check both features on each step.
    for (let j = 0; j < seqLen; j++) {
      const day = 10 - seqLen + 1 + j;
      const base = j * N_FEATURES;
      expect(set.inputs[base]).toBeCloseTo((s.p[day] - stats.pMean) / stats.pStd, 6);
      expect(set.inputs[base + 1]).toBeCloseTo(
        (s.pet[day] - stats.petMean) / stats.petStd,
        6,
      );
    }
  });

  it("skips period days without a full lookback", () => {
    const s = makeSeries(30);
    const w = windowOver(30, 2, 10, s.qObs);
    const set = buildSamples(s, w, 5, computeStandardizer(s, w));
    // Days 2 and 3 lack 5 days of history.
    expect(Array.from(set.dayIndex)).toEqual([4, 5, 6, 7, 8, 9]);
  });

  it("skips missing-discharge days but keeps them for prediction output", () => {
    const s = makeSeries(30);
    s.qObs[12] = NaN;
    const w = windowOver(30, 10, 20, s.qObs);
    const stats = computeStandardizer(s, w);
    const scored = buildSamples(s, w, 5, stats);
    expect(Array.from(scored.dayIndex)).not.toContain(12);
    expect(scored.nSamples).toBe(9);
    expect(scored.targets.every((t) => Number.isFinite(t))).toBe(true);

    const full = buildPredictionSamples(s, w, 5, stats);
    expect(Array.from(full.dayIndex)).toEqual(
      Array.from({ length: 10 }, (_, i) => 10 + i),
    );
    expect(full.targets[2]).toBeNaN();
  });

  it("rejects nonsense sequence lengths", () => {
    const s = makeSeries(10);
    const w = windowOver(10, 5, 10, s.qObs);
    const stats = computeStandardizer(s, w);
    expect(() => buildSamples(s, w, 0, stats)).toThrowError(/positive integer/);
    expect(() => buildSamples(s, w, 2.5, stats)).toThrowError(/positive integer/);
  });
});
