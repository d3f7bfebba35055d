/**
 * Daily forcing ingestion and train/validation/test period handling.
 *
 * Forcing CSVs carry one row per day with the exact header
 * `date,prcp_mm,pet_mm,q_mm`. Dates are ISO `YYYY-MM-DD` and must be
 * contiguous; missing discharge is an empty field or the sentinel `-999`
 * and is stored as NaN.
 *
 * Periods are inclusive date ranges. Year-pair shorthand like
 * `[1987, 2004]` means 1987-01-01 through 2003-12-31, so consecutive
 * pairs sharing a boundary year do not overlap.
 */

import { readFileSync } from "node:fs";

export const FORCING_HEADER = ["date", "prcp_mm", "pet_mm", "q_mm"] as const;
export const MISSING_Q_SENTINEL = -999.0;

const MS_PER_DAY = 86_400_000;

export interface ForcingSeries {
  /** Epoch day of the first row (days since 1970-01-01, UTC). */
  startDay: number;
  p: Float64Array; // precipitation [mm/day]
  pet: Float64Array; // potential evapotranspiration [mm/day]
  qObs: Float64Array; // observed discharge [mm/day], NaN = missing
}

export function seriesLength(series: ForcingSeries): number {
  return series.p.length;
}

/** ISO date string of row `i` of the series. */
export function dateOf(series: ForcingSeries, i: number): string {
  return formatEpochDay(series.startDay + i);
}

export function formatEpochDay(day: number): string {
  return new Date(day * MS_PER_DAY).toISOString().slice(0, 10);
}

/** Parse strict `YYYY-MM-DD` into an epoch day; null when malformed. */
export function parseIsoDate(text: string): number | null {
  const m = /^(\d{4})-(\d{2})-(\d{2})$/.exec(text);
  if (!m) return null;
  const [y, mo, d] = [Number(m[1]), Number(m[2]), Number(m[3])];
  const ms = Date.UTC(y, mo - 1, d);
  const dt = new Date(ms);
  // Reject wrapped dates like 2000-02-30.
  if (
    dt.getUTCFullYear() !== y ||
    dt.getUTCMonth() !== mo - 1 ||
    dt.getUTCDate() !== d
  ) {
    return null;
  }
  return ms / MS_PER_DAY;
}

/** Index of a calendar day (ISO string) within a series; throws if absent. */
export function indexOf(series: ForcingSeries, isoDay: string): number {
  const day = parseIsoDate(isoDay);
  if (day === null) {
    throw new Error(`bad date ${JSON.stringify(isoDay)} (want YYYY-MM-DD)`);
  }
  const idx = day - series.startDay;
  if (idx < 0 || idx >= seriesLength(series)) {
    throw new Error(`${isoDay} is outside the loaded series`);
  }
  return idx;
}

function splitCsvLine(line: string): string[] {
  // The canonical forcing format never quotes fields.
  return line.split(",");
}

/**
 * Load and validate a forcing CSV.
 *
 * Throws (with the offending line number) for header mismatches,
 * unparsable fields, or negative forcing values, and when the date
 * column is not contiguous daily.
 */
export function loadForcing(path: string): ForcingSeries {
  const text = readFileSync(path, "utf8");
  const lines = text.split(/\r?\n/);
  if (lines.length === 0 || lines[0].trim() === "") {
    throw new Error(`${path}: empty file`);
  }
  const header = splitCsvLine(lines[0]).map((h) => h.trim());
  if (
    header.length !== FORCING_HEADER.length ||
    header.some((h, i) => h !== FORCING_HEADER[i])
  ) {
    throw new Error(
      `${path}:1: expected header ${FORCING_HEADER.join(",")}, got ${lines[0]}`,
    );
  }
  const days: number[] = [];
  const p: number[] = [];
  const pet: number[] = [];
  const q: number[] = [];
  for (let li = 1; li < lines.length; li++) {
    const lineno = li + 1;
    const line = lines[li];
    if (line.trim() === "") continue;
    const row = splitCsvLine(line);
    if (row.length !== 4) {
      throw new Error(`${path}:${lineno}: expected 4 fields, got ${row.length}`);
    }
    const day = parseIsoDate(row[0].trim());
    if (day === null) {
      throw new Error(
        `${path}:${lineno}: bad date ${JSON.stringify(row[0])} (want YYYY-MM-DD)`,
      );
    }
    const vals: number[] = [];
    for (const [name, cell] of [
      ["prcp_mm", row[1]],
      ["pet_mm", row[2]],
    ] as const) {
      const trimmed = cell.trim();
      const v = trimmed === "" ? NaN : Number(trimmed);
      if (Number.isNaN(v)) {
        throw new Error(`${path}:${lineno}: bad ${name} value ${JSON.stringify(cell)}`);
      }
      if (!Number.isFinite(v) || v < 0) {
        throw new Error(
          `${path}:${lineno}: ${name} must be finite and non-negative, got ${cell}`,
        );
      }
      vals.push(v);
    }
    const qcell = row[3].trim();
    let qv: number;
    if (qcell === "") {
      qv = NaN;
    } else {
      qv = Number(qcell);
      if (Number.isNaN(qv)) {
        throw new Error(`${path}:${lineno}: bad q_mm value ${JSON.stringify(qcell)}`);
      }
      if (qv === MISSING_Q_SENTINEL) {
        qv = NaN;
      } else if (!Number.isFinite(qv) || qv < 0) {
        throw new Error(
          `${path}:${lineno}: q_mm must be non-negative, missing (-999) or empty`,
        );
      }
    }
    days.push(day);
    p.push(vals[0]);
    pet.push(vals[1]);
    q.push(qv);
  }
  if (days.length === 0) {
    throw new Error(`${path}: no data rows`);
  }
  for (let i = 1; i < days.length; i++) {
    if (days[i] - days[i - 1] !== 1) {
      throw new Error(
        `${path}: dates must be contiguous daily; gap after ${formatEpochDay(days[i - 1])} (data row ${i})`,
      );
    }
  }
  return {
    startDay: days[0],
    p: Float64Array.from(p),
    pet: Float64Array.from(pet),
    qObs: Float64Array.from(q),
  };
}

export type YearPair = [number, number];

export interface PeriodSpec {
  train: YearPair;
  val: YearPair;
  test: YearPair;
}

export interface PeriodWindow {
  evalStart: number; // first evaluated index
  evalStop: number; // one past the last evaluated index
  evalMask: Uint8Array; // full-length mask: period days with observed q
}

export interface PeriodWindows {
  train: PeriodWindow;
  val: PeriodWindow;
  test: PeriodWindow;
}

function yearPairRange(pair: YearPair): [string, string] {
  const [a, b] = pair;
  if (!Number.isInteger(a) || !Number.isInteger(b) || b <= a) {
    throw new Error(`year pair [${pair}] must be two increasing integers`);
  }
  return [`${a}-01-01`, `${b - 1}-12-31`];
}

/**
 * Resolve year-pair periods against a loaded series.
 *
 * Every evaluation range must fall inside the data. Evaluation masks
 * exclude missing-discharge days by construction, and the three
 * periods must not overlap.
 */
export function splitPeriods(
  series: ForcingSeries,
  spec: PeriodSpec,
): PeriodWindows {
  const n = seriesLength(series);
  const out: Partial<PeriodWindows> = {};
  const ranges: [string, number, number][] = [];
  for (const name of ["train", "val", "test"] as const) {
    const [startIso, endIso] = yearPairRange(spec[name]);
    const i0 = indexOf(series, startIso);
    const i1 = indexOf(series, endIso);
    for (const [other, j0, j1] of ranges) {
      if (i0 <= j1 && j0 <= i1) {
        throw new Error(`${other} and ${name} evaluation periods overlap`);
      }
    }
    ranges.push([name, i0, i1]);
    const evalMask = new Uint8Array(n);
    for (let i = i0; i <= i1; i++) {
      evalMask[i] = Number.isFinite(series.qObs[i]) ? 1 : 0;
    }
    out[name] = { evalStart: i0, evalStop: i1 + 1, evalMask };
  }
  return out as PeriodWindows;
}
