/**
 * CSV writers matching the calibration toolkit's on-disk formats.
 *
 * The headers below must stay byte-identical to the toolkit's so that its
 * `evaluate` command and downstream notebooks can read benchmark output
 * unchanged. Columns that only make sense for the bucket models (soil
 * fluxes, physical parameters) are left empty.
 */

import { mkdirSync, renameSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";

export const PARAM_ORDER = [
  "k_sat",
  "a_o",
  "b_o",
  "t_wt",
  "b_w",
  "porosity",
  "a_u",
  "b_u",
  "a_v",
  "b_v",
  "b_l",
  "m_l",
  "c_l",
  "s_max_pnd",
] as const;

export const SIM_COLUMNS = [
  "date",
  "q_obs",
  "q_sim",
  "O",
  "L",
  "R_SE",
  "R_IE",
  "V",
  "theta",
  "s_pnd",
] as const;

export const METRIC_COLUMNS = [
  "basin_id",
  "model",
  "scenario",
  "regime",
  "n_days",
  "kge",
  "kge_ss",
  "rmse",
  "r",
  "alpha",
  "beta",
] as const;

export const RUN_COLUMNS = [
  "basin_id",
  "model",
  "scenario",
  "stage",
  "seed",
  "initial_lr",
  "epochs_run",
  "failed",
  "train_kge",
  "val_kge",
  "selected",
  ...PARAM_ORDER.map((n) => `raw_${n}`),
  ...PARAM_ORDER.map((n) => `phys_${n}`),
] as const;

export type Cell = string | number | boolean | null;

/** Full-precision CSV cell; empty for missing values. */
export function fmt(value: Cell): string {
  if (value === null) return "";
  if (typeof value === "boolean") return value ? "True" : "False";
  if (typeof value === "string") return value;
  if (Number.isNaN(value)) return "";
  return String(value);
}

/** Write a CSV with a JSON metadata sidecar, atomically. */
export function writeTable(
  path: string,
  header: readonly string[],
  rows: readonly (readonly Cell[])[],
  meta: Record<string, unknown>,
): void {
  mkdirSync(dirname(path), { recursive: true });
  const lines = [header.join(",")];
  for (const row of rows) {
    if (row.length !== header.length) {
      throw new Error(
        `row has ${row.length} cells, header has ${header.length}`,
      );
    }
    lines.push(row.map(fmt).join(","));
  }
  const tmp = path + ".tmp";
  writeFileSync(tmp, lines.join("\r\n") + "\r\n");
  renameSync(tmp, path);
  const sidecar: Record<string, unknown> = {
    file: path.split("/").pop(),
    columns: [...header],
    created_utc: new Date().toISOString(),
    tool: "lstm-benchmark 0.1.0",
    ...meta,
  };
  writeFileSync(
    path + ".meta.json",
    JSON.stringify(sortKeysDeep(sidecar), null, 2) + "\n",
  );
}

function sortKeysDeep(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeysDeep);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value).sort()) {
      out[key] = sortKeysDeep((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export interface RunRow {
  basinId: string;
  model: string;
  scenario: string;
  stage: string;
  seed: number;
  initialLr: number;
  epochsRun: number;
  failed: boolean;
  trainKge: number; // NaN when unavailable
  valKge: number; // NaN when unavailable
  selected: boolean;
}

const EMPTY_PARAMS: Cell[] = Array(2 * PARAM_ORDER.length).fill(null);

export function runRow(r: RunRow): Cell[] {
  return [
    r.basinId,
    r.model,
    r.scenario,
    r.stage,
    r.seed,
    r.initialLr,
    r.epochsRun,
    r.failed,
    Number.isFinite(r.trainKge) ? r.trainKge : null,
    Number.isFinite(r.valKge) ? r.valKge : null,
    r.selected,
    ...EMPTY_PARAMS,
  ];
}

export interface SimRow {
  date: string; // ISO YYYY-MM-DD
  qObs: number; // NaN when missing
  qSim: number;
}

export function simRow(r: SimRow): Cell[] {
  // Flux and state columns are bucket-model internals: left empty.
  return [r.date, r.qObs, r.qSim, null, null, null, null, null, null, null];
}

export function writeRunsCsv(
  outDir: string,
  rows: readonly RunRow[],
  meta: Record<string, unknown>,
): string {
  const path = join(outDir, "runs.csv");
  writeTable(path, RUN_COLUMNS, rows.map(runRow), meta);
  return path;
}

export function writeSimCsv(
  outDir: string,
  tag: string,
  rows: readonly SimRow[],
  meta: Record<string, unknown>,
): string {
  const path = join(outDir, `sim_${tag}.csv`);
  writeTable(path, SIM_COLUMNS, rows.map(simRow), meta);
  return path;
}
