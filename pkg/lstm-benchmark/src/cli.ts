#!/usr/bin/env node
/**
 * Command-line entry point.
 *
 * `lstm-benchmark train` calibrates the LSTM on one basin's forcing CSV
 * and writes runs.csv, metrics_test.csv and sim_<basin>_LSTM.csv in the
 * calibration toolkit's formats, so the toolkit's `evaluate` command can
 * score the benchmark directly.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { loadForcing, splitPeriods, dateOf, YearPair } from "./data.js";
import {
  buildPredictionSamples,
  buildSamples,
  computeStandardizer,
} from "./dataset.js";
import { kge, rmse } from "./metrics.js";
import {
  Cell,
  METRIC_COLUMNS,
  RunRow,
  SimRow,
  writeRunsCsv,
  writeSimCsv,
  writeTable,
} from "./output.js";
import {
  DEFAULT_BATCH,
  DEFAULT_LRS,
  DEFAULT_MAX_EPOCHS,
  DEFAULT_PATIENCE,
  DEFAULT_SEEDS,
  DEFAULT_SEQ_LEN,
  runProtocol,
} from "./train.js";
import { DEFAULT_HIDDEN, DEFAULT_LAYERS } from "./model.js";
import { join } from "node:path";

const MODEL_NAME = "LSTM";

function parseYearPair(text: string, name: string): YearPair {
  const parts = text.split(",").map((p) => Number(p.trim()));
  if (parts.length !== 2 || parts.some((v) => !Number.isInteger(v))) {
    throw new Error(`--${name} wants two comma-separated years, got ${text}`);
  }
  return [parts[0], parts[1]];
}

function parseLrs(text: string): number[] {
  const lrs = text.split(",").map((p) => Number(p.trim()));
  if (lrs.length === 0 || lrs.some((v) => !(v > 0) || !Number.isFinite(v))) {
    throw new Error(`--lrs wants comma-separated positive numbers, got ${text}`);
  }
  return lrs;
}

interface TrainArgs {
  forcing: string;
  out: string;
  basinId: string;
  train: string;
  val: string;
  test: string;
  seqLen: number;
  hidden: number;
  layers: number;
  seeds: number;
  lrs: string;
  epochs: number;
  batch: number;
  patience: number;
  verbose: boolean;
}

export function cmdTrain(args: TrainArgs): number {
  const series = loadForcing(args.forcing);
  const spec = {
    train: parseYearPair(args.train, "train"),
    val: parseYearPair(args.val, "val"),
    test: parseYearPair(args.test, "test"),
  };
  const windows = splitPeriods(series, spec);
  const stats = computeStandardizer(series, windows.train);
  const samples = {
    train: buildSamples(series, windows.train, args.seqLen, stats),
    val: buildSamples(series, windows.val, args.seqLen, stats),
    test: buildSamples(series, windows.test, args.seqLen, stats),
    testFull: buildPredictionSamples(series, windows.test, args.seqLen, stats),
  };
  const result = runProtocol(samples, {
    seeds: args.seeds,
    lrs: parseLrs(args.lrs),
    epochs: args.epochs,
    batchSize: args.batch,
    patience: args.patience,
    hidden: args.hidden,
    layers: args.layers,
    verbose: args.verbose,
  });
  const best = result.runs[result.selected];

  const meta = {
    basin_id: args.basinId,
    model: MODEL_NAME,
    seq_len: args.seqLen,
    hidden: args.hidden,
    layers: args.layers,
    periods: { train: spec.train, val: spec.val, test: spec.test },
  };
  const runRows: RunRow[] = result.runs.map((r, i) => ({
    basinId: args.basinId,
    model: MODEL_NAME,
    scenario: "",
    stage: "explore",
    seed: r.seed,
    initialLr: r.initialLr,
    epochsRun: r.epochsRun,
    failed: r.failed,
    trainKge: r.trainKge,
    valKge: r.valKge,
    selected: i === result.selected,
  }));
  writeRunsCsv(args.out, runRows, { ...meta, kind: "training_runs" });

  const testFull = samples.testFull;
  const qSim = best.predictions.testFull ?? new Float64Array(0);
  const simRows: SimRow[] = [];
  for (let i = 0; i < testFull.nSamples; i++) {
    const t = testFull.dayIndex[i];
    simRows.push({
      date: dateOf(series, t),
      qObs: series.qObs[t],
      qSim: qSim[i],
    });
  }
  const tag = `${args.basinId}_${MODEL_NAME}`;
  writeSimCsv(args.out, tag, simRows, { ...meta, kind: "test_simulation" });

  let metricCells: Cell[];
  try {
    const rep = kge(best.predictions.test, samples.test.targets);
    metricCells = [
      rep.n,
      rep.kge,
      rep.kgeSS,
      rmse(best.predictions.test, samples.test.targets),
      rep.r,
      rep.alpha,
      rep.beta,
    ];
  } catch {
    metricCells = [samples.test.nSamples, null, null, null, null, null, null];
  }
  writeTable(
    join(args.out, "metrics_test.csv"),
    METRIC_COLUMNS,
    [[args.basinId, MODEL_NAME, "", "all", ...metricCells]],
    { ...meta, kind: "test_metrics" },
  );

  const valText = Number.isFinite(best.valKge) ? best.valKge.toFixed(4) : "nan";
  console.log(
    `train: ${tag} done (val KGE ${valText}, seed ${best.seed}, ` +
      `lr ${best.initialLr}) -> ${args.out}`,
  );
  return 0;
}

export async function main(argv: string[]): Promise<void> {
  await yargs(argv)
    .scriptName("lstm-benchmark")
    .command(
      "train",
      "calibrate the LSTM benchmark on one basin",
      (y) =>
        y
          .option("forcing", { type: "string", demandOption: true, describe: "forcing CSV (date,prcp_mm,pet_mm,q_mm)" })
          .option("out", { type: "string", demandOption: true, describe: "output directory" })
          .option("basin-id", { type: "string", demandOption: true, describe: "basin identifier for output rows" })
          .option("train", { type: "string", default: "1987,2004", describe: "training year pair a,b (Jan 1 a .. Dec 31 b-1)" })
          .option("val", { type: "string", default: "1980,1987", describe: "validation year pair" })
          .option("test", { type: "string", default: "2004,2014", describe: "test year pair" })
          .option("seq-len", { type: "number", default: DEFAULT_SEQ_LEN, describe: "lookback window length in days" })
          .option("hidden", { type: "number", default: DEFAULT_HIDDEN, describe: "LSTM units per layer" })
          .option("layers", { type: "number", default: DEFAULT_LAYERS, describe: "stacked LSTM layers" })
          .option("seeds", { type: "number", default: DEFAULT_SEEDS, describe: "number of initialization seeds" })
          .option("lrs", { type: "string", default: DEFAULT_LRS.join(","), describe: "comma-separated learning rates" })
          .option("epochs", { type: "number", default: DEFAULT_MAX_EPOCHS, describe: "maximum training epochs" })
          .option("batch", { type: "number", default: DEFAULT_BATCH, describe: "mini-batch size" })
          .option("patience", { type: "number", default: DEFAULT_PATIENCE, describe: "early-stopping patience (epochs)" })
          .option("verbose", { type: "boolean", default: false, describe: "log per-epoch progress" }),
      (argv) => {
        process.exitCode = cmdTrain(argv as unknown as TrainArgs);
      },
    )
    .demandCommand(1, "specify a command (train)")
    .strict()
    .version("0.1.0")
    .help()
    .fail((msg, err) => {
      console.error(`error: ${msg ?? (err as Error).message}`);
      process.exit(2);
    })
    .parseAsync();
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  main(hideBin(process.argv)).catch((err: unknown) => {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    process.exit(2);
  });
}
