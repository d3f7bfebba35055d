"""Command-line interface.

Subcommands:

* ``grid``      - calibrate every basin x model x scenario cell of an
                  experiment, writing run tables, test metrics, simulated
                  hydrographs, flow-duration curves and gate curves;
* ``simulate``  - run one configuration with given parameters over a
                  forcing file;
* ``evaluate``  - score an existing simulation CSV against observations;
* ``fdc``       - flow-duration curve of one column of a CSV;
* ``gradcheck`` - finite-difference gradient contract over the grid.

A ``manifest.json`` in the output directory records completed grid
cells, so an interrupted run resumes without retraining and a completed
run is a no-op.  Per-run seeds derive from the master seed plus the
cell identity (basin id, structure, scenario), so results do not depend
on worker count or cell order.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import multiprocessing as mp

import numpy as np

from . import __version__, engine, metrics, synthetic, training
from .data import (
    ForcingSeries,
    PeriodSpec,
    load_attributes,
    load_forcing,
    split_periods,
)
from .errors import ExperimentConfigError, InvalidParameterError, McrrError
from .model import (
    PARAM_ORDER,
    ModelConfig,
    PhysicalParams,
    Scenario,
    SoilGeometry,
    Structure,
    all_configs,
    derive_geometry,
    simulate,
)

SIM_COLUMNS = ("date", "q_obs", "q_sim", "O", "L", "R_SE", "R_IE", "V", "theta", "s_pnd")
FDC_COLUMNS = ("exceedance_prob", "q_obs", "q_sim")
GATE_COLUMNS = ("s", "gate_o", "gate_v")
METRIC_COLUMNS = ("basin_id", "model", "scenario", "regime", "n_days",
                  "kge", "kge_ss", "rmse", "r", "alpha", "beta")
RUN_COLUMNS = (
    ("basin_id", "model", "scenario", "stage", "seed", "initial_lr",
     "epochs_run", "failed", "train_kge", "val_kge", "selected")
    + tuple(f"raw_{n}" for n in PARAM_ORDER)
    + tuple(f"phys_{n}" for n in PARAM_ORDER)
)

_STRUCTURE_INDEX = {s: i for i, s in enumerate(Structure)}
_SCENARIO_INDEX = {s: i for i, s in enumerate(Scenario)}


# --------------------------------------------------------------------------
# Experiment configuration
# --------------------------------------------------------------------------

@dataclass
class Experiment:
    """Resolved experiment configuration (paths absolute, defaults filled)."""

    basins: dict[str, Path]
    attributes_csv: Path
    models: tuple[str, ...]
    scenarios: tuple[str, ...]
    periods: PeriodSpec
    n_seeds: int = training.STAGE1_SEEDS
    stage1_lr: float = training.STAGE1_LR
    stage2_lrs: tuple[float, ...] = training.STAGE2_LRS
    epochs: int = training.DEFAULT_EPOCHS
    master_seed: int = 0
    workers: int = 1
    output_dir: Path = Path("out")
    low_p: float = 0.7
    high_p: float = 0.2

    def cells(self) -> list[tuple[str, str, str]]:
        return [
            (basin, model, scenario)
            for basin in self.basins
            for model in self.models
            for scenario in self.scenarios
        ]

    def digest(self) -> str:
        payload = {
            "basins": {k: str(v) for k, v in self.basins.items()},
            "attributes_csv": str(self.attributes_csv),
            "models": self.models,
            "scenarios": self.scenarios,
            "periods": {
                name: [str(d) for d in getattr(self.periods, name)]
                for name in ("train", "val", "test")
            },
            "spinup_years": self.periods.spinup_years,
            "n_seeds": self.n_seeds,
            "stage1_lr": self.stage1_lr,
            "stage2_lrs": self.stage2_lrs,
            "epochs": self.epochs,
            "master_seed": self.master_seed,
            "low_p": self.low_p,
            "high_p": self.high_p,
        }
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse_period_pair(name: str, value) -> tuple[dt.date, dt.date]:
    if (not isinstance(value, (list, tuple))) or len(value) != 2:
        raise ExperimentConfigError(f"periods.{name} must be a 2-element list")
    a, b = value
    if isinstance(a, int) and isinstance(b, int):
        if b <= a:
            raise ExperimentConfigError(f"periods.{name}: year pair must be increasing")
        return dt.date(a, 1, 1), dt.date(b - 1, 12, 31)
    try:
        return dt.date.fromisoformat(str(a)), dt.date.fromisoformat(str(b))
    except ValueError as exc:
        raise ExperimentConfigError(f"periods.{name}: {exc}") from None


def load_experiment(path) -> Experiment:
    """Load and validate an experiment JSON file.

    Relative paths inside the file resolve against the file's directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ExperimentConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ExperimentConfigError(f"{path}: top level must be an object")
    base = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    basins = raw.get("basins")
    if not isinstance(basins, dict) or not basins:
        raise ExperimentConfigError(f"{path}: 'basins' must be a non-empty mapping "
                                    "of basin id to forcing CSV path")
    if "attributes_csv" not in raw:
        raise ExperimentConfigError(f"{path}: 'attributes_csv' is required")

    models = tuple(raw.get("models", [s.value for s in Structure]))
    scenarios = tuple(raw.get("scenarios", [s.value for s in Scenario]))
    if not models or not scenarios:
        raise ExperimentConfigError(f"{path}: models and scenarios must be non-empty")
    for m in models:
        if m not in Structure._value2member_map_:
            raise ExperimentConfigError(f"{path}: unknown model {m!r}")
    for s in scenarios:
        if s not in Scenario._value2member_map_:
            raise ExperimentConfigError(f"{path}: unknown scenario {s!r}")

    praw = raw.get("periods", {})
    defaults = {"train": (1987, 2004), "val": (1980, 1987), "test": (2004, 2014)}
    pairs = {
        name: _parse_period_pair(name, praw[name]) if name in praw
        else _parse_period_pair(name, defaults[name])
        for name in ("train", "val", "test")
    }
    try:
        periods = PeriodSpec(
            train=pairs["train"], val=pairs["val"], test=pairs["test"],
            spinup_years=int(praw.get("spinup_years", 3)),
        )
    except McrrError as exc:
        raise ExperimentConfigError(f"{path}: {exc}") from None

    try:
        exp = Experiment(
            basins={str(k): resolve(v) for k, v in basins.items()},
            attributes_csv=resolve(raw["attributes_csv"]),
            models=models,
            scenarios=scenarios,
            periods=periods,
            n_seeds=int(raw.get("n_seeds", training.STAGE1_SEEDS)),
            stage1_lr=float(raw.get("stage1_lr", training.STAGE1_LR)),
            stage2_lrs=tuple(float(x) for x in raw.get("stage2_lrs", training.STAGE2_LRS)),
            epochs=int(raw.get("epochs", training.DEFAULT_EPOCHS)),
            master_seed=int(raw.get("master_seed", 0)),
            workers=int(raw.get("workers", 1)),
            output_dir=resolve(raw.get("output_dir", "out")),
            low_p=float(raw.get("low_p", 0.7)),
            high_p=float(raw.get("high_p", 0.2)),
        )
    except (TypeError, ValueError) as exc:
        raise ExperimentConfigError(f"{path}: {exc}") from None
    if exp.n_seeds < 1 or exp.epochs < 0 or exp.workers < 1:
        raise ExperimentConfigError(f"{path}: n_seeds, epochs and workers must be positive")
    if not (0.0 < exp.high_p < exp.low_p < 1.0):
        raise ExperimentConfigError(f"{path}: need 0 < high_p < low_p < 1")
    return exp


def cell_seeds(master_seed: int, basin_id: str, model: str, scenario: str,
               n_seeds: int) -> np.ndarray:
    """Per-run seeds for a grid cell, stable under cell reordering."""
    basin_word = int.from_bytes(hashlib.sha256(basin_id.encode()).digest()[:4], "big")
    ss = np.random.SeedSequence(
        (master_seed, basin_word,
         _STRUCTURE_INDEX[Structure(model)], _SCENARIO_INDEX[Scenario(scenario)])
    )
    return ss.generate_state(n_seeds, dtype=np.uint32).astype(np.int64)


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _fmt(value) -> str:
    """Full-precision CSV cell; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return "" if np.isnan(v) else repr(v)


def write_table(path: Path, header, rows, meta: dict) -> None:
    """Write a CSV with a JSON metadata sidecar, atomically."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)
    sidecar = {
        "file": path.name,
        "columns": list(header),
        "created_utc": dt.datetime.now(dt.timezone.utc).isoformat(),
        "tool": f"mcrr {__version__}",
        **meta,
    }
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_table(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def _run_row(basin_id, model, scenario, rec: training.TrainingRunRecord,
             selected: bool, config: ModelConfig, h_soil: float) -> list:
    params = engine.to_physical(rec.final_raw, config, h_soil)
    active = config.active_parameters()
    raw_map = dict(zip(active, rec.final_raw))
    phys_map = params.as_dict()
    row = [basin_id, model, scenario, rec.stage, rec.seed, rec.initial_lr,
           rec.epochs_run, rec.failed,
           rec.train_kge if np.isfinite(rec.train_kge) else None,
           rec.val_kge if np.isfinite(rec.val_kge) else None,
           selected]
    row += [raw_map.get(n) for n in PARAM_ORDER]
    row += [phys_map[n] if n in active else None for n in PARAM_ORDER]
    return row


def _metric_rows(basin_id, model, scenario, q_sim, q_obs, mask,
                 low_p: float, high_p: float) -> list[list]:
    rows = []
    regimes = metrics.flow_regimes(q_obs, mask, low_p=low_p, high_p=high_p)
    subsets = [("all", mask), ("low", regimes.low), ("mid", regimes.mid),
               ("high", regimes.high)]
    for name, sub in subsets:
        n_days = int(np.sum(sub & np.isfinite(q_obs)))
        try:
            rep = metrics.kge(q_sim, q_obs, sub)
            err = metrics.rmse(q_sim, q_obs, sub)
            rows.append([basin_id, model, scenario, name, rep.n, rep.kge,
                         rep.kge_ss, err, rep.r, rep.alpha, rep.beta])
        except McrrError:
            rows.append([basin_id, model, scenario, name, n_days,
                         None, None, None, None, None, None])
    return rows


# --------------------------------------------------------------------------
# Grid command
# --------------------------------------------------------------------------

def _grid_cell(task: dict) -> dict:
    """Calibrate one cell and assemble everything the writer needs.

    Runs in a worker process; arguments and results must stay picklable.
    """
    basin_id = task["basin_id"]
    model = task["model"]
    scenario = task["scenario"]
    config = ModelConfig(Structure(model), Scenario(scenario))
    series = load_forcing(task["forcing_csv"])
    geom = derive_geometry(task["h_soil"])
    periods = PeriodSpec(
        train=tuple(dt.date.fromisoformat(d) for d in task["train"]),
        val=tuple(dt.date.fromisoformat(d) for d in task["val"]),
        test=tuple(dt.date.fromisoformat(d) for d in task["test"]),
        spinup_years=task["spinup_years"],
    )
    windows = split_periods(series, periods)
    problem = training.build_problem(series, windows, config, geom)
    seeds = cell_seeds(task["master_seed"], basin_id, model, scenario, task["n_seeds"])
    result = training.run_protocol(
        problem,
        n_seeds=task["n_seeds"],
        stage1_lr=task["stage1_lr"],
        stage2_lrs=tuple(task["stage2_lrs"]),
        epochs=task["epochs"],
        seeds=seeds,
    )
    sel = result.selected

    params = engine.to_physical(sel.final_raw, config, geom.h_soil)
    run_geom = derive_geometry(geom.h_soil, float(params.porosity))
    win = windows["test"]
    test_forcing = problem.test_forcing
    sim = simulate(test_forcing, config, params, run_geom)
    offset = win.eval_start - win.sim_start
    n_eval = win.eval_stop - win.eval_start
    sim_rows = []
    for k in range(offset, offset + n_eval):
        rec = sim.records[k]
        state = sim.states[k + 1]
        sim_rows.append([
            str(test_forcing.dates[k]),
            test_forcing.q_obs[k], sim.q_sim[k],
            rec.baseflow, rec.et_loss, rec.sat_excess, rec.infil_excess,
            rec.drainage, state.theta, state.s_pnd,
        ])

    eval_mask = problem.test_mask
    metric_rows = _metric_rows(basin_id, model, scenario, sim.q_sim,
                               test_forcing.q_obs, eval_mask,
                               task["low_p"], task["high_p"])
    obs_curve = metrics.fdc(test_forcing.q_obs, eval_mask)
    sim_curve = metrics.fdc(sim.q_sim, eval_mask)
    fdc_rows = [[obs_curve[i, 0], obs_curve[i, 1], sim_curve[i, 1]]
                for i in range(len(obs_curve))]
    gate_rows = [list(r) for r in metrics.gate_response_curve(config, params, run_geom)]

    run_rows = []
    for rec in result.stage1.runs + result.stage2.runs:
        run_rows.append(_run_row(basin_id, model, scenario, rec,
                                 rec is sel, config, geom.h_soil))
    return {
        "basin_id": basin_id,
        "model": model,
        "scenario": scenario,
        "run_rows": run_rows,
        "metric_rows": metric_rows,
        "sim_rows": sim_rows,
        "fdc_rows": fdc_rows,
        "gate_rows": gate_rows,
        "selected_val_kge": sel.val_kge,
        "selected_stage": sel.stage,
        "selected_seed": sel.seed,
        "selected_lr": sel.initial_lr,
    }


def _load_manifest(out_dir: Path, digest: str) -> dict:
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("config_digest") != digest:
            raise ExperimentConfigError(
                f"{out_dir} holds results for a different configuration; "
                "use a fresh output directory"
            )
        return manifest
    return {"version": 1, "config_digest": digest, "cells": {}}


def _save_manifest(out_dir: Path, manifest: dict) -> None:
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out_dir / "manifest.json")


def cmd_grid(args) -> int:
    exp = load_experiment(args.config)
    if args.out:
        exp.output_dir = Path(args.out)
    if args.workers is not None:
        exp.workers = args.workers
    if args.master_seed is not None:
        exp.master_seed = args.master_seed
    if args.low_p is not None:
        exp.low_p = args.low_p
    if args.high_p is not None:
        exp.high_p = args.high_p
    if not (0.0 < exp.high_p < exp.low_p < 1.0):
        raise ExperimentConfigError("need 0 < high_p < low_p < 1")

    attrs = load_attributes(exp.attributes_csv)
    for basin_id, forcing_path in exp.basins.items():
        if basin_id not in attrs:
            raise ExperimentConfigError(f"basin {basin_id!r} missing from attributes")
        if not Path(forcing_path).exists():
            raise ExperimentConfigError(f"forcing file not found: {forcing_path}")

    out_dir = exp.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = exp.digest()
    manifest = _load_manifest(out_dir, digest)

    cells = exp.cells()
    pending = [c for c in cells if manifest["cells"].get("|".join(c), {}).get("status") != "done"]
    skipped = len(cells) - len(pending)
    if skipped:
        print(f"grid: {skipped}/{len(cells)} cells already complete, skipping")

    def make_task(cell) -> dict:
        basin_id, model, scenario = cell
        return {
            "basin_id": basin_id,
            "model": model,
            "scenario": scenario,
            "forcing_csv": str(exp.basins[basin_id]),
            "h_soil": attrs[basin_id].h_soil_mm,
            "train": [str(d) for d in exp.periods.train],
            "val": [str(d) for d in exp.periods.val],
            "test": [str(d) for d in exp.periods.test],
            "spinup_years": exp.periods.spinup_years,
            "n_seeds": exp.n_seeds,
            "stage1_lr": exp.stage1_lr,
            "stage2_lrs": list(exp.stage2_lrs),
            "epochs": exp.epochs,
            "master_seed": exp.master_seed,
            "low_p": exp.low_p,
            "high_p": exp.high_p,
        }

    meta_common = {
        "master_seed": exp.master_seed,
        "config_digest": digest,
        "periods": {name: [str(d) for d in getattr(exp.periods, name)]
                    for name in ("train", "val", "test")},
    }

    run_header, existing_runs = (list(RUN_COLUMNS), [])
    metric_header, existing_metrics = (list(METRIC_COLUMNS), [])
    runs_path = out_dir / "runs.csv"
    metrics_path = out_dir / "metrics_test.csv"
    done_keys = {k for k, v in manifest["cells"].items() if v.get("status") == "done"}

    def keep(row: dict) -> bool:
        return "|".join((row.get("basin_id", ""), row.get("model", ""),
                         row.get("scenario", ""))) in done_keys

    if done_keys and runs_path.exists():
        _, rows = read_table(runs_path)
        existing_runs = [[r.get(c, "") for c in run_header] for r in rows if keep(r)]
    if done_keys and metrics_path.exists():
        _, rows = read_table(metrics_path)
        existing_metrics = [[r.get(c, "") for c in metric_header] for r in rows if keep(r)]

    def handle(result: dict) -> None:
        basin_id = result["basin_id"]
        model = result["model"]
        scenario = result["scenario"]
        tag = f"{basin_id}_{model}_{scenario}"
        cell_meta = {**meta_common, "basin_id": basin_id, "model": model,
                     "scenario": scenario}
        write_table(out_dir / f"sim_{tag}.csv", SIM_COLUMNS,
                    result["sim_rows"], {**cell_meta, "kind": "test_simulation"})
        write_table(out_dir / f"fdc_{tag}.csv", FDC_COLUMNS,
                    result["fdc_rows"], {**cell_meta, "kind": "flow_duration_curve"})
        write_table(out_dir / f"gates_{tag}.csv", GATE_COLUMNS,
                    result["gate_rows"], {**cell_meta, "kind": "gate_response"})
        existing_runs.extend(result["run_rows"])
        existing_metrics.extend(result["metric_rows"])
        write_table(runs_path, run_header, existing_runs,
                    {**meta_common, "kind": "training_runs"})
        write_table(metrics_path, metric_header, existing_metrics,
                    {**meta_common, "kind": "test_metrics"})
        key = "|".join((basin_id, model, scenario))
        manifest["cells"][key] = {
            "status": "done",
            "completed_utc": dt.datetime.now(dt.timezone.utc).isoformat(),
            "selected_val_kge": result["selected_val_kge"],
            "selected_stage": result["selected_stage"],
            "selected_seed": int(result["selected_seed"]),
            "selected_lr": result["selected_lr"],
            "files": [f"sim_{tag}.csv", f"fdc_{tag}.csv", f"gates_{tag}.csv"],
        }
        done_keys.add(key)
        _save_manifest(out_dir, manifest)
        print(f"grid: {tag} done (val KGE {result['selected_val_kge']:.4f}, "
              f"{result['selected_stage']} stage, lr {result['selected_lr']})")

    if exp.workers > 1 and len(pending) > 1:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=exp.workers, mp_context=ctx) as pool:
            for result in pool.map(_grid_cell, [make_task(c) for c in pending]):
                handle(result)
    else:
        for cell in pending:
            handle(_grid_cell(make_task(cell)))

    print(f"grid: complete ({len(cells)} cells) -> {out_dir}")
    return 0


# --------------------------------------------------------------------------
# Simulate / evaluate / fdc / gradcheck commands
# --------------------------------------------------------------------------

def _load_params_file(path) -> tuple[ModelConfig, np.ndarray | None, PhysicalParams | None, dict]:
    """Read a parameter JSON: model, scenario, and raw or physical values."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ExperimentConfigError(f"{path}: {exc}") from None
    for key in ("model", "scenario"):
        if key not in raw:
            raise ExperimentConfigError(f"{path}: {key!r} is required")
    config = ModelConfig(Structure(raw["model"]), Scenario(raw["scenario"]))
    if ("raw" in raw) == ("physical" in raw):
        raise ExperimentConfigError(f"{path}: provide exactly one of 'raw' or 'physical'")
    if "raw" in raw:
        vec = np.asarray(raw["raw"], dtype=float)
        return config, vec, None, raw
    phys = raw["physical"]
    if not isinstance(phys, dict):
        raise ExperimentConfigError(f"{path}: 'physical' must be a mapping")
    unknown = set(phys) - set(PARAM_ORDER)
    if unknown:
        raise ExperimentConfigError(f"{path}: unknown parameters {sorted(unknown)}")
    return config, None, PhysicalParams(**{k: float(v) for k, v in phys.items()}), raw


def cmd_simulate(args) -> int:
    series = load_forcing(args.forcing)
    config, raw_vec, phys, payload = _load_params_file(args.params)
    h_soil = float(payload.get("h_soil_mm", 0.0) or 0.0)
    if h_soil <= 0.0:
        raise ExperimentConfigError(f"{args.params}: positive 'h_soil_mm' is required")
    if raw_vec is not None:
        params = engine.to_physical(raw_vec, config, h_soil)
    else:
        params = phys
    geom = derive_geometry(h_soil, float(params.porosity))
    params.validate(config, geom)
    basin_id = str(payload.get("basin_id", "basin"))

    result = simulate(series, config, params, geom)
    rows = []
    for k in range(len(series)):
        rec = result.records[k]
        state = result.states[k + 1]
        rows.append([str(series.dates[k]), series.q_obs[k], result.q_sim[k],
                     rec.baseflow, rec.et_loss, rec.sat_excess, rec.infil_excess,
                     rec.drainage, state.theta, state.s_pnd])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{basin_id}_{config.structure.value}_{config.scenario.value}"
    path = out_dir / f"sim_{tag}.csv"
    write_table(path, SIM_COLUMNS, rows, {
        "kind": "simulation", "basin_id": basin_id,
        "model": config.structure.value, "scenario": config.scenario.value,
        "h_soil_mm": h_soil, "params": params.as_dict(),
    })
    print(f"simulate: wrote {path}")
    return 0


def _read_sim_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Dates, simulated flow and (when present) observed flow from a sim CSV."""
    header, rows = read_table(path)
    if "date" not in header or "q_sim" not in header:
        raise ExperimentConfigError(f"{path}: need 'date' and 'q_sim' columns")
    dates = np.array([np.datetime64(r["date"], "D") for r in rows])
    q_sim = np.array([float(r["q_sim"]) for r in rows])
    q_obs = None
    if "q_obs" in header:
        q_obs = np.array([float(r["q_obs"]) if r["q_obs"] else np.nan for r in rows])
    return dates, q_sim, q_obs


def cmd_evaluate(args) -> int:
    dates, q_sim, sim_obs = _read_sim_csv(args.sim)
    if args.forcing:
        series = load_forcing(args.forcing)
        idx = {d: i for i, d in enumerate(series.dates)}
        keep = [i for i, d in enumerate(dates) if d in idx]
        if not keep:
            raise ExperimentConfigError("simulation and forcing dates do not overlap")
        dates = dates[keep]
        q_sim = q_sim[keep]
        q_obs = np.array([series.q_obs[idx[d]] for d in dates])
    elif sim_obs is not None:
        q_obs = sim_obs
    else:
        raise ExperimentConfigError("need --forcing or a q_obs column in the sim CSV")

    mask = np.isfinite(q_obs)
    basin_id = args.basin or "basin"
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, scenario = "-", "-"
    gate_rows = None
    if args.params:
        config, raw_vec, phys, payload = _load_params_file(args.params)
        model, scenario = config.structure.value, config.scenario.value
        h_soil = float(payload.get("h_soil_mm", 0.0) or 0.0)
        if h_soil <= 0.0:
            raise ExperimentConfigError(f"{args.params}: positive 'h_soil_mm' is required")
        params = engine.to_physical(raw_vec, config, h_soil) if raw_vec is not None else phys
        geom = derive_geometry(h_soil, float(params.porosity))
        params.validate(config, geom)
        gate_rows = [list(r) for r in metrics.gate_response_curve(config, params, geom)]

    rows = _metric_rows(basin_id, model, scenario, q_sim, q_obs, mask,
                        args.low_p, args.high_p)
    meta = {"kind": "evaluation", "basin_id": basin_id, "sim_file": str(args.sim),
            "low_p": args.low_p, "high_p": args.high_p}
    write_table(out_dir / "metrics_eval.csv", METRIC_COLUMNS, rows, meta)

    obs_curve = metrics.fdc(q_obs, mask)
    sim_curve = metrics.fdc(q_sim, mask)
    fdc_rows = [[obs_curve[i, 0], obs_curve[i, 1], sim_curve[i, 1]]
                for i in range(len(obs_curve))]
    write_table(out_dir / "fdc_eval.csv", FDC_COLUMNS, fdc_rows,
                {**meta, "kind": "flow_duration_curve"})
    if gate_rows is not None:
        write_table(out_dir / "gates_eval.csv", GATE_COLUMNS, gate_rows,
                    {**meta, "kind": "gate_response"})

    overall = rows[0]
    print(f"evaluate: n={overall[4]} KGE={_fmt(overall[5])} KGE_SS={_fmt(overall[6])} "
          f"RMSE={_fmt(overall[7])}")
    return 0


def cmd_fdc(args) -> int:
    header, rows = read_table(args.input)
    if args.column not in header:
        raise ExperimentConfigError(
            f"{args.input}: no column {args.column!r}; available: {', '.join(header)}"
        )
    values = np.array([float(r[args.column]) if r[args.column] else np.nan for r in rows])
    curve = metrics.fdc(values, np.isfinite(values))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, ("exceedance_prob", "flow"),
                [list(r) for r in curve],
                {"kind": "flow_duration_curve", "source": str(args.input),
                 "column": args.column})
    print(f"fdc: wrote {out} ({len(curve)} points)")
    return 0


def cmd_gradcheck(args, gradient_fn=None) -> int:
    if args.config:
        exp = load_experiment(args.config)
        configs = [ModelConfig(Structure(m), Scenario(s))
                   for m in exp.models for s in exp.scenarios]
        master_seed = exp.master_seed if args.master_seed is None else args.master_seed
    else:
        configs = list(all_configs())
        master_seed = args.master_seed or 0

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    all_passed = True
    for i, config in enumerate(configs):
        short, mask, geom = synthetic.gradcheck_case(config, seed=master_seed + 11 * i)
        report = engine.gradient_check(
            config, geom, short, mask,
            n_samples=args.n_samples,
            seed=master_seed + i,
            gradient_fn=gradient_fn,
        )
        rows.append(report.row())
        all_passed &= report.passed
        print(f"gradcheck: {config.name} max_rel_err={report.max_rel_err:.3e} "
              f"({report.n_samples} samples, {report.n_filtered_margin} filtered, "
              f"{report.n_flipped_components} flipped) "
              f"{'ok' if report.passed else 'FAIL'}")
    header = list(rows[0].keys())
    write_table(out_dir / "gradcheck.csv", header,
                [[r[c] for c in header] for r in rows],
                {"kind": "gradient_check", "n_samples": args.n_samples,
                 "master_seed": master_seed})
    if not all_passed:
        print("gradcheck: FAILED", file=sys.stderr)
        return 1
    print(f"gradcheck: all {len(configs)} configurations passed")
    return 0


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcrr",
        description="Mass-conserving soil-bucket runoff models: calibration and evaluation",
    )
    parser.add_argument("--version", action="version", version=f"mcrr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grid", help="calibrate every basin/model/scenario cell")
    g.add_argument("--config", required=True, help="experiment JSON file")
    g.add_argument("--out", help="output directory (overrides the config)")
    g.add_argument("--workers", type=int, help="parallel worker processes")
    g.add_argument("--master-seed", type=int, help="master seed (overrides the config)")
    g.add_argument("--low-p", type=float, help="low-flow exceedance threshold")
    g.add_argument("--high-p", type=float, help="high-flow exceedance threshold")
    g.set_defaults(fn=cmd_grid)

    s = sub.add_parser("simulate", help="run one configuration over a forcing file")
    s.add_argument("--forcing", required=True, help="forcing CSV")
    s.add_argument("--params", required=True, help="parameter JSON file")
    s.add_argument("--out", default="out", help="output directory")
    s.set_defaults(fn=cmd_simulate)

    e = sub.add_parser("evaluate", help="score a simulation CSV against observations")
    e.add_argument("--sim", required=True, help="simulation CSV with date and q_sim")
    e.add_argument("--forcing", help="forcing CSV supplying observations")
    e.add_argument("--params", help="parameter JSON (adds gate-response output)")
    e.add_argument("--basin", help="basin id for the report rows")
    e.add_argument("--out", default="out", help="output directory")
    e.add_argument("--low-p", type=float, default=0.7)
    e.add_argument("--high-p", type=float, default=0.2)
    e.set_defaults(fn=cmd_evaluate)

    f = sub.add_parser("fdc", help="flow-duration curve of one CSV column")
    f.add_argument("--input", required=True, help="CSV file")
    f.add_argument("--column", default="q_sim", help="column to rank (default q_sim)")
    f.add_argument("--out", default="fdc.csv", help="output CSV path")
    f.set_defaults(fn=cmd_fdc)

    c = sub.add_parser("gradcheck", help="finite-difference gradient contract")
    c.add_argument("--config", help="experiment JSON (defaults to the full grid)")
    c.add_argument("--n-samples", type=int, default=100)
    c.add_argument("--out", default="out", help="output directory")
    c.add_argument("--master-seed", type=int, help="seed for forcing and draws")
    c.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except McrrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
