"""Command-line workflow tests: grid, resume, simulate, evaluate, fdc, gradcheck."""

import json
from pathlib import Path

import numpy as np
import pytest

from mcrr import cli, synthetic
from mcrr.cli import (
    METRIC_COLUMNS,
    RUN_COLUMNS,
    SIM_COLUMNS,
    build_parser,
    cell_seeds,
    cmd_gradcheck,
    load_experiment,
    main,
    read_table,
    write_table,
)
from mcrr.data import write_forcing
from mcrr.errors import ExperimentConfigError
from mcrr.model import ModelConfig


# --------------------------------------------------------------------------
# Helpers and shared grid run
# --------------------------------------------------------------------------

def make_workspace(root: Path, basin_cache, *, models, scenarios, **overrides):
    """Write forcing, attributes and an experiment JSON under ``root``."""
    forcing, geom, _ = basin_cache("M1", "NP")
    root.mkdir(parents=True, exist_ok=True)
    write_forcing(root / "demo.csv", forcing)
    (root / "attributes.csv").write_text(
        "basin_id,h_soil_mm,region\ndemo,500,synthetic\n"
    )
    payload = {
        "basins": {"demo": "demo.csv"},
        "attributes_csv": "attributes.csv",
        "models": models,
        "scenarios": scenarios,
        "periods": {"train": [1996, 2001], "val": [1993, 1996],
                    "test": [2001, 2005]},
        "n_seeds": 2,
        "stage1_lr": 0.1,
        "stage2_lrs": [0.05, 0.2],
        "epochs": 3,
        "master_seed": 1,
        "output_dir": "out",
        **overrides,
    }
    cfg = root / "experiment.json"
    cfg.write_text(json.dumps(payload))
    return cfg


@pytest.fixture(scope="module")
def grid_run(tmp_path_factory, basin_cache):
    """One tiny two-cell grid run shared by the output-inspection tests."""
    root = tmp_path_factory.mktemp("grid")
    cfg = make_workspace(root, basin_cache, models=["M1"], scenarios=["NP", "PND"])
    code = main(["grid", "--config", str(cfg)])
    assert code == 0
    return root, cfg


# --------------------------------------------------------------------------
# Seeds and tables
# --------------------------------------------------------------------------

def test_cell_seeds_are_stable_and_cell_specific():
    a = cell_seeds(1, "demo", "M1", "NP", 5)
    assert np.array_equal(a, cell_seeds(1, "demo", "M1", "NP", 5))
    assert a.shape == (5,)
    assert len(np.unique(a)) == 5
    for other in (cell_seeds(2, "demo", "M1", "NP", 5),
                  cell_seeds(1, "other", "M1", "NP", 5),
                  cell_seeds(1, "demo", "M3", "NP", 5),
                  cell_seeds(1, "demo", "M1", "PND", 5)):
        assert not np.array_equal(a, other)


def test_write_table_round_trip_and_sidecar(tmp_path):
    path = tmp_path / "table.csv"
    rows = [["a", 1, 0.5, True, np.nan], ["b", 2, 1.0 / 3.0, False, 4.0]]
    write_table(path, ("name", "count", "value", "flag", "extra"), rows,
                {"kind": "unit_test"})
    header, read = read_table(path)
    assert header == ["name", "count", "value", "flag", "extra"]
    assert read[0]["extra"] == ""          # NaN round-trips as empty
    assert read[0]["flag"] == "True"
    assert float(read[1]["value"]) == 1.0 / 3.0   # repr keeps full precision
    sidecar = json.loads((tmp_path / "table.csv.meta.json").read_text())
    assert sidecar["kind"] == "unit_test"
    assert sidecar["columns"] == ["name", "count", "value", "flag", "extra"]
    assert not list(tmp_path.glob("*.tmp"))


# --------------------------------------------------------------------------
# Experiment configuration
# --------------------------------------------------------------------------

def test_load_experiment_fills_defaults(tmp_path, basin_cache):
    cfg = make_workspace(tmp_path, basin_cache, models=["M2"], scenarios=["NP_DR"])
    exp = load_experiment(cfg)
    assert exp.models == ("M2",) and exp.scenarios == ("NP_DR",)
    assert exp.basins["demo"] == tmp_path / "demo.csv"
    assert exp.periods.train[0].isoformat() == "1996-01-01"
    assert exp.periods.train[1].isoformat() == "2000-12-31"
    assert exp.workers == 1 and exp.low_p == 0.7 and exp.high_p == 0.2
    assert exp.cells() == [("demo", "M2", "NP_DR")]
    assert exp.digest() == exp.digest()


def test_load_experiment_defaults_to_full_grid(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"basins": {"b": "b.csv"}, "attributes_csv": "a.csv"}))
    exp = load_experiment(cfg)
    assert len(exp.models) == 5 and len(exp.scenarios) == 4
    assert len(exp.cells()) == 20
    assert exp.periods.train[0].isoformat() == "1987-01-01"


@pytest.mark.parametrize("payload,fragment", [
    ({}, "basins"),
    ({"basins": {}}, "basins"),
    ({"basins": {"b": "b.csv"}}, "attributes_csv"),
    ({"basins": {"b": "b.csv"}, "attributes_csv": "a.csv",
      "models": ["M9"]}, "unknown model"),
    ({"basins": {"b": "b.csv"}, "attributes_csv": "a.csv",
      "scenarios": ["XX"]}, "unknown scenario"),
    ({"basins": {"b": "b.csv"}, "attributes_csv": "a.csv",
      "periods": {"train": [2001, 2001]}}, "increasing"),
    ({"basins": {"b": "b.csv"}, "attributes_csv": "a.csv",
      "periods": {"train": [2001]}}, "2-element"),
    ({"basins": {"b": "b.csv"}, "attributes_csv": "a.csv",
      "n_seeds": 0}, "positive"),
    ({"basins": {"b": "b.csv"}, "attributes_csv": "a.csv",
      "low_p": 0.2, "high_p": 0.7}, "high_p"),
])
def test_load_experiment_rejects_bad_configs(tmp_path, payload, fragment):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps(payload))
    with pytest.raises(ExperimentConfigError) as err:
        load_experiment(cfg)
    assert fragment in str(err.value)


def test_load_experiment_rejects_malformed_json(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text("not json {")
    with pytest.raises(ExperimentConfigError):
        load_experiment(cfg)
    cfg.write_text(json.dumps([1, 2, 3]))
    with pytest.raises(ExperimentConfigError):
        load_experiment(cfg)


# --------------------------------------------------------------------------
# Grid outputs
# --------------------------------------------------------------------------

def test_grid_writes_runs_and_metrics(grid_run):
    root, _ = grid_run
    out = root / "out"
    header, runs = read_table(out / "runs.csv")
    assert header == list(RUN_COLUMNS)
    # Two cells, each 2 exploration seeds + 2 refinement rates.
    assert len(runs) == 2 * (2 + 2)
    for scenario in ("NP", "PND"):
        cell = [r for r in runs if r["scenario"] == scenario]
        assert len(cell) == 4
        assert sum(r["selected"] == "True" for r in cell) == 1
        assert {r["stage"] for r in cell} == {"explore", "refine"}
    header, rows = read_table(out / "metrics_test.csv")
    assert header == list(METRIC_COLUMNS)
    assert len(rows) == 2 * 4
    for row in rows:
        assert row["regime"] in {"all", "low", "mid", "high"}
        if row["kge"]:
            assert np.isfinite(float(row["kge"]))


def test_grid_writes_per_cell_files(grid_run):
    root, _ = grid_run
    out = root / "out"
    for scenario in ("NP", "PND"):
        tag = f"demo_M1_{scenario}"
        header, sim = read_table(out / f"sim_{tag}.csv")
        assert header == list(SIM_COLUMNS)
        assert len(sim) == 1461            # 2001-01-01 .. 2004-12-31
        assert sim[0]["date"] == "2001-01-01"
        assert sim[-1]["date"] == "2004-12-31"
        q = np.array([float(r["q_sim"]) for r in sim])
        assert np.all(q >= 0.0)
        assert (out / f"fdc_{tag}.csv").exists()
        assert (out / f"gates_{tag}.csv").exists()
        assert (out / f"sim_{tag}.csv.meta.json").exists()


def test_grid_manifest_marks_cells_done(grid_run):
    root, cfg = grid_run
    manifest = json.loads((root / "out" / "manifest.json").read_text())
    assert manifest["config_digest"] == load_experiment(cfg).digest()
    assert set(manifest["cells"]) == {"demo|M1|NP", "demo|M1|PND"}
    for cell in manifest["cells"].values():
        assert cell["status"] == "done"
        assert np.isfinite(cell["selected_val_kge"])


def test_grid_resume_skips_completed_cells(grid_run, monkeypatch, capsys):
    root, cfg = grid_run

    def boom(task):
        raise AssertionError("resume must not retrain finished cells")

    monkeypatch.setattr(cli, "_grid_cell", boom)
    assert main(["grid", "--config", str(cfg)]) == 0
    assert "2/2 cells already complete" in capsys.readouterr().out
    # Outputs survive the no-op rerun.
    _, runs = read_table(root / "out" / "runs.csv")
    assert len(runs) == 8


def test_grid_rejects_output_dir_of_other_config(grid_run, capsys):
    root, cfg = grid_run
    assert main(["grid", "--config", str(cfg), "--master-seed", "99"]) == 2
    assert "different configuration" in capsys.readouterr().err


def test_grid_missing_forcing_file_fails(tmp_path, basin_cache):
    cfg = make_workspace(tmp_path, basin_cache, models=["M1"], scenarios=["NP"])
    (tmp_path / "demo.csv").unlink()
    assert main(["grid", "--config", str(cfg)]) == 2


def test_grid_parallel_workers_smoke(tmp_path, basin_cache):
    cfg = make_workspace(tmp_path, basin_cache, models=["M1"],
                         scenarios=["NP", "PND"], n_seeds=1, epochs=1,
                         stage2_lrs=[0.05])
    assert main(["grid", "--config", str(cfg), "--workers", "2"]) == 0
    _, runs = read_table(tmp_path / "out" / "runs.csv")
    assert len(runs) == 2 * (1 + 1)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert all(c["status"] == "done" for c in manifest["cells"].values())


# --------------------------------------------------------------------------
# Simulate and evaluate
# --------------------------------------------------------------------------

@pytest.fixture()
def forcing_csv(tmp_path, basin_cache):
    forcing, _, _ = basin_cache("M1", "NP")
    path = tmp_path / "forcing.csv"
    write_forcing(path, forcing.window(0, 600))
    return path


def params_file(tmp_path, payload, name="params.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def test_simulate_with_raw_parameters(tmp_path, forcing_csv):
    params = params_file(tmp_path, {
        "model": "M1", "scenario": "NP", "h_soil_mm": 500.0,
        "basin_id": "demo", "raw": [0.5, 0.8, 1.0, 0.3],
    })
    out = tmp_path / "simout"
    assert main(["simulate", "--forcing", str(forcing_csv),
                 "--params", str(params), "--out", str(out)]) == 0
    header, rows = read_table(out / "sim_demo_M1_NP.csv")
    assert header == list(SIM_COLUMNS)
    assert len(rows) == 600
    assert all(float(r["q_sim"]) >= 0.0 for r in rows)
    sidecar = json.loads((out / "sim_demo_M1_NP.csv.meta.json").read_text())
    assert sidecar["params"]["k_sat"] == pytest.approx(0.6224593312018546)


def test_simulate_with_physical_parameters(tmp_path, forcing_csv):
    params = params_file(tmp_path, {
        "model": "M3", "scenario": "NP", "h_soil_mm": 500.0,
        "physical": {"k_sat": 0.4, "porosity": 0.6, "t_wt": 100.0,
                     "a_o": 2.0, "b_o": 1.0, "b_l": 1.0},
    })
    out = tmp_path / "simout"
    assert main(["simulate", "--forcing", str(forcing_csv),
                 "--params", str(params), "--out", str(out)]) == 0
    assert (out / "sim_basin_M3_NP.csv").exists()


@pytest.mark.parametrize("payload", [
    {"scenario": "NP", "h_soil_mm": 500.0, "raw": [0.0] * 4},             # no model
    {"model": "M1", "scenario": "NP", "raw": [0.0] * 4},                  # no h_soil
    {"model": "M1", "scenario": "NP", "h_soil_mm": 500.0},                # neither form
    {"model": "M1", "scenario": "NP", "h_soil_mm": 500.0,
     "raw": [0.0] * 4, "physical": {"k_sat": 0.5}},                       # both forms
    {"model": "M1", "scenario": "NP", "h_soil_mm": 500.0, "raw": [0.0]},  # wrong length
    {"model": "M1", "scenario": "NP", "h_soil_mm": 500.0,
     "physical": {"nope": 1.0}},                                          # unknown name
    {"model": "M1", "scenario": "NP", "h_soil_mm": 500.0,
     "physical": {"k_sat": 7.0}},                                         # out of range
])
def test_simulate_rejects_bad_parameter_files(tmp_path, forcing_csv, payload, capsys):
    params = params_file(tmp_path, payload)
    assert main(["simulate", "--forcing", str(forcing_csv),
                 "--params", str(params), "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err


def test_evaluate_perfect_fit_scores_one(tmp_path):
    rng = np.random.default_rng(0)
    q = rng.gamma(2.0, 2.0, 400)
    dates = [str(d) for d in np.datetime64("2000-01-01") + np.arange(400)]
    sim = tmp_path / "sim.csv"
    write_table(sim, ("date", "q_obs", "q_sim"),
                [[dates[i], q[i], q[i]] for i in range(400)], {"kind": "test"})
    out = tmp_path / "evalout"
    assert main(["evaluate", "--sim", str(sim), "--out", str(out),
                 "--basin", "demo"]) == 0
    header, rows = read_table(out / "metrics_eval.csv")
    assert header == list(METRIC_COLUMNS)
    assert [r["regime"] for r in rows] == ["all", "low", "mid", "high"]
    overall = rows[0]
    assert float(overall["kge"]) == pytest.approx(1.0, abs=1e-12)
    assert float(overall["kge_ss"]) == pytest.approx(1.0, abs=1e-12)
    assert float(overall["rmse"]) == pytest.approx(0.0, abs=1e-12)
    assert (out / "fdc_eval.csv").exists()


def test_evaluate_against_forcing_and_gates(tmp_path, forcing_csv, basin_cache):
    forcing, _, _ = basin_cache("M1", "NP")
    sub = forcing.window(100, 500)
    sim = tmp_path / "sim.csv"
    write_table(sim, ("date", "q_sim"),
                [[str(sub.dates[i]), float(sub.q_obs[i])] for i in range(len(sub))],
                {"kind": "test"})
    params = params_file(tmp_path, {
        "model": "M2", "scenario": "NP", "h_soil_mm": 500.0,
        "raw": [0.5, 0.8, 1.0, 0.2, 0.4, 0.1, 0.3],
    })
    out = tmp_path / "evalout"
    assert main(["evaluate", "--sim", str(sim), "--forcing", str(forcing_csv),
                 "--params", str(params), "--out", str(out)]) == 0
    _, rows = read_table(out / "metrics_eval.csv")
    assert float(rows[0]["kge"]) == pytest.approx(1.0, abs=1e-12)
    header, gates = read_table(out / "gates_eval.csv")
    assert header == ["s", "gate_o", "gate_v"]
    assert len(gates) == 101


def test_evaluate_requires_observations_or_overlap(tmp_path, forcing_csv, capsys):
    sim = tmp_path / "sim.csv"
    write_table(sim, ("date", "q_sim"), [["2050-01-01", 1.0], ["2050-01-02", 2.0]],
                {"kind": "test"})
    assert main(["evaluate", "--sim", str(sim), "--out", str(tmp_path / "o")]) == 2
    assert main(["evaluate", "--sim", str(sim), "--forcing", str(forcing_csv),
                 "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "q_obs" in err and "overlap" in err


# --------------------------------------------------------------------------
# FDC command
# --------------------------------------------------------------------------

def test_fdc_command(tmp_path):
    src = tmp_path / "sim.csv"
    write_table(src, ("date", "q_sim"),
                [[f"2000-01-{d + 1:02d}", float(v)]
                 for d, v in enumerate([3.0, 1.0, 4.0, 1.0, 5.0])], {"kind": "t"})
    out = tmp_path / "curve.csv"
    assert main(["fdc", "--input", str(src), "--out", str(out)]) == 0
    header, rows = read_table(out)
    assert header == ["exceedance_prob", "flow"]
    flows = [float(r["flow"]) for r in rows]
    assert flows == sorted(flows, reverse=True)
    probs = [float(r["exceedance_prob"]) for r in rows]
    assert probs[0] == pytest.approx(1.0 / 6.0)


def test_fdc_unknown_column(tmp_path, capsys):
    src = tmp_path / "sim.csv"
    write_table(src, ("date", "q_sim"), [["2000-01-01", 1.0]], {"kind": "t"})
    assert main(["fdc", "--input", str(src), "--column", "nope",
                 "--out", str(tmp_path / "c.csv")]) == 2
    assert "available" in capsys.readouterr().err


# --------------------------------------------------------------------------
# Gradient-check command
# --------------------------------------------------------------------------

def test_gradcheck_command_passes(tmp_path, basin_cache):
    cfg = make_workspace(tmp_path, basin_cache, models=["M1"], scenarios=["NP"])
    out = tmp_path / "gradout"
    assert main(["gradcheck", "--config", str(cfg), "--n-samples", "3",
                 "--out", str(out)]) == 0
    header, rows = read_table(out / "gradcheck.csv")
    assert len(rows) == 1
    assert rows[0]["config"] == "M1_NP"
    assert rows[0]["passed"] == "True"


def test_gradcheck_command_fails_on_corrupted_gradients(tmp_path, basin_cache):
    from mcrr.engine import gradient

    cfg = make_workspace(tmp_path, basin_cache, models=["M1"], scenarios=["NP"])
    args = build_parser().parse_args(
        ["gradcheck", "--config", str(cfg), "--n-samples", "2",
         "--out", str(tmp_path / "gradout")]
    )

    def corrupted(raw, *rest):
        return gradient(raw, *rest) * 1.02

    assert cmd_gradcheck(args, gradient_fn=corrupted) == 1


# --------------------------------------------------------------------------
# Entry point plumbing
# --------------------------------------------------------------------------

def test_main_reports_errors_on_stderr(tmp_path, capsys):
    assert main(["grid", "--config", str(tmp_path / "missing.json")]) == 2
    assert "error:" in capsys.readouterr().err


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
