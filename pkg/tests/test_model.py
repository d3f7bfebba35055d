"""Reference-model unit tests: geometry, gates, step semantics, conservation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcrr import engine
from mcrr.data import ForcingSeries
from mcrr.errors import (
    InvalidInputError,
    InvalidParameterError,
    InvariantViolationError,
)
from mcrr.model import (
    ModelConfig,
    ModelState,
    PhysicalParams,
    all_configs,
    baseflow_gated,
    baseflow_linear,
    default_initial_state,
    derive_geometry,
    drainage_gate,
    et_demand,
    infiltration_gate,
    mass_balance_residuals,
    root_weights,
    sigmoid,
    simulate,
    state_diagnostics,
    step,
)

import datetime as dt


def make_params(**kwargs) -> PhysicalParams:
    return PhysicalParams(**kwargs)


# --------------------------------------------------------------------------
# Geometry and diagnostics
# --------------------------------------------------------------------------

def test_geometry_values():
    geom = derive_geometry(500.0)
    assert geom.theta_max == 500.0
    assert geom.theta_min == 50.0
    assert geom.span == 450.0
    geom2 = derive_geometry(500.0, porosity=0.4)
    assert geom2.theta_max == 200.0
    assert geom2.theta_min == 20.0


@pytest.mark.parametrize("h,rho", [(0.0, 1.0), (-5.0, 1.0), (100.0, 0.0),
                                   (100.0, 1.5), (math.nan, 1.0)])
def test_geometry_rejects_bad_inputs(h, rho):
    with pytest.raises(InvalidInputError):
        derive_geometry(h, rho)


def test_state_diagnostics_midpoint_and_clipping():
    geom = derive_geometry(500.0)
    s, theta_a = state_diagnostics(275.0, geom)
    assert s == pytest.approx(0.5)
    assert theta_a == pytest.approx(225.0)
    s_lo, a_lo = state_diagnostics(geom.theta_min - 1e-12, geom)
    assert s_lo == 0.0 and a_lo == 0.0
    s_hi, _ = state_diagnostics(geom.theta_max + 1e-12, geom)
    assert s_hi == 1.0


def test_sigmoid_matches_direct_form_and_is_stable():
    for x in (-3.0, -0.5, 0.0, 0.7, 4.0):
        assert sigmoid(x) == pytest.approx(1.0 / (1.0 + math.exp(-x)), abs=1e-15)
    assert sigmoid(800.0) == 1.0
    assert sigmoid(-800.0) == 0.0


# --------------------------------------------------------------------------
# Process operators
# --------------------------------------------------------------------------

def test_root_weights_single_layer_is_exactly_one():
    assert root_weights((1.0,), m_l=2.3, c_l=-1.7) == [1.0]


def test_root_weights_three_layer_frozen_oracle():
    # Frozen from direct evaluation: equal layers, logistic slope -4, offset 0.
    w = root_weights((1.0, 1.0, 1.0), m_l=-4.0, c_l=0.0)
    assert w == pytest.approx(
        [0.688272084034249, 0.24184402007682557, 0.06988389588892542], abs=1e-15
    )
    assert math.fsum(w) == pytest.approx(1.0, abs=1e-12)


def test_root_weights_rejects_bad_layers():
    with pytest.raises(InvalidInputError):
        root_weights((), 0.0, 0.0)
    with pytest.raises(InvalidInputError):
        root_weights((1.0, -1.0), 0.0, 0.0)


def test_et_demand_zero_saturation_and_scaling():
    assert et_demand(0.0, pet=5.0, b_l=0.7) == 0.0
    assert et_demand(1.0, pet=5.0, b_l=0.7) == pytest.approx(5.0)
    assert et_demand(0.25, pet=4.0, b_l=2.0) == pytest.approx(0.25)
    with pytest.raises(InvalidInputError):
        et_demand(0.5, pet=-1.0, b_l=1.0)


def test_infiltration_gate_frozen_corners():
    # Frozen from direct evaluation with slope 6, offset 3.
    g0, ie0 = infiltration_gate(0.0, a_u=6.0, b_u=3.0)
    g1, ie1 = infiltration_gate(1.0, a_u=6.0, b_u=3.0)
    assert g0 == pytest.approx(0.9525741268224334, abs=1e-15)
    assert g1 == pytest.approx(0.04742587317756678, abs=1e-15)
    assert ie0 == 1.0 - g0


@given(st.floats(0.0, 1.0), st.floats(0.01, 20.0), st.floats(-20.0, 20.0))
def test_infiltration_gate_partition_is_exact(s, a_u, b_u):
    g_u, g_ie = infiltration_gate(s, a_u, b_u)
    assert 0.0 <= g_u <= 1.0
    assert g_u + g_ie == 1.0


def test_infiltration_gate_closes_with_saturation():
    gates = [infiltration_gate(s, 4.0, 1.0)[0] for s in np.linspace(0, 1, 11)]
    assert all(a > b for a, b in zip(gates, gates[1:]))


def test_baseflow_linear():
    assert baseflow_linear(225.0, 0.4) == pytest.approx(90.0)


def test_baseflow_gated_hand_case():
    # Hand case: h_soil 500, s 0.5, b_w 1 -> table at 250; threshold 125;
    # theta_a 225; slope 3 and offset 1 put the gate argument at 0.
    geom = derive_geometry(500.0)
    params = make_params(k_sat=0.5, a_o=3.0, b_o=1.0, t_wt=125.0)
    demand, h, x_h, drainable = baseflow_gated(0.5, 225.0, params, geom)
    assert h == pytest.approx(250.0)
    assert x_h == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert drainable == pytest.approx(56.25)
    assert demand == pytest.approx(14.0625, abs=1e-12)


def test_baseflow_gated_below_threshold_is_zero():
    geom = derive_geometry(500.0)
    params = make_params(k_sat=0.5, a_o=3.0, b_o=0.0, t_wt=300.0)
    demand, h, x_h, drainable = baseflow_gated(0.5, 225.0, params, geom)
    assert (demand, x_h, drainable) == (0.0, 0.0, 0.0)
    assert h == pytest.approx(250.0)


def test_drainage_gate_frozen_oracle():
    # Frozen from direct evaluation: gate argument 5 * 0.6 - 2 = 1.
    assert drainage_gate(0.6, a_v=5.0, b_v=2.0) * 200.0 == pytest.approx(
        146.21171572600098, abs=1e-10
    )


# --------------------------------------------------------------------------
# Configurations and parameters
# --------------------------------------------------------------------------

def test_grid_has_twenty_configs_with_expected_sizes():
    configs = all_configs()
    assert len(configs) == 20
    sizes = {c.name: len(c.active_parameters()) for c in configs}
    assert sizes["M1_NP"] == 4
    assert sizes["M2_NP"] == 7
    assert sizes["M3_NP"] == 8
    assert sizes["M4_NP"] == 10
    assert sizes["M5_NP"] == 11
    assert sizes["M5_PND_DR"] == 14
    for c in configs:
        extra = 0
        if c.ponding_active:
            extra += 1
        if c.drainage_active:
            extra += 2
        assert len(c.active_parameters()) == sizes[f"{c.structure.value}_NP"] + extra


def test_active_parameters_follow_canonical_order():
    config = ModelConfig("M5", "PND_DR")
    names = config.active_parameters()
    assert names == (
        "k_sat", "a_o", "b_o", "t_wt", "b_w", "porosity", "a_u", "b_u",
        "a_v", "b_v", "b_l", "m_l", "c_l", "s_max_pnd",
    )


def test_params_validate_bounds():
    geom = derive_geometry(500.0)
    config = ModelConfig("M5", "PND_DR")
    make_params(k_sat=0.5, b_w=1.5, porosity=0.8).validate(config, geom)
    with pytest.raises(InvalidParameterError):
        make_params(k_sat=1.5).validate(config, geom)
    with pytest.raises(InvalidParameterError):
        make_params(t_wt=500.0).validate(config, geom)
    with pytest.raises(InvalidParameterError):
        make_params(b_w=0.5).validate(config, geom)
    with pytest.raises(InvalidParameterError):
        make_params(b_l=0.0).validate(config, geom)
    with pytest.raises(InvalidParameterError):
        make_params(s_max_pnd=-1.0).validate(config, geom)
    # Fixed-parameter structures reject non-default values.
    with pytest.raises(InvalidParameterError):
        make_params(porosity=0.8).validate(ModelConfig("M2", "NP"), geom)
    with pytest.raises(InvalidParameterError):
        make_params(b_w=2.0).validate(ModelConfig("M4", "NP"), geom)


# --------------------------------------------------------------------------
# Step semantics
# --------------------------------------------------------------------------

GEOM = derive_geometry(500.0)


def test_step_depletion_order_m1():
    # No rain: transpiration then baseflow, both from start-of-step stocks.
    config = ModelConfig("M1", "NP")
    params = make_params(k_sat=0.2, b_l=1.0)
    state = ModelState(theta=275.0)
    new, rec = step(state, 0.0, 4.0, config, params, GEOM)
    assert rec.et_loss == pytest.approx(4.0 * 0.5)        # pet * s
    assert rec.baseflow == pytest.approx(0.2 * 225.0)     # k_sat * theta_a
    assert rec.sat_excess == 0.0 and rec.infil_excess == 0.0 and rec.drainage == 0.0
    assert new.theta == pytest.approx(275.0 - 2.0 - 45.0)
    assert rec.runoff == rec.baseflow


def test_step_saturation_excess_pins_storage():
    config = ModelConfig("M1", "NP")
    params = make_params(k_sat=0.1, b_l=1.0)
    state = ModelState(theta=490.0)
    new, rec = step(state, 100.0, 0.0, config, params, GEOM)
    assert rec.infiltration == pytest.approx(10.0)
    assert rec.sat_excess == pytest.approx(90.0)
    # Start-of-step available water drives baseflow, from a full store.
    assert rec.baseflow == pytest.approx(0.1 * 440.0)
    assert new.theta == pytest.approx(500.0 - 44.0)


def test_step_demand_exhaustion_pins_at_wilting():
    config = ModelConfig("M1", "NP")
    params = make_params(k_sat=0.9, b_l=0.2)
    state = ModelState(theta=52.0)
    new, rec = step(state, 0.0, 50.0, config, params, GEOM)
    # Transpiration demand far exceeds the 2 mm above wilting.
    assert rec.et_loss == pytest.approx(2.0)
    assert rec.baseflow == 0.0
    assert new.theta == GEOM.theta_min


def test_step_np_infiltration_excess_same_day():
    config = ModelConfig("M4", "NP")
    params = make_params(k_sat=0.3, a_u=2.0, b_u=0.0, porosity=1.0)
    state = ModelState(theta=275.0)
    new, rec = step(state, 10.0, 0.0, config, params, GEOM)
    g_u = sigmoid(0.0 - 2.0 * 0.5)
    assert rec.gate_u == pytest.approx(g_u, abs=1e-15)
    assert rec.infiltration == pytest.approx(10.0 * g_u)
    assert rec.infil_excess == pytest.approx(10.0 * (1.0 - g_u))
    assert rec.runoff == pytest.approx(rec.baseflow + rec.infil_excess)


def test_step_ponding_holds_rejected_water():
    config = ModelConfig("M4", "PND")
    params = make_params(k_sat=0.3, a_u=2.0, b_u=0.0, s_max_pnd=10.0)
    state = ModelState(theta=275.0, s_pnd=2.0)
    new, rec = step(state, 10.0, 0.0, config, params, GEOM)
    g_u = sigmoid(-1.0)
    infiltrated = 12.0 * g_u
    assert rec.infiltration == pytest.approx(infiltrated)
    assert rec.infil_excess == 0.0
    assert new.s_pnd == pytest.approx(12.0 - infiltrated)
    assert rec.sat_excess == 0.0


def test_step_pond_overflow_spills_to_runoff():
    config = ModelConfig("M4", "PND")
    params = make_params(k_sat=0.3, a_u=8.0, b_u=-4.0, s_max_pnd=5.0)
    state = ModelState(theta=275.0, s_pnd=5.0)
    new, rec = step(state, 40.0, 0.0, config, params, GEOM)
    leftover = 45.0 - rec.infiltration
    assert leftover > 5.0
    assert new.s_pnd == 5.0
    assert rec.sat_excess == pytest.approx(leftover - 5.0)


def test_step_pond_capacity_pin_when_store_full():
    config = ModelConfig("M1", "PND")
    params = make_params(k_sat=0.05, b_l=1.0, s_max_pnd=4.0)
    state = ModelState(theta=499.0, s_pnd=0.0)
    new, rec = step(state, 50.0, 0.0, config, params, GEOM)
    assert rec.infiltration == pytest.approx(1.0)
    assert new.s_pnd == 4.0
    assert rec.sat_excess == pytest.approx(45.0)


def test_step_drainage_leaves_the_stream():
    config = ModelConfig("M1", "NP_DR")
    params = make_params(k_sat=0.1, b_l=1.0, a_v=5.0, b_v=2.0)
    state = ModelState(theta=320.0)  # s = 0.6, theta_a = 270
    new, rec = step(state, 0.0, 0.0, config, params, GEOM)
    assert rec.drainage == pytest.approx(drainage_gate(0.6, 5.0, 2.0) * 270.0)
    assert rec.runoff == rec.baseflow  # drainage is not streamflow


def test_step_rejects_invalid_inputs():
    config = ModelConfig("M1", "NP")
    params = make_params()
    with pytest.raises(InvalidInputError):
        step(ModelState(theta=275.0), -1.0, 0.0, config, params, GEOM)
    with pytest.raises(InvalidInputError):
        step(ModelState(theta=275.0), 0.0, math.inf, config, params, GEOM)
    with pytest.raises(InvariantViolationError):
        step(ModelState(theta=10.0), 0.0, 0.0, config, params, GEOM)
    with pytest.raises(InvariantViolationError):
        step(ModelState(theta=275.0, s_pnd=1.0), 0.0, 0.0, config, params, GEOM)
    with pytest.raises(InvalidInputError):
        step(ModelState(theta=275.0), 0.0, 0.0,
             ModelConfig("M1", "NP", layer_depths=(0.5, 0.5)), params, GEOM)


def test_step_pond_state_validated_for_ponding_configs():
    config = ModelConfig("M1", "PND")
    params = make_params(s_max_pnd=3.0)
    with pytest.raises(InvariantViolationError):
        step(ModelState(theta=275.0, s_pnd=3.5), 0.0, 0.0, config, params, GEOM)


# --------------------------------------------------------------------------
# Simulation-level properties
# --------------------------------------------------------------------------

def _random_case(data):
    config = data.draw(st.sampled_from(all_configs()))
    seed = data.draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    raw = engine.random_raw(config, rng)
    h_soil = data.draw(st.floats(50.0, 2000.0))
    params = engine.to_physical(raw, config, h_soil)
    geom = derive_geometry(h_soil, float(params.porosity))
    n = data.draw(st.integers(5, 60))
    p = rng.exponential(4.0, n) * rng.integers(0, 2, n)
    pet = rng.uniform(0.0, 6.0, n)
    forcing = ForcingSeries.from_arrays(dt.date(2000, 1, 1), p, pet)
    return config, params, geom, forcing


@settings(max_examples=120, deadline=None)
@given(st.data())
def test_mass_closure_and_bounds_property(data):
    config, params, geom, forcing = _random_case(data)
    result = simulate(forcing, config, params, geom)
    tol = 1e-9 * max(1.0, geom.theta_max)
    residuals = mass_balance_residuals(result, forcing, geom)
    assert np.max(np.abs(residuals)) <= tol
    for rec, state in zip(result.records, result.states[1:]):
        assert geom.theta_min <= state.theta <= geom.theta_max
        assert 0.0 <= state.s_pnd <= params.s_max_pnd + 1e-12
        for gate in (rec.gate_u, rec.gate_o, rec.gate_v):
            assert 0.0 <= gate <= 1.0
        for flux in (rec.infiltration, rec.et_loss, rec.baseflow,
                     rec.sat_excess, rec.infil_excess, rec.drainage):
            assert flux >= 0.0
    assert np.all(result.q_sim >= 0.0)


def test_simulate_traces_have_expected_shapes():
    config = ModelConfig("M2", "NP")
    params = make_params(k_sat=0.4, a_o=2.0, b_o=0.5, t_wt=100.0)
    forcing = ForcingSeries.from_arrays(
        dt.date(2000, 1, 1), [5.0, 0.0, 12.0], [1.0, 2.0, 3.0]
    )
    result = simulate(forcing, config, params, GEOM)
    assert len(result.q_sim) == 3
    assert len(result.records) == 3
    assert len(result.states) == 4
    assert result.states[0] == default_initial_state(GEOM)


def test_simulate_accepts_explicit_initial_state():
    config = ModelConfig("M1", "NP")
    params = make_params(k_sat=0.3)
    forcing = ForcingSeries.from_arrays(dt.date(2000, 1, 1), [0.0], [0.0])
    result = simulate(forcing, config, params, GEOM, init=ModelState(theta=400.0))
    assert result.states[0].theta == 400.0
    assert result.q_sim[0] == pytest.approx(0.3 * 350.0)
