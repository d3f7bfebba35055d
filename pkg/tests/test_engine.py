"""Differentiable-engine tests: transforms, twin-path parity, FD contract."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcrr import engine, model, synthetic
from mcrr.engine import (
    RAW_INIT_HIGH,
    RAW_INIT_LOW,
    batch_loss_and_grad,
    evaluate_loss,
    fd_gradient,
    gradient,
    gradient_check,
    loss_and_gradient,
    loss_value_fast,
    random_raw,
    simulate_q_fast,
    to_physical,
)
from mcrr.errors import ConfigMismatchError
from mcrr.model import ModelConfig, ModelState, all_configs, derive_geometry

H_SOIL = 500.0
GEOM = derive_geometry(H_SOIL)


def short_case(basin_cache, model_name, scenario, n_days=400, mask_from=120):
    """A small calibration window cut from a cached synthetic basin."""
    forcing, geom, truth = basin_cache(model_name, scenario)
    window = forcing.window(0, n_days)
    mask = np.zeros(n_days, dtype=bool)
    mask[mask_from:] = True
    return window, mask, geom, truth


# --------------------------------------------------------------------------
# Raw-to-physical transforms
# --------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=14, max_size=14))
def test_transforms_always_land_in_bounds(raw):
    config = ModelConfig("M5", "PND_DR")
    params = to_physical(np.array(raw), config, H_SOIL)
    params.validate(config, GEOM)  # raises on any out-of-range value
    assert 0.0 < params.k_sat < 1.0
    assert 0.0 < params.porosity < 1.0
    assert 0.0 <= params.t_wt < 0.95 * H_SOIL
    assert params.b_w >= 1.0
    assert params.a_o >= 0.0 and params.a_u >= 0.0 and params.a_v >= 0.0
    assert params.b_l >= 0.0 and params.s_max_pnd >= 0.0


def test_transforms_survive_extreme_raw_values():
    config = ModelConfig("M5", "PND_DR")
    for big in (-500.0, 500.0):
        params = to_physical(np.full(14, big), config, H_SOIL)
        for value in params.as_dict().values():
            assert math.isfinite(value)


def test_transform_spot_values():
    config = ModelConfig("M5", "PND_DR")
    params = to_physical(np.zeros(14), config, H_SOIL)
    assert params.k_sat == pytest.approx(0.5)
    assert params.t_wt == pytest.approx(0.475 * H_SOIL)
    assert params.b_w == pytest.approx(1.0 + math.log(2.0))
    assert params.s_max_pnd == pytest.approx(10.0 * math.log(2.0))
    assert params.b_o == 0.0 and params.m_l == 0.0 and params.c_l == 0.0


def test_to_physical_rejects_wrong_length():
    with pytest.raises(ConfigMismatchError):
        to_physical(np.zeros(5), ModelConfig("M1", "NP"), H_SOIL)


def test_inactive_parameters_keep_defaults():
    params = to_physical(np.array([0.2, -0.3, 0.1, 0.4]), ModelConfig("M1", "NP"), H_SOIL)
    defaults = model.PhysicalParams()
    assert params.a_o == defaults.a_o
    assert params.t_wt == defaults.t_wt
    assert params.s_max_pnd == defaults.s_max_pnd


def test_random_raw_respects_init_box():
    rng = np.random.default_rng(7)
    for config in all_configs():
        raw = random_raw(config, rng)
        assert raw.shape == (len(config.active_parameters()),)
        assert np.all(raw >= RAW_INIT_LOW) and np.all(raw <= RAW_INIT_HIGH)


# --------------------------------------------------------------------------
# Reference path vs compiled path
# --------------------------------------------------------------------------

PARITY_CONFIGS = [
    ("M1", "NP"), ("M2", "PND"), ("M3", "NP_DR"),
    ("M4", "PND_DR"), ("M5", "NP"), ("M5", "PND_DR"),
]


@pytest.mark.parametrize("model_name,scenario", PARITY_CONFIGS)
def test_compiled_path_matches_reference(basin_cache, model_name, scenario):
    forcing, mask, geom, _ = short_case(basin_cache, model_name, scenario)
    config = ModelConfig(model_name, scenario)
    rng = np.random.default_rng(11)
    for _ in range(5):
        raw = random_raw(config, rng)
        ref = evaluate_loss(raw, forcing, mask, config, geom)
        fast = loss_value_fast(raw, forcing, mask, config, geom)
        assert fast == pytest.approx(ref.loss, abs=1e-9)
        q_fast = simulate_q_fast(raw, forcing, config, geom)
        np.testing.assert_allclose(q_fast, ref.q_sim, atol=1e-9, rtol=0)


def test_explicit_initial_state_parity(basin_cache):
    forcing, mask, geom, _ = short_case(basin_cache, "M3", "PND")
    config = ModelConfig("M3", "PND")
    raw = random_raw(config, np.random.default_rng(3))
    params = to_physical(raw, config, geom.h_soil)
    run_geom = derive_geometry(geom.h_soil, float(params.porosity))
    init = ModelState(theta=0.9 * run_geom.theta_max, s_pnd=2.5)
    ref = evaluate_loss(raw, forcing, mask, config, geom, init=init)
    fast = loss_value_fast(raw, forcing, mask, config, geom, init=init)
    assert fast == pytest.approx(ref.loss, abs=1e-9)
    # The explicit state must actually reach the dynamics: before the
    # burn-in washes it out, flows differ from the auto-initialised run.
    auto = evaluate_loss(raw, forcing, mask, config, geom)
    assert np.abs(ref.q_sim[:30] - auto.q_sim[:30]).max() > 1e-3


def test_gradient_matches_value_and_grad(basin_cache):
    forcing, mask, geom, _ = short_case(basin_cache, "M2", "NP")
    config = ModelConfig("M2", "NP")
    raw = random_raw(config, np.random.default_rng(5))
    value, grad = loss_and_gradient(raw, forcing, mask, config, geom)
    np.testing.assert_array_equal(gradient(raw, forcing, mask, config, geom), grad)
    assert value == pytest.approx(evaluate_loss(raw, forcing, mask, config, geom).loss,
                                  abs=1e-9)
    assert grad.shape == raw.shape and np.all(np.isfinite(grad))


def test_loss_and_gradient_rejects_wrong_length(basin_cache):
    forcing, mask, geom, _ = short_case(basin_cache, "M2", "NP")
    with pytest.raises(ConfigMismatchError):
        loss_and_gradient(np.zeros(3), forcing, mask, ModelConfig("M2", "NP"), geom)


def test_batched_loss_and_grad_matches_per_sample(basin_cache):
    forcing, mask, geom, _ = short_case(basin_cache, "M2", "PND")
    config = ModelConfig("M2", "PND")
    fn = batch_loss_and_grad(config, forcing, mask, geom)
    rng = np.random.default_rng(9)
    batch = np.stack([random_raw(config, rng) for _ in range(4)])
    losses, grads = fn(batch)
    assert losses.shape == (4,) and grads.shape == batch.shape
    for i in range(4):
        value, grad = loss_and_gradient(batch[i], forcing, mask, config, geom)
        assert losses[i] == pytest.approx(value, abs=1e-12)
        np.testing.assert_allclose(grads[i], grad, atol=1e-12, rtol=0)


# --------------------------------------------------------------------------
# Finite-difference contract
# --------------------------------------------------------------------------

def test_fd_gradient_shape_and_flags(basin_cache):
    forcing, mask, geom, _ = short_case(basin_cache, "M1", "NP")
    config = ModelConfig("M1", "NP")
    raw = random_raw(config, np.random.default_rng(1))
    g_fd, flipped = fd_gradient(raw, forcing, mask, config, geom)
    assert g_fd.shape == raw.shape
    assert flipped.shape == raw.shape and flipped.dtype == bool


@pytest.mark.parametrize("model_name,scenario", [("M1", "NP"), ("M5", "PND_DR")])
def test_gradient_check_passes_small_run(basin_cache, model_name, scenario):
    forcing, mask, geom, _ = short_case(basin_cache, model_name, scenario)
    config = ModelConfig(model_name, scenario)
    report = gradient_check(config, geom, forcing, mask, n_samples=8, seed=0)
    assert report.passed
    assert report.n_samples == 8
    assert report.max_rel_err <= 1e-4


def test_gradient_check_catches_corrupted_gradients(basin_cache):
    forcing, mask, geom, _ = short_case(basin_cache, "M2", "NP")
    config = ModelConfig("M2", "NP")

    def corrupted(raw, *args):
        return gradient(raw, *args) * 1.01

    report = gradient_check(config, geom, forcing, mask, n_samples=4, seed=0,
                            gradient_fn=corrupted)
    assert not report.passed
    assert report.max_rel_err > 1e-4
    assert report.worst_sample is not None
    assert set(report.row()) == {
        "config", "n_samples", "n_filtered_margin", "n_flipped_components",
        "max_rel_err", "mean_rel_err", "passed",
    }
