"""Differentiable calibration engine.

Calibration works on unconstrained "raw" parameter vectors; smooth
transforms map each raw coordinate into its physical bound, so the
optimiser never needs projections.  The loss is ``1 - KGE`` of simulated
against observed streamflow over a masked window.

Two implementations of the same recurrence live in this package:

* :mod:`mcrr.model` - the plain-Python reference used for diagnostics,
  file output and the finite-difference oracle;
* this module's scan step on JAX (float64) - used for gradients and for
  batched training.

Both share branch predicates exactly; a consistency test holds their
streamflow together to round-off.  Gradients are additionally checked
against central finite differences of the reference path, excluding
samples whose FD stencil straddles a demand-clamp branch switch (the
loss is piecewise smooth, so a two-sided stencil across a kink does not
estimate the one-sided derivative the backward pass returns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)
jax.config.update("jax_platform_name", "cpu")

import jax.numpy as jnp
from jax import lax

from . import metrics
from .errors import ConfigMismatchError, InvalidInputError, InvariantViolationError
from .model import (
    ModelConfig,
    ModelState,
    PhysicalParams,
    SoilGeometry,
    THRESHOLD_DEPTH_FRACTION,
    WILTING_FRACTION,
    default_initial_state,
    derive_geometry,
    simulate,
)

# Default raw-space sampling box for random initialisation.
RAW_INIT_LOW = -2.0
RAW_INIT_HIGH = 2.0

# Ponding capacity scale [mm]: raw 0 maps to ~6.9 mm of pond storage.
POND_CAPACITY_SCALE = 10.0

# Finite-difference contract settings.
FD_REL_STEP = 1e-5
FD_MARGIN_TOL = 1e-6
FD_REL_TOL = 1e-4
FD_DENOM_FLOOR = 1e-5


def _sigmoid(x, xp):
    return 0.5 * (1.0 + xp.tanh(0.5 * x))


def _softplus(x, xp):
    return xp.logaddexp(0.0, x)


# name -> raw-to-physical map; h_soil enters only for the threshold height.
_TRANSFORMS = {
    "k_sat": lambda x, h, xp: _sigmoid(x, xp),
    "a_o": lambda x, h, xp: _softplus(x, xp),
    "b_o": lambda x, h, xp: x,
    "t_wt": lambda x, h, xp: THRESHOLD_DEPTH_FRACTION * h * _sigmoid(x, xp),
    "b_w": lambda x, h, xp: 1.0 + _softplus(x, xp),
    "porosity": lambda x, h, xp: _sigmoid(x, xp),
    "a_u": lambda x, h, xp: _softplus(x, xp),
    "b_u": lambda x, h, xp: x,
    "a_v": lambda x, h, xp: _softplus(x, xp),
    "b_v": lambda x, h, xp: x,
    "b_l": lambda x, h, xp: _softplus(x, xp),
    "m_l": lambda x, h, xp: x,
    "c_l": lambda x, h, xp: x,
    "s_max_pnd": lambda x, h, xp: POND_CAPACITY_SCALE * _softplus(x, xp),
}


def to_physical(raw, config: ModelConfig, h_soil: float, xp=np) -> PhysicalParams:
    """Map a raw vector onto the configuration's active physical parameters.

    Inactive parameters keep their neutral defaults.  Raises
    ConfigMismatchError when the vector length does not match the
    configuration's active-parameter list.
    """
    names = config.active_parameters()
    if xp is np:
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (len(names),):
            raise ConfigMismatchError(
                f"{config.name} expects {len(names)} raw parameters "
                f"({', '.join(names)}), got shape {raw.shape}"
            )
    values = {}
    for i, name in enumerate(names):
        values[name] = _TRANSFORMS[name](raw[i], h_soil, xp)
    return PhysicalParams(**values)


def random_raw(config: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform raw draw over the initialisation box."""
    return rng.uniform(RAW_INIT_LOW, RAW_INIT_HIGH, size=len(config.active_parameters()))


# --------------------------------------------------------------------------
# JAX twin of the daily step
# --------------------------------------------------------------------------

def _safe_pow(s, b):
    """s**b with the s = 0, b > 0 corner pinned to 0 (no nan gradient)."""
    safe = jnp.where(s > 0.0, s, 1.0)
    return jnp.where(s > 0.0, jnp.exp(b * jnp.log(safe)), 0.0)


def _make_scan_step(config: ModelConfig):
    """Build the jnp step; branch predicates mirror :func:`mcrr.model.step`."""
    ponding = config.ponding_active
    gated_intake = config.infiltration_gated
    gated_baseflow = config.gated_baseflow
    drainage = config.drainage_active

    def scan_step(carry, xs, pp, tmin, tmax, h_soil):
        theta, pond = carry
        u, pet = xs
        span = tmax - tmin
        s = jnp.clip((theta - tmin) / span, 0.0, 1.0)
        theta_a = jnp.maximum(theta - tmin, 0.0)
        room = tmax - theta

        if gated_intake:
            gate_u = _sigmoid(pp.b_u - pp.a_u * s, jnp)
        else:
            gate_u = 1.0

        if ponding:
            surface = pond + u
            intake_demand = surface * gate_u
            capped = intake_demand >= room
            infiltration = jnp.where(capped, room, intake_demand)
            theta1 = jnp.where(capped, tmax, theta + intake_demand)
            leftover = surface - infiltration
            over = leftover > pp.s_max_pnd
            sat_excess = jnp.where(over, leftover - pp.s_max_pnd, 0.0)
            pond1 = jnp.where(over, pp.s_max_pnd, leftover)
            infil_excess = 0.0
        else:
            intake_demand = u * gate_u
            infil_excess = u * (1.0 - gate_u) if gated_intake else 0.0
            capped = intake_demand >= room
            infiltration = jnp.where(capped, room, intake_demand)
            theta1 = jnp.where(capped, tmax, theta + intake_demand)
            sat_excess = jnp.where(capped, intake_demand - room, 0.0)
            pond1 = 0.0

        avail = theta1 - tmin
        demand_l = pet * _safe_pow(s, pp.b_l)
        et_capped = demand_l >= avail
        theta2 = jnp.where(et_capped, tmin, theta1 - demand_l)
        avail = theta2 - tmin

        if gated_baseflow:
            h = h_soil * _safe_pow(s, pp.b_w)
            over_wt = h - pp.t_wt
            active = over_wt > 0.0
            x_h = jnp.where(active, over_wt / (h_soil - pp.t_wt), 0.0)
            drainable = jnp.where(active, over_wt * theta_a / h_soil, 0.0)
            demand_o = pp.k_sat * _sigmoid(pp.a_o * x_h - pp.b_o, jnp) * drainable
        else:
            demand_o = pp.k_sat * theta_a
        o_capped = demand_o >= avail
        baseflow = jnp.where(o_capped, avail, demand_o)
        theta3 = jnp.where(o_capped, tmin, theta2 - demand_o)
        avail = theta3 - tmin

        if drainage:
            demand_v = _sigmoid(pp.a_v * s - pp.b_v, jnp) * theta_a
            v_capped = demand_v >= avail
            theta4 = jnp.where(v_capped, tmin, theta3 - demand_v)
        else:
            theta4 = theta3

        theta_new = jnp.clip(theta4, tmin, tmax)
        q = baseflow + sat_excess + infil_excess
        return (theta_new, pond1), q

    return scan_step


def _make_q_fn(config: ModelConfig):
    """Raw parameters -> simulated streamflow, as a traced function."""
    scan_step = _make_scan_step(config)

    def q_fn(raw, p, pet, h_soil, theta0, s_pnd0, auto_init):
        pp = to_physical(raw, config, h_soil, xp=jnp)
        tmax = h_soil * (pp.porosity if config.porosity_learnable else 1.0)
        tmin = WILTING_FRACTION * tmax
        if auto_init:
            theta_init = tmin + 0.5 * (tmax - tmin)
            pond_init = 0.0
        else:
            theta_init = jnp.clip(theta0, tmin, tmax)
            pond_init = jnp.clip(s_pnd0, 0.0, pp.s_max_pnd) if config.ponding_active else 0.0
        step = partial(scan_step, pp=pp, tmin=tmin, tmax=tmax, h_soil=h_soil)
        _, q = lax.scan(step, (theta_init, pond_init), (p, pet))
        return q

    return q_fn


def _weighted_kge_loss(q_sim, obs, w):
    """1 - KGE with day weights; guards keep gradients finite at corners."""
    n = jnp.sum(w)
    mu_s = jnp.sum(w * q_sim) / n
    mu_o = jnp.sum(w * obs) / n
    var_s = jnp.sum(w * (q_sim - mu_s) ** 2) / n
    var_o = jnp.sum(w * (obs - mu_o) ** 2) / n
    sd_s = jnp.sqrt(jnp.where(var_s > 0.0, var_s, 1.0))
    sd_s = jnp.where(var_s > 0.0, sd_s, 0.0)
    sd_o = jnp.sqrt(var_o)
    cov = jnp.sum(w * (q_sim - mu_s) * (obs - mu_o)) / n
    r = jnp.where(sd_s > 0.0, cov / jnp.where(sd_s > 0.0, sd_s * sd_o, 1.0), 0.0)
    alpha = sd_s / sd_o
    beta = mu_s / mu_o
    dist_sq = (1.0 - alpha) ** 2 + (1.0 - beta) ** 2 + (1.0 - r) ** 2
    dist = jnp.sqrt(jnp.where(dist_sq > 0.0, dist_sq, 1.0))
    return jnp.where(dist_sq > 0.0, dist, 0.0)


_FN_CACHE: dict = {}


def _loss_fns(config: ModelConfig, auto_init: bool):
    """Jitted (loss, value_and_grad, batched value_and_grad, q) for a config."""
    key = (config.structure, config.scenario, auto_init)
    if key not in _FN_CACHE:
        traced_q = _make_q_fn(config)

        def q_fn(raw, p, pet, h_soil, theta0, s_pnd0):
            return traced_q(raw, p, pet, h_soil, theta0, s_pnd0, auto_init)

        def loss_fn(raw, p, pet, obs, w, h_soil, theta0, s_pnd0):
            q = q_fn(raw, p, pet, h_soil, theta0, s_pnd0)
            return _weighted_kge_loss(q, obs, w)

        _FN_CACHE[key] = (
            jax.jit(loss_fn),
            jax.jit(jax.value_and_grad(loss_fn)),
            jax.jit(jax.vmap(jax.value_and_grad(loss_fn),
                             in_axes=(0,) + (None,) * 7)),
            jax.jit(q_fn),
        )
    return _FN_CACHE[key]


def _window_arrays(forcing, obs_mask):
    p = np.asarray(forcing.p, dtype=float)
    pet = np.asarray(forcing.pet, dtype=float)
    obs = np.asarray(forcing.q_obs, dtype=float)
    mask = np.asarray(obs_mask, dtype=bool)
    if not (p.shape == pet.shape == obs.shape == mask.shape):
        raise InvalidInputError("forcing arrays and obs_mask must be aligned")
    w = (mask & np.isfinite(obs)).astype(float)
    if w.sum() < 2:
        raise InvalidInputError("need at least 2 evaluated days in the window")
    obs_clean = np.where(w > 0.0, obs, 0.0)
    return p, pet, obs_clean, w


def _init_args(init: ModelState | None):
    if init is None:
        return 0.0, 0.0, True
    return float(init.theta), float(init.s_pnd), False


@dataclass
class LossEvaluation:
    """Loss plus the full KGE decomposition and the simulated flow."""

    loss: float
    report: metrics.KgeReport
    q_sim: np.ndarray


def evaluate_loss(
    raw,
    forcing,
    obs_mask,
    config: ModelConfig,
    geom: SoilGeometry,
    init: ModelState | None = None,
) -> LossEvaluation:
    """Reference-path loss: simulate with :mod:`mcrr.model` and score with KGE.

    The geometry's soil depth is authoritative; when porosity is
    learnable the storage bounds are rebuilt from the transformed
    parameter vector.
    """
    params = to_physical(raw, config, geom.h_soil)
    run_geom = derive_geometry(geom.h_soil, float(params.porosity))
    state = default_initial_state(run_geom) if init is None else init
    result = simulate(forcing, config, params, run_geom, init=state)
    report = metrics.kge(result.q_sim, forcing.q_obs, obs_mask)
    return LossEvaluation(loss=1.0 - report.kge, report=report, q_sim=result.q_sim)


def gradient(
    raw,
    forcing,
    obs_mask,
    config: ModelConfig,
    geom: SoilGeometry,
    init: ModelState | None = None,
) -> np.ndarray:
    """Gradient of the loss with respect to the raw parameter vector."""
    value, grad = loss_and_gradient(raw, forcing, obs_mask, config, geom, init)
    return grad


def loss_and_gradient(
    raw,
    forcing,
    obs_mask,
    config: ModelConfig,
    geom: SoilGeometry,
    init: ModelState | None = None,
) -> tuple[float, np.ndarray]:
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (len(config.active_parameters()),):
        raise ConfigMismatchError(
            f"{config.name} expects {len(config.active_parameters())} raw parameters"
        )
    p, pet, obs, w = _window_arrays(forcing, obs_mask)
    theta0, s0, auto = _init_args(init)
    _, vag, _, _ = _loss_fns(config, auto)
    value, grad = vag(raw, p, pet, obs, w, geom.h_soil, theta0, s0)
    return float(value), np.asarray(grad)


def loss_value_fast(
    raw, forcing, obs_mask, config: ModelConfig, geom: SoilGeometry,
    init: ModelState | None = None,
) -> float:
    """Loss from the JAX path (used to cross-check the reference path)."""
    p, pet, obs, w = _window_arrays(forcing, obs_mask)
    theta0, s0, auto = _init_args(init)
    loss_fn, _, _, _ = _loss_fns(config, auto)
    return float(loss_fn(np.asarray(raw, dtype=float), p, pet, obs, w,
                         geom.h_soil, theta0, s0))


def simulate_q_fast(
    raw, forcing, config: ModelConfig, geom: SoilGeometry,
    init: ModelState | None = None,
) -> np.ndarray:
    """Streamflow from the JAX path (used to cross-check the reference path)."""
    p = np.asarray(forcing.p, dtype=float)
    pet = np.asarray(forcing.pet, dtype=float)
    theta0, s0, auto = _init_args(init)
    _, _, _, q_fn = _loss_fns(config, auto)
    return np.asarray(q_fn(np.asarray(raw, dtype=float), p, pet, geom.h_soil,
                           theta0, s0))


def batch_loss_and_grad(config: ModelConfig, forcing, obs_mask, geom: SoilGeometry,
                        init: ModelState | None = None):
    """Callable mapping a (B, P) raw matrix to per-lane (loss, gradient).

    The returned closure re-uses one jitted computation for the whole
    batch; training calls it once per epoch.
    """
    p, pet, obs, w = _window_arrays(forcing, obs_mask)
    theta0, s0, auto = _init_args(init)
    _, _, batched, _ = _loss_fns(config, auto)
    n_active = len(config.active_parameters())

    def fn(raw_batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raw_batch = np.asarray(raw_batch, dtype=float)
        if raw_batch.ndim != 2 or raw_batch.shape[1] != n_active:
            raise ConfigMismatchError(
                f"{config.name} expects raw batches of shape (B, {n_active})"
            )
        value, grad = batched(raw_batch, p, pet, obs, w, geom.h_soil, theta0, s0)
        return np.asarray(value), np.asarray(grad)

    return fn


# --------------------------------------------------------------------------
# Finite-difference oracle and gradient contract
# --------------------------------------------------------------------------

def _loss_and_signature(raw, forcing, obs_mask, config, geom, init):
    params = to_physical(raw, config, geom.h_soil)
    run_geom = derive_geometry(geom.h_soil, float(params.porosity))
    state = default_initial_state(run_geom) if init is None else init
    result = simulate(forcing, config, params, run_geom, init=state)
    report = metrics.kge(result.q_sim, forcing.q_obs, obs_mask)
    return 1.0 - report.kge, result.clamp_signature(), result.min_clamp_margin()


def fd_gradient(
    raw,
    forcing,
    obs_mask,
    config: ModelConfig,
    geom: SoilGeometry,
    init: ModelState | None = None,
    rel_step: float = FD_REL_STEP,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient of the reference-path loss.

    Returns ``(grad, flipped)`` where ``flipped[i]`` marks components
    whose two evaluation points ran different clamp-branch sequences;
    those FD values do not estimate the derivative at the centre point.
    """
    raw = np.asarray(raw, dtype=float)
    grad = np.empty(raw.shape)
    flipped = np.zeros(raw.shape, dtype=bool)
    for i in range(len(raw)):
        h = rel_step * max(1.0, abs(raw[i]))
        up = raw.copy()
        up[i] += h
        down = raw.copy()
        down[i] -= h
        loss_up, sig_up, _ = _loss_and_signature(up, forcing, obs_mask, config, geom, init)
        loss_dn, sig_dn, _ = _loss_and_signature(down, forcing, obs_mask, config, geom, init)
        grad[i] = (loss_up - loss_dn) / (2.0 * h)
        flipped[i] = sig_up != sig_dn
    return grad, flipped


@dataclass
class GradientCheckReport:
    """Outcome of the finite-difference contract for one configuration."""

    config_name: str
    n_samples: int            # samples actually compared
    n_filtered_margin: int    # samples dropped for sitting on a clamp boundary
    n_flipped_components: int # per-component FD values dropped for branch flips
    max_rel_err: float
    mean_rel_err: float
    passed: bool
    worst_sample: np.ndarray | None = None

    def row(self) -> dict:
        return {
            "config": self.config_name,
            "n_samples": self.n_samples,
            "n_filtered_margin": self.n_filtered_margin,
            "n_flipped_components": self.n_flipped_components,
            "max_rel_err": f"{self.max_rel_err:.3e}",
            "mean_rel_err": f"{self.mean_rel_err:.3e}",
            "passed": str(self.passed),
        }


def gradient_check(
    config: ModelConfig,
    geom: SoilGeometry,
    forcing,
    obs_mask,
    n_samples: int = 100,
    seed: int = 0,
    rel_tol: float = FD_REL_TOL,
    margin_tol: float = FD_MARGIN_TOL,
    gradient_fn=None,
    init: ModelState | None = None,
    max_attempts: int | None = None,
) -> GradientCheckReport:
    """Compare backward-pass gradients against the FD oracle.

    Draws raw vectors uniformly from the initialisation box, drops draws
    whose centre run passes within ``margin_tol`` of a clamp boundary,
    drops per-component FD values whose stencil flips a branch, and
    requires every surviving component to match within ``rel_tol``
    (relative to the larger magnitude, floored to absorb FD round-off).
    """
    rng = np.random.default_rng(seed)
    grad_fn = gradient_fn or gradient
    accepted = 0
    filtered = 0
    flipped_total = 0
    errs: list[float] = []
    max_err = 0.0
    worst = None
    attempts = 0
    if max_attempts is None:
        max_attempts = max(20 * n_samples, 200)
    while accepted < n_samples:
        attempts += 1
        if attempts > max_attempts:
            raise InvariantViolationError(
                f"{config.name}: could not gather {n_samples} clamp-free samples "
                f"in {max_attempts} draws"
            )
        raw = random_raw(config, rng)
        _, _, margin = _loss_and_signature(raw, forcing, obs_mask, config, geom, init)
        if margin < margin_tol:
            filtered += 1
            continue
        g_ad = np.asarray(grad_fn(raw, forcing, obs_mask, config, geom, init))
        g_fd, flips = fd_gradient(raw, forcing, obs_mask, config, geom, init)
        flipped_total += int(flips.sum())
        for i in range(len(raw)):
            if flips[i]:
                continue
            denom = max(abs(g_ad[i]), abs(g_fd[i]), FD_DENOM_FLOOR)
            err = abs(g_ad[i] - g_fd[i]) / denom
            errs.append(err)
            if err > max_err:
                max_err = err
                worst = raw.copy()
        accepted += 1
    return GradientCheckReport(
        config_name=config.name,
        n_samples=accepted,
        n_filtered_margin=filtered,
        n_flipped_components=flipped_total,
        max_rel_err=max_err,
        mean_rel_err=float(np.mean(errs)) if errs else 0.0,
        passed=bool(max_err <= rel_tol),
        worst_sample=worst,
    )
