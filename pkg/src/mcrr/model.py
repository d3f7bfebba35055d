"""Mass-conserving soil-bucket runoff models.

A single soil store of depth ``h_soil`` [mm] holds a water volume
``theta`` [mm] bounded by a wilting minimum ``theta_min`` and a saturated
maximum ``theta_max = h_soil * porosity``.  Each daily step partitions
precipitation between infiltration and surface runoff, then depletes the
store through (in order) transpiration, baseflow and, optionally, deep
drainage.  Every flux is demand-limited by the water actually present, so
the water balance closes to round-off at every step.

Five process structures of increasing flexibility are supported:

* M1 - linear-reservoir baseflow (outflow proportional to stored water),
* M2 - baseflow gated by a water-table threshold inside the store,
* M3 - as M2 with learnable porosity,
* M4 - as M3 with a saturation-controlled infiltration gate,
* M5 - as M4 with a learnable water-table-shape exponent.

Each structure runs under four boundary scenarios:

* NP      - rejected surface water leaves the basin the same day,
* PND     - rejected surface water is held in a ponding store and retried,
* NP_DR   - NP plus a gated deep-drainage loss,
* PND_DR  - PND plus the drainage loss.

All functions here are plain Python / numpy reference implementations
meant to be read, instrumented and trusted; the differentiable twin used
for calibration lives in :mod:`mcrr.engine` and is tested against this
module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, InvariantViolationError

# Fraction of saturated storage below which water is unavailable.
WILTING_FRACTION = 0.1
# The water-table threshold is kept strictly below the soil depth.
THRESHOLD_DEPTH_FRACTION = 0.95
# States are accepted / re-pinned within this relative tolerance of the bounds.
STATE_TOLERANCE = 1e-9

# Bit flags recording which demand clamps fired inside a step.  The FD
# harness uses them to detect samples whose finite-difference stencil
# straddles a non-smooth branch switch.
CLAMP_INTAKE = 1 << 0
CLAMP_POND_OVERFLOW = 1 << 1
CLAMP_WATER_TABLE = 1 << 2
CLAMP_ET = 1 << 3
CLAMP_BASEFLOW = 1 << 4
CLAMP_DRAINAGE = 1 << 5


class Structure(str, Enum):
    """Soil-process structure, ordered by increasing flexibility."""

    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"


class Scenario(str, Enum):
    """Surface boundary scenario."""

    NP = "NP"
    PND = "PND"
    NP_DR = "NP_DR"
    PND_DR = "PND_DR"


# Canonical ordering of every optimisable parameter.  A configuration's
# active vector is this sequence filtered to the parameters it uses, so
# raw vectors are position-stable across configurations.
PARAM_ORDER = (
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
)


def sigmoid(x: float) -> float:
    """Numerically stable logistic function 1 / (1 + exp(-x))."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class SoilGeometry:
    """Storage bounds derived from soil depth and porosity.

    Attributes
    ----------
    h_soil : float
        Soil-column depth [mm].
    porosity : float
        Saturated water content per unit depth, in (0, 1].
    theta_max : float
        Saturated storage, ``h_soil * porosity`` [mm].
    theta_min : float
        Wilting storage, ``WILTING_FRACTION * theta_max`` [mm].
    """

    h_soil: float
    porosity: float
    theta_max: float
    theta_min: float

    @property
    def span(self) -> float:
        """Plant-available capacity ``theta_max - theta_min`` [mm]."""
        return self.theta_max - self.theta_min


def derive_geometry(h_soil: float, porosity: float = 1.0) -> SoilGeometry:
    """Build the storage bounds for a soil column.

    Raises InvalidInputError if ``h_soil`` is not positive or ``porosity``
    is outside (0, 1].
    """
    if not (h_soil > 0.0 and math.isfinite(h_soil)):
        raise InvalidInputError(f"h_soil must be positive and finite, got {h_soil!r}")
    if not (0.0 < porosity <= 1.0):
        raise InvalidInputError(f"porosity must lie in (0, 1], got {porosity!r}")
    theta_max = h_soil * porosity
    theta_min = WILTING_FRACTION * theta_max
    return SoilGeometry(h_soil, porosity, theta_max, theta_min)


@dataclass(frozen=True)
class ModelConfig:
    """One of the twenty model configurations (structure x scenario)."""

    structure: Structure
    scenario: Scenario
    layer_depths: tuple[float, ...] = (1.0,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "structure", Structure(self.structure))
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if len(self.layer_depths) < 1 or any(d <= 0 for d in self.layer_depths):
            raise InvalidInputError("layer_depths must be positive and non-empty")

    @property
    def name(self) -> str:
        return f"{self.structure.value}_{self.scenario.value}"

    @property
    def n_layers(self) -> int:
        return len(self.layer_depths)

    @property
    def gated_baseflow(self) -> bool:
        """True when baseflow passes a water-table threshold gate (M2+)."""
        return self.structure is not Structure.M1

    @property
    def porosity_learnable(self) -> bool:
        return self.structure in (Structure.M3, Structure.M4, Structure.M5)

    @property
    def infiltration_gated(self) -> bool:
        return self.structure in (Structure.M4, Structure.M5)

    @property
    def bw_learnable(self) -> bool:
        return self.structure is Structure.M5

    @property
    def ponding_active(self) -> bool:
        return self.scenario in (Scenario.PND, Scenario.PND_DR)

    @property
    def drainage_active(self) -> bool:
        return self.scenario in (Scenario.NP_DR, Scenario.PND_DR)

    def active_parameters(self) -> tuple[str, ...]:
        """Names of the optimisable parameters, in canonical order."""
        active = {"k_sat", "b_l", "m_l", "c_l"}
        if self.gated_baseflow:
            active |= {"a_o", "b_o", "t_wt"}
        if self.porosity_learnable:
            active.add("porosity")
        if self.infiltration_gated:
            active |= {"a_u", "b_u"}
        if self.bw_learnable:
            active.add("b_w")
        if self.ponding_active:
            active.add("s_max_pnd")
        if self.drainage_active:
            active |= {"a_v", "b_v"}
        return tuple(name for name in PARAM_ORDER if name in active)


def all_configs() -> tuple[ModelConfig, ...]:
    """The full experiment grid of twenty configurations."""
    return tuple(
        ModelConfig(structure, scenario)
        for structure in Structure
        for scenario in Scenario
    )


@dataclass
class PhysicalParams:
    """Physical (already transformed) model parameters.

    Inactive parameters keep their neutral defaults, under which the
    corresponding process reduces to the simpler structure's behaviour.
    """

    k_sat: float = 0.5          # saturated-conductivity fraction per day, in (0, 1)
    a_o: float = 1.0            # baseflow gate steepness, > 0
    b_o: float = 0.0            # baseflow gate offset
    t_wt: float = 0.0           # water-table activation height [mm], in [0, h_soil)
    b_w: float = 1.0            # water-table shape exponent, >= 1
    porosity: float = 1.0       # saturated content fraction, in (0, 1]
    a_u: float = 1.0            # infiltration gate steepness, > 0
    b_u: float = 0.0            # infiltration gate offset
    a_v: float = 1.0            # drainage gate steepness, > 0
    b_v: float = 0.0            # drainage gate offset
    b_l: float = 1.0            # transpiration saturation exponent, > 0
    m_l: float = 0.0            # root-profile slope
    c_l: float = 0.0            # root-profile offset
    s_max_pnd: float = 0.0      # ponding-store capacity [mm], >= 0

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def validate(self, config: ModelConfig, geom: SoilGeometry) -> None:
        """Raise InvalidParameterError on any bound violation for ``config``."""
        def bad(msg: str) -> None:
            raise InvalidParameterError(f"{config.name}: {msg}")

        if not (0.0 < self.k_sat < 1.0):
            bad(f"k_sat must lie in (0, 1), got {self.k_sat}")
        if not (self.b_l > 0.0):
            bad(f"b_l must be positive, got {self.b_l}")
        for name in ("a_o", "a_u", "a_v"):
            if getattr(self, name) <= 0.0:
                bad(f"{name} must be positive, got {getattr(self, name)}")
        if not (0.0 <= self.t_wt < geom.h_soil):
            bad(f"t_wt must lie in [0, h_soil), got {self.t_wt}")
        if self.b_w < 1.0:
            bad(f"b_w must be >= 1, got {self.b_w}")
        if not (0.0 < self.porosity <= 1.0):
            bad(f"porosity must lie in (0, 1], got {self.porosity}")
        if self.s_max_pnd < 0.0:
            bad(f"s_max_pnd must be non-negative, got {self.s_max_pnd}")
        if not config.porosity_learnable and self.porosity != 1.0:
            bad("porosity is fixed at 1 for this structure")
        if not config.bw_learnable and self.b_w != 1.0:
            bad("b_w is fixed at 1 for this structure")
        for name, val in self.as_dict().items():
            if not math.isfinite(val):
                bad(f"{name} is not finite")


@dataclass(frozen=True)
class ModelState:
    """Prognostic state carried between daily steps."""

    theta: float          # soil water volume [mm]
    s_pnd: float = 0.0    # ponded surface water [mm]; identically 0 without ponding


@dataclass(slots=True)
class FluxRecord:
    """Per-step diagnostics: fluxes [mm/day], gates and clamp bookkeeping."""

    infiltration: float    # water entering the soil store
    et_loss: float         # transpiration out of the store
    baseflow: float        # gated or linear subsurface discharge
    sat_excess: float      # surface runoff from exceeding storage / pond capacity
    infil_excess: float    # surface runoff rejected by the infiltration gate
    drainage: float        # deep loss (not part of streamflow)
    s: float               # start-of-step relative saturation in [0, 1]
    theta_a: float         # start-of-step available water above wilting [mm]
    wt_height: float       # water-table height [mm] (nan for M1)
    wt_excess: float       # normalised height above the threshold (nan for M1)
    drainable: float       # water above the threshold available to baseflow (nan for M1)
    gate_u: float          # infiltration gate value in [0, 1]
    gate_o: float          # effective baseflow conductivity in [0, 1]
    gate_v: float          # drainage gate value in [0, 1]
    clamp_code: int        # bitmask of CLAMP_* flags that fired
    clamp_margin: float    # smallest normalised distance to any tracked branch switch

    @property
    def runoff(self) -> float:
        """Streamflow contribution of this step [mm/day]."""
        return self.baseflow + self.sat_excess + self.infil_excess


@dataclass
class SimulationResult:
    """Output of a full simulation run."""

    q_sim: np.ndarray               # daily streamflow [mm/day]
    records: list[FluxRecord]       # per-step diagnostics
    states: list[ModelState]        # length T+1; states[0] is the initial state

    def min_clamp_margin(self) -> float:
        return min((r.clamp_margin for r in self.records), default=math.inf)

    def clamp_signature(self) -> bytes:
        """Branch fingerprint of the whole run, for FD stencil checks."""
        return bytes(r.clamp_code for r in self.records)


def default_initial_state(geom: SoilGeometry) -> ModelState:
    """Half-full store with an empty pond; used when no state is given."""
    return ModelState(theta=geom.theta_min + 0.5 * geom.span, s_pnd=0.0)


def state_diagnostics(theta: float, geom: SoilGeometry) -> tuple[float, float]:
    """Relative saturation ``s`` in [0, 1] and available water above wilting [mm]."""
    s = (theta - geom.theta_min) / geom.span
    s = min(max(s, 0.0), 1.0)
    theta_a = max(theta - geom.theta_min, 0.0)
    return s, theta_a


def root_weights(layer_depths: tuple[float, ...], m_l: float, c_l: float) -> list[float]:
    """Normalised root-density weights over soil layers.

    Each layer is scored by a logistic profile of its normalised
    mid-point depth; scores are normalised to sum to one.  For a single
    layer the weight is exactly 1 regardless of the profile parameters.
    """
    if not layer_depths or any(d <= 0 for d in layer_depths):
        raise InvalidInputError("layer_depths must be positive and non-empty")
    total = sum(layer_depths)
    mids = []
    top = 0.0
    for d in layer_depths:
        mids.append((top + 0.5 * d) / total)
        top += d
    scores = [sigmoid(m_l * z - c_l) for z in mids]
    norm = sum(scores)
    return [sc / norm for sc in scores]


def et_demand(s: float, pet: float, b_l: float, root_weight: float = 1.0) -> float:
    """Unclamped transpiration demand [mm/day] for one layer.

    Demand scales the layer's share of potential evapotranspiration by a
    power of relative saturation; at s = 0 the demand is exactly 0.
    """
    if pet < 0.0:
        raise InvalidInputError(f"pet must be non-negative, got {pet!r}")
    return pet * root_weight * s**b_l


def baseflow_linear(theta_a: float, k_sat: float) -> float:
    """Linear-reservoir baseflow demand: a fixed fraction of available water."""
    return k_sat * theta_a


def baseflow_gated(
    s: float, theta_a: float, params: PhysicalParams, geom: SoilGeometry
) -> tuple[float, float, float, float]:
    """Water-table-gated baseflow demand (structures M2+).

    The water table sits at height ``h = h_soil * s**b_w``.  Only water
    above the activation threshold ``t_wt`` participates: the drainable
    volume is the above-threshold share of the available water, released
    through a logistic gate in the normalised excess height.

    Returns ``(demand, wt_height, wt_excess, drainable)``.
    """
    h_soil = geom.h_soil
    h = h_soil * s**params.b_w
    over = h - params.t_wt
    if over > 0.0:
        x_h = over / (h_soil - params.t_wt)
        drainable = over * theta_a / h_soil
    else:
        x_h = 0.0
        drainable = 0.0
    demand = params.k_sat * sigmoid(params.a_o * x_h - params.b_o) * drainable
    return demand, h, x_h, drainable


def infiltration_gate(s: float, a_u: float, b_u: float) -> tuple[float, float]:
    """Saturation-controlled intake partition (structures M4+).

    The gate closes as the soil saturates: ``g_u = sigmoid(b_u - a_u * s)``.
    Returns ``(g_u, g_ie)`` with ``g_u + g_ie == 1`` exactly.
    """
    g_u = sigmoid(b_u - a_u * s)
    return g_u, 1.0 - g_u


def drainage_gate(s: float, a_v: float, b_v: float) -> float:
    """Deep-drainage gate value in (0, 1), opening with saturation."""
    return sigmoid(a_v * s - b_v)


def _margin(a: float, b: float) -> float:
    """Normalised distance between a demand and its cap (branch-switch proximity)."""
    return abs(a - b) / max(1.0, abs(a), abs(b))


def step(
    state: ModelState,
    precip: float,
    pet: float,
    config: ModelConfig,
    params: PhysicalParams,
    geom: SoilGeometry,
) -> tuple[ModelState, FluxRecord]:
    """Advance the store by one day.

    Order of operations:

    1. diagnostics ``(s, theta_a)`` from the start-of-step storage;
    2. partition surface water (new precipitation plus any ponded water)
       into infiltration and rejected water, limited by the remaining
       storage room;
    3. route rejected water to same-day runoff, to the pond, or to pond
       overflow according to the scenario;
    4. deplete the store sequentially by transpiration, baseflow and
       drainage; every demand is computed from start-of-step diagnostics
       but withdrawn only up to the water still present.

    All clamps assign the pinned bound directly so storage never drifts
    past its limits by accumulated round-off.
    """
    if precip < 0.0 or not math.isfinite(precip):
        raise InvalidInputError(f"precip must be non-negative and finite, got {precip!r}")
    if pet < 0.0 or not math.isfinite(pet):
        raise InvalidInputError(f"pet must be non-negative and finite, got {pet!r}")
    if config.n_layers != 1:
        raise InvalidInputError(
            "step simulates a single-layer store; multi-layer runs are not supported"
        )

    tol = STATE_TOLERANCE * max(1.0, geom.theta_max)
    theta0 = state.theta
    if not (geom.theta_min - tol <= theta0 <= geom.theta_max + tol):
        raise InvariantViolationError(
            f"theta={theta0!r} outside [{geom.theta_min}, {geom.theta_max}]"
        )
    if config.ponding_active:
        if not (-tol <= state.s_pnd <= params.s_max_pnd + tol):
            raise InvariantViolationError(
                f"s_pnd={state.s_pnd!r} outside [0, {params.s_max_pnd}]"
            )
        pond0 = min(max(state.s_pnd, 0.0), params.s_max_pnd)
    else:
        if state.s_pnd != 0.0:
            raise InvariantViolationError("s_pnd must be 0 without a ponding store")
        pond0 = 0.0

    # Shave entry round-off so the depletion algebra sees exact bounds.
    theta = min(max(theta0, geom.theta_min), geom.theta_max)
    s, theta_a = state_diagnostics(theta, geom)
    margin = math.inf
    code = 0

    # --- surface partition -------------------------------------------------
    if config.infiltration_gated:
        gate_u, gate_ie = infiltration_gate(s, params.a_u, params.b_u)
    else:
        gate_u, gate_ie = 1.0, 0.0

    room = geom.theta_max - theta
    if config.ponding_active:
        # Ponded water is retried together with today's precipitation; the
        # rejected share stays in the pond, so no same-day gate runoff.
        surface = pond0 + precip
        intake_demand = surface * gate_u
        infil_excess = 0.0
        margin = min(margin, _margin(intake_demand, room))
        if intake_demand >= room:
            code |= CLAMP_INTAKE
            infiltration = room
            theta1 = geom.theta_max
        else:
            infiltration = intake_demand
            theta1 = theta + infiltration
        leftover = surface - infiltration
        margin = min(margin, _margin(leftover, params.s_max_pnd))
        if leftover > params.s_max_pnd:
            code |= CLAMP_POND_OVERFLOW
            sat_excess = leftover - params.s_max_pnd
            pond1 = params.s_max_pnd
        else:
            sat_excess = 0.0
            pond1 = leftover
    else:
        intake_demand = precip * gate_u
        infil_excess = precip * gate_ie
        margin = min(margin, _margin(intake_demand, room))
        if intake_demand >= room:
            code |= CLAMP_INTAKE
            infiltration = room
            theta1 = geom.theta_max
            sat_excess = intake_demand - room
        else:
            infiltration = intake_demand
            theta1 = theta + infiltration
            sat_excess = 0.0
        pond1 = 0.0

    # --- sequential depletion ----------------------------------------------
    avail = theta1 - geom.theta_min

    demand_l = et_demand(s, pet, params.b_l)
    margin = min(margin, _margin(demand_l, avail))
    if demand_l >= avail:
        code |= CLAMP_ET
        et_loss = avail
        theta2 = geom.theta_min
    else:
        et_loss = demand_l
        theta2 = theta1 - demand_l
    avail = theta2 - geom.theta_min

    if config.gated_baseflow:
        demand_o, wt_height, wt_excess, drainable = baseflow_gated(s, theta_a, params, geom)
        gate_o = params.k_sat * sigmoid(params.a_o * wt_excess - params.b_o)
        margin = min(margin, _margin(wt_height, params.t_wt))
        if wt_height > params.t_wt:
            code |= CLAMP_WATER_TABLE
    else:
        demand_o = baseflow_linear(theta_a, params.k_sat)
        gate_o = params.k_sat
        wt_height = wt_excess = drainable = math.nan
    margin = min(margin, _margin(demand_o, avail))
    if demand_o >= avail:
        code |= CLAMP_BASEFLOW
        baseflow = avail
        theta3 = geom.theta_min
    else:
        baseflow = demand_o
        theta3 = theta2 - demand_o
    avail = theta3 - geom.theta_min

    if config.drainage_active:
        gate_v = drainage_gate(s, params.a_v, params.b_v)
        demand_v = gate_v * theta_a
        margin = min(margin, _margin(demand_v, avail))
        if demand_v >= avail:
            code |= CLAMP_DRAINAGE
            drainage = avail
            theta4 = geom.theta_min
        else:
            drainage = demand_v
            theta4 = theta3 - demand_v
    else:
        gate_v = 0.0
        drainage = 0.0
        theta4 = theta3

    theta_new = min(max(theta4, geom.theta_min), geom.theta_max)

    record = FluxRecord(
        infiltration=infiltration,
        et_loss=et_loss,
        baseflow=baseflow,
        sat_excess=sat_excess,
        infil_excess=infil_excess,
        drainage=drainage,
        s=s,
        theta_a=theta_a,
        wt_height=wt_height,
        wt_excess=wt_excess,
        drainable=drainable,
        gate_u=gate_u,
        gate_o=gate_o,
        gate_v=gate_v,
        clamp_code=code,
        clamp_margin=margin,
    )
    return ModelState(theta=theta_new, s_pnd=pond1), record


def simulate(
    forcing,
    config: ModelConfig,
    params: PhysicalParams,
    geom: SoilGeometry,
    init: ModelState | None = None,
) -> SimulationResult:
    """Run the daily recurrence over a forcing series.

    ``forcing`` is anything exposing aligned ``p`` and ``pet`` arrays
    (see :class:`mcrr.data.ForcingSeries`).  Returns the simulated
    streamflow along with per-step diagnostics and the state trace.
    """
    p = np.asarray(forcing.p, dtype=float)
    pet = np.asarray(forcing.pet, dtype=float)
    if p.shape != pet.shape or p.ndim != 1:
        raise InvalidInputError("forcing arrays must be aligned 1-D series")
    state = default_initial_state(geom) if init is None else init
    q = np.empty(len(p), dtype=float)
    records: list[FluxRecord] = []
    states: list[ModelState] = [state]
    for t in range(len(p)):
        state, rec = step(state, float(p[t]), float(pet[t]), config, params, geom)
        q[t] = rec.runoff
        records.append(rec)
        states.append(state)
    return SimulationResult(q_sim=q, records=records, states=states)


def mass_balance_residuals(
    result: SimulationResult, forcing, geom: SoilGeometry
) -> np.ndarray:
    """Per-step water-balance residuals [mm].

    For each step: inputs (precipitation) minus outputs (runoff, ET,
    drainage) minus the change in total storage (soil plus pond).
    """
    p = np.asarray(forcing.p, dtype=float)
    res = np.empty(len(result.records))
    for t, rec in enumerate(result.records):
        before = result.states[t]
        after = result.states[t + 1]
        d_storage = (after.theta + after.s_pnd) - (before.theta + before.s_pnd)
        res[t] = p[t] - rec.runoff - rec.et_loss - rec.drainage - d_storage
    return res
