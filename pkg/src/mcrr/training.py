"""Two-stage gradient calibration with a from-scratch Adam optimiser.

Stage one explores: many random raw initialisations are trained at a
single learning rate.  Stage two refines: the stage-one winner's final
raw vector is re-trained from a sweep of learning rates.  Every run is
scored by validation KGE after training; the winner across both stages
(exploration seeds plus refinements) is the calibrated model.

Runs whose loss or gradient goes non-finite are frozen at their last
finite parameters and flagged failed; they never win selection unless
every run failed.  All runs in a stage share one batched JAX evaluation,
so a stage is deterministic for a given seed list regardless of worker
count or batch composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .data import ForcingSeries, PeriodWindows
from .errors import DivergedRunError, InvalidInputError
from .model import ModelConfig, SoilGeometry

STAGE1_SEEDS = 30
STAGE1_LR = 0.1
STAGE2_LRS = (0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
DEFAULT_EPOCHS = 1000


@dataclass(frozen=True)
class Schedule:
    """Plateau learning-rate schedule: decay on stalled training loss."""

    initial_lr: float
    decay_factor: float = 0.75
    patience_epochs: int = 25
    min_improvement: float = 1e-5
    min_lr: float = 1e-4

    def __post_init__(self) -> None:
        if self.initial_lr <= 0.0 or self.min_lr <= 0.0:
            raise InvalidInputError("learning rates must be positive")
        if not (0.0 < self.decay_factor < 1.0):
            raise InvalidInputError("decay_factor must lie in (0, 1)")
        if self.patience_epochs < 1:
            raise InvalidInputError("patience_epochs must be at least 1")


@dataclass
class AdamState:
    """First/second moment accumulators for a (B, P) parameter matrix."""

    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int


def adam_init(params: np.ndarray) -> AdamState:
    params = np.asarray(params, dtype=float)
    return AdamState(params=params.copy(), m=np.zeros_like(params),
                     v=np.zeros_like(params), t=0)


def adam_update(
    state: AdamState,
    grad: np.ndarray,
    lr,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam step; ``lr`` may be per-lane.

    Raises DivergedRunError on a non-finite gradient; batched callers
    freeze such lanes before updating instead.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise DivergedRunError("non-finite gradient")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    lr = np.asarray(lr, dtype=float)
    if lr.ndim == 1:
        lr = lr[:, None]
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(params=params, m=m, v=v, t=t)


@dataclass(frozen=True)
class CalibrationProblem:
    """Everything one calibration needs: windows, masks, config, geometry."""

    config: ModelConfig
    geom: SoilGeometry
    train_forcing: ForcingSeries
    train_mask: np.ndarray
    val_forcing: ForcingSeries
    val_mask: np.ndarray
    test_forcing: ForcingSeries | None = None
    test_mask: np.ndarray | None = None


def build_problem(
    series: ForcingSeries,
    windows: PeriodWindows,
    config: ModelConfig,
    geom: SoilGeometry,
) -> CalibrationProblem:
    """Slice a loaded series into spin-up-inclusive calibration windows."""
    def cut(name: str) -> tuple[ForcingSeries, np.ndarray]:
        win = windows[name]
        return series.window(win.sim_start, win.eval_stop), win.eval_mask[win.window]

    train_f, train_m = cut("train")
    val_f, val_m = cut("val")
    test_f, test_m = cut("test")
    return CalibrationProblem(
        config=config, geom=geom,
        train_forcing=train_f, train_mask=train_m,
        val_forcing=val_f, val_mask=val_m,
        test_forcing=test_f, test_mask=test_m,
    )


@dataclass
class TrainingRunRecord:
    """One optimisation run: provenance, trace and final scores."""

    stage: str                # "explore" or "refine"
    seed: int
    initial_lr: float
    epochs_run: int
    failed: bool
    final_raw: np.ndarray
    train_kge: float
    val_kge: float
    loss_trace: np.ndarray    # training loss before each epoch's update


@dataclass
class StageResult:
    best: TrainingRunRecord
    runs: list[TrainingRunRecord]


def select_best(runs: list[TrainingRunRecord]) -> TrainingRunRecord:
    """Highest validation KGE among non-failed runs; ties go to the lower seed.

    If every run failed, the same ranking runs over the failed pool so
    callers still get a deterministic (flagged) record back.
    """
    alive = [r for r in runs if not r.failed]
    pool = alive if alive else runs
    return min(pool, key=lambda r: (-r.val_kge, r.seed))


def _run_batch(
    problem: CalibrationProblem,
    raws: np.ndarray,
    lrs: np.ndarray,
    seeds: np.ndarray,
    stage: str,
    epochs: int,
    schedule: Schedule,
) -> list[TrainingRunRecord]:
    """Train all lanes of a (B, P) raw matrix together."""
    n_lanes = len(raws)
    loss_grad = engine.batch_loss_and_grad(
        problem.config, problem.train_forcing, problem.train_mask, problem.geom
    )
    state = adam_init(raws)
    lr = np.asarray(lrs, dtype=float).copy()
    best_loss = np.full(n_lanes, math.inf)
    stall = np.zeros(n_lanes, dtype=int)
    failed = np.zeros(n_lanes, dtype=bool)
    frozen = raws.copy()
    epochs_run = np.full(n_lanes, epochs, dtype=int)
    trace = np.full((n_lanes, epochs), np.nan)

    for epoch in range(epochs):
        loss, grad = loss_grad(state.params)
        bad = ~np.isfinite(loss) | ~np.isfinite(grad).all(axis=1)
        newly = bad & ~failed
        if newly.any():
            failed |= newly
            epochs_run[newly] = epoch
        trace[~failed, epoch] = loss[~failed]

        # Plateau bookkeeping on the training loss.
        improved = loss < best_loss - schedule.min_improvement
        live = ~failed
        best_loss[live & improved] = loss[live & improved]
        stall[live & improved] = 0
        stall[live & ~improved] += 1
        decay = live & (stall > schedule.patience_epochs)
        lr[decay] = np.maximum(lr[decay] * schedule.decay_factor, schedule.min_lr)
        stall[decay] = 0

        grad = np.where(failed[:, None], 0.0, grad)
        state = adam_update(state, grad, np.where(failed, 0.0, lr))
        state.params[failed] = frozen[failed]
        # An update that blows past float range also fails the lane.
        blown = ~np.isfinite(state.params).all(axis=1) & ~failed
        if blown.any():
            failed |= blown
            epochs_run[blown] = epoch + 1
            state.params[blown] = frozen[blown]
        frozen[~failed] = state.params[~failed]

    records = []
    for i in range(n_lanes):
        raw = frozen[i]
        train_kge = _safe_kge(raw, problem.train_forcing, problem.train_mask, problem)
        val_kge = _safe_kge(raw, problem.val_forcing, problem.val_mask, problem)
        records.append(TrainingRunRecord(
            stage=stage,
            seed=int(seeds[i]),
            initial_lr=float(lrs[i]),
            epochs_run=int(epochs_run[i]),
            failed=bool(failed[i]) or not math.isfinite(val_kge),
            final_raw=raw.copy(),
            train_kge=train_kge,
            val_kge=val_kge,
            loss_trace=trace[i][~np.isnan(trace[i])],
        ))
    return records


def _safe_kge(raw, forcing, mask, problem: CalibrationProblem) -> float:
    try:
        ev = engine.evaluate_loss(raw, forcing, mask, problem.config, problem.geom)
    except Exception:
        return -math.inf
    return ev.report.kge if math.isfinite(ev.report.kge) else -math.inf


def train_run(
    seed: int,
    schedule: Schedule,
    problem: CalibrationProblem,
    epochs: int = DEFAULT_EPOCHS,
    init_raw: np.ndarray | None = None,
    stage: str = "explore",
) -> TrainingRunRecord:
    """One deterministic optimisation run.

    ``init_raw`` overrides the seed-derived uniform initialisation (used
    by stage two, which restarts from the exploration winner).
    """
    if epochs < 0:
        raise InvalidInputError("epochs must be non-negative")
    if init_raw is None:
        rng = np.random.default_rng(seed)
        init_raw = engine.random_raw(problem.config, rng)
    raws = np.asarray(init_raw, dtype=float)[None, :]
    return _run_batch(
        problem, raws,
        lrs=np.array([schedule.initial_lr]),
        seeds=np.array([seed]),
        stage=stage, epochs=epochs, schedule=schedule,
    )[0]


def stage1_explore(
    problem: CalibrationProblem,
    n_seeds: int = STAGE1_SEEDS,
    lr: float = STAGE1_LR,
    epochs: int = DEFAULT_EPOCHS,
    seeds: np.ndarray | None = None,
    schedule: Schedule | None = None,
) -> StageResult:
    """Stage one: train ``n_seeds`` random initialisations at one rate."""
    if seeds is None:
        seeds = np.arange(n_seeds)
    seeds = np.asarray(seeds, dtype=int)
    if len(seeds) != n_seeds:
        raise InvalidInputError("seeds must match n_seeds")
    schedule = schedule or Schedule(initial_lr=lr)
    raws = np.stack([
        engine.random_raw(problem.config, np.random.default_rng(int(s)))
        for s in seeds
    ])
    records = _run_batch(
        problem, raws,
        lrs=np.full(n_seeds, schedule.initial_lr),
        seeds=seeds, stage="explore", epochs=epochs, schedule=schedule,
    )
    return StageResult(best=select_best(records), runs=records)


def stage2_refine(
    best: TrainingRunRecord,
    problem: CalibrationProblem,
    lrs: tuple[float, ...] = STAGE2_LRS,
    epochs: int = DEFAULT_EPOCHS,
) -> StageResult:
    """Stage two: re-train the exploration winner at each learning rate.

    Selection considers the refinements together with the incoming
    winner, so a stage-two sweep can never make the result worse.
    """
    raws = np.tile(best.final_raw, (len(lrs), 1))
    records = _run_batch(
        problem, raws,
        lrs=np.asarray(lrs, dtype=float),
        seeds=np.full(len(lrs), best.seed),
        stage="refine", epochs=epochs,
        schedule=Schedule(initial_lr=float(lrs[0])),
    )
    return StageResult(best=select_best([best] + records), runs=records)


@dataclass
class ProtocolResult:
    """Both stages of the calibration protocol for one configuration."""

    selected: TrainingRunRecord
    stage1: StageResult
    stage2: StageResult

    @property
    def runs(self) -> list[TrainingRunRecord]:
        return self.stage1.runs + self.stage2.runs


def run_protocol(
    problem: CalibrationProblem,
    n_seeds: int = STAGE1_SEEDS,
    stage1_lr: float = STAGE1_LR,
    stage2_lrs: tuple[float, ...] = STAGE2_LRS,
    epochs: int = DEFAULT_EPOCHS,
    seeds: np.ndarray | None = None,
) -> ProtocolResult:
    """Full two-stage protocol; the selected run maximises validation KGE."""
    stage1 = stage1_explore(problem, n_seeds=n_seeds, lr=stage1_lr,
                            epochs=epochs, seeds=seeds)
    stage2 = stage2_refine(stage1.best, problem, lrs=stage2_lrs, epochs=epochs)
    return ProtocolResult(selected=stage2.best, stage1=stage1, stage2=stage2)
