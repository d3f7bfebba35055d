"""Mass-conserving soil-bucket rainfall-runoff models.

Gradient-calibrated daily water-balance models with strict
mass-conservation guarantees, a KGE-based evaluation suite, and a CLI
for grid experiments over basins, model structures and boundary
scenarios.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigMismatchError,
    DateGapError,
    DegenerateDataError,
    DivergedRunError,
    ExperimentConfigError,
    ForcingFormatError,
    InvalidInputError,
    InvalidParameterError,
    InvariantViolationError,
    McrrError,
    PeriodRangeError,
)
from .model import (
    ModelConfig,
    ModelState,
    PhysicalParams,
    Scenario,
    SoilGeometry,
    Structure,
    all_configs,
    derive_geometry,
    simulate,
    step,
)
from .metrics import KgeReport, fdc, flow_regimes, kge, kge_skill_score, rmse
from .data import (
    BasinAttributes,
    ForcingSeries,
    PeriodSpec,
    load_attributes,
    load_forcing,
    split_periods,
)
from .engine import (
    evaluate_loss,
    gradient,
    gradient_check,
    to_physical,
)
from .training import (
    CalibrationProblem,
    Schedule,
    TrainingRunRecord,
    build_problem,
    run_protocol,
    stage1_explore,
    stage2_refine,
    train_run,
)

__all__ = [name for name in dir() if not name.startswith("_")]
