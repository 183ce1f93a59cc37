"""Next-generation matrix estimation from age-structured incidence data."""
from .direct import IdentifiabilityReport, NonIdentifiableError, build_design, identifiability, solve_direct
from .epi import (
    MATRICES,
    IncidenceSeries,
    NextGenMatrix,
    OutbreakConfig,
    SeasonSet,
    SerialInterval,
    effective_r,
    group_r0,
    simulate,
    simulate_recurrent,
    spectral_radius,
)
from .fit import FitOptions, FitResult, multi_outbreak_fit, two_stage_fit
from .likelihood import FitProblem, ModelParams, log_likelihood
from .montecarlo import McSummary, ScenarioSpec, mse, run_scenario
from .nelder_mead import NMOptions, nelder_mead
from .observe import NoiseParams, ReportingModel, moving_average, observe, observe_reported
from .profile import profile_ci

__version__ = "0.1.0"
