"""Monte-Carlo estimation of homogenized conductivity with random walks in
i.i.d. random conductance environments."""

from .env_field import ConductanceLaw, Edge, EnvironmentField, mean_site_weight
from .estimator import (
    EstimateReport,
    EstimatorState,
    accumulate,
    fluctuation_sample,
    merge,
    report,
    state_from_batch,
)
from .oracle import check_detailed_balance, exact_distribution, exact_sigma_t
from .study import StudyPlan, fit_rate, run_diagnostics, run_fluctuations, run_sweep
from .walker import (
    WalkRng,
    run_continuous_walk,
    run_discrete_walk,
    simulate_continuous,
    simulate_discrete,
    step_distribution,
)

__version__ = "0.1.0"
