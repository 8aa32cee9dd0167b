"""Rate estimation for GI/G/1 queues and upper/lower class tests for the MLE."""

from .classfn import (
    PowerLogLog,
    ScaledLil,
    UserTable,
    condition_c2_check,
    envelope,
    integral_test,
    series_diagnostics,
)
from .estimator import QueueRateMLE
from .expfam import ExpFamilyModel, exponential, gamma, get_model
from .mle import MleResult, estimate, loglik_approx, loglik_full
from .montecarlo import (
    ExperimentConfig,
    run_condition_c1,
    run_consistency,
    run_crossings,
    run_normality,
)
from .qsim import (
    FixedArrivals,
    FixedDepartures,
    FixedTime,
    FixedTransitions,
    ObservationWindow,
    checkpoints,
    simulate,
)

__version__ = "0.1.0"
