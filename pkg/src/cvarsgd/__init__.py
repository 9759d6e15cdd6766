"""CV@R statistical learning by stochastic gradient descent over (theta, t)."""
from .core import (
    AugmentedExample, Batch, ConfidenceLevel, DimensionError, Example, LossConstants, ParamState,
    StepSizes, Trace, TraceRecord, ValidationError, validate_state,
)
from .losses import LossModel, RidgeLoss, SmoothedSurrogate, r_sigma, ridge_grad, ridge_value
from .objective import (
    GEstimate, cvar_sorted, cvar_variational, g_alpha_estimate, grad_g_alpha_estimate,
    smoothed_g_estimate, smoothed_grad_g,
)
from .optimizer import (
    DivergenceError, IncompleteRunError, SgdConfig, cvar_sgd_step, lms_step, run, run_lms,
    smoothed_sgd_step,
)
from .diagnostics import (
    PlReport, ReferenceSolution, estimate_grad_bound, estimate_reference, fit_linear_rate,
    pl_check, set_restricted_pl_check, stepsize_admissibility, theorem1_bound,
)
from .datagen import ExampleSource, StreamSpec, materialize_population, next_example
from .config import ConfigError, ExperimentConfig, load_config, parse_config

__version__ = "0.1.0"
