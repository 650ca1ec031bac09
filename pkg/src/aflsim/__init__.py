"""Simulator and theory oracle for asynchronous federated gradient descent.

The package simulates a parameter server training a weighted family of convex
clients over lossy channels, under three aggregation rules (synchronous, drop
stale, reuse stale), and evaluates matching convergence upper bounds from either
closed-form or measured delay moments.
"""

from .bounds import (
    AsyncErrorTrace,
    BoundInputError,
    BoundInputs,
    BoundReport,
    DescentCheck,
    async_error,
    async_error_trace,
    audg_bound,
    audg_terms,
    delay_penalty_poly,
    descent_inequality_check,
    evaluate_bounds,
    performance_gap,
    persistent_delay_degradation,
    psurdg_bound,
    psurdg_terms,
    sfl_bound,
    sfl_terms,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    SweepSpec,
    config_from_dict,
    load_config,
    load_sweep,
    sweep_from_dict,
)
from .delay import (
    ChannelError,
    ChannelModel,
    DelayMoments,
    DelayState,
    TransmissionTrace,
    advance,
    client_streams,
    empirical_delay_moments,
    geometric_delay_moments,
    simulate_channel,
    stationary_delay_pmf,
    upload_delay_moments,
)
from .harness import (
    CrossoverReport,
    ExperimentResult,
    RuleAggregate,
    RunRecord,
    SweepResult,
    crossover_report,
    run_experiment,
    sweep,
)
from .objective import (
    DimensionMismatch,
    FixedRadius,
    GlobalObjective,
    LogisticClient,
    ObjectiveConstants,
    OptimizationError,
    QuadraticClient,
    RadiusFromInit,
    compute_constants,
    make_heterogeneous_family,
    objective_from_dict,
    objective_to_dict,
)
from .training import (
    AggregationError,
    DivergenceError,
    GradientMessage,
    Rule,
    RunResult,
    TrainingState,
    audg_aggregate,
    client_update,
    prefix_average_params,
    psurdg_aggregate,
    run_training,
    sfl_aggregate,
)

__version__ = "0.1.0"
