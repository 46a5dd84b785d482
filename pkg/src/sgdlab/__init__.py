"""Projected stochastic gradient descent laboratory.

Synthetic problems with analytically known minimizers, the projected SGD
recursion under Robbins-Monro step-size schedules, Monte Carlo estimation
of the per-step online stability gap and its rate in the step size, and
supermartingale-based convergence diagnostics, behind a reproducible
experiment CLI.
"""

__version__ = "0.1.0"

from .engine import (
    DivergenceError,
    ErmResult,
    StepSchedule,
    Trajectory,
    erm_solve,
    projection_inactivity_index,
    robbins_monro_check,
    run_sgd,
    sgd_step,
)
from .losses import (
    HingeLoss,
    LogisticLoss,
    LossConstants,
    NonDifferentiableError,
    SquareLoss,
    check_gradient_fd,
    estimate_constants,
    loss_from_name,
)
from .model import (
    Dataset,
    EmpiricalDistribution,
    LinearGaussian,
    LogisticGaussian,
    NoAnalyticMinimizerError,
    NoClosedFormError,
    RiskEstimate,
    Sample,
    draw,
    empirical_risk,
    expected_risk,
    make_linear_gaussian,
    make_logistic_gaussian,
    risk_gradient,
    risk_report,
    sample_batch,
    sample_dataset,
    true_minimizer,
)
from .monitor import (
    MonitorSeries,
    RobbinsSiegmundReport,
    SupermartingaleReport,
    consistency_curve,
    excess_risk,
    generalization_gap,
    norm_error,
    robbins_siegmund_check,
    sgd_monitor_series,
    supermartingale_test,
)
from .sets import Ball, Box, Halfspace, Simplex, WholeSpace
from .stability import (
    RateFit,
    StabilitySeries,
    TaylorTerms,
    converse_bound_check,
    envelope_constant,
    fit_rate,
    gradient_growth_check,
    pooled_gap,
    stability_gap,
    stability_profile,
    taylor_decomposition,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config

__all__ = [name for name in dir() if not name.startswith("_")]
