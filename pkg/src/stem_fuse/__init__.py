"""Diagnosis inference that fuses an error-prone test with questionnaire data.

A latent-class Bayesian model ties together a binary test outcome, a
symptom panel, and continuous risk factors. Fitting runs a stochastic EM
chain: each iteration imputes every subject's hidden diagnosis from its
exact conditional posterior, then re-estimates all parameters from the
completed data (conjugate Beta updates for the rates, a damped Newton
solve for the risk weights). Subjects with a missing test outcome are
handled jointly, imputing the absent outcome alongside the diagnosis.
"""

__version__ = "0.1.0"

from .bench import (
    BenchResult,
    VanillaResult,
    accuracy,
    fixed_prior_em,
    gain_over_t,
    run_grid,
    vanilla_classifier,
)
from .engine import (
    Chain,
    EngineConfig,
    EngineError,
    FitSummary,
    ParameterPosterior,
    initial_params,
    parameter_posteriors,
    run_stem,
    subject_posterior,
    subject_posterior_table,
)
from .estep import (
    DiagnosisPosterior,
    Imputations,
    JointDTPosterior,
    joint_posterior_dt,
    posterior_odds,
    posterior_odds_truncated,
    sample_imputations,
)
from .model import (
    BetaPrior,
    Dataset,
    HyperParams,
    Params,
    SubjectRecord,
    Violation,
    joint_log_likelihood,
    moment_match_beta,
    noninformative_prior,
    validate_dataset,
)
from .mstep import (
    BetaFitError,
    SufficientStats,
    accumulate_stats,
    fit_beta,
    m_step,
    update_rate,
)
from .synth import GridCell, TrueParams, generate, grid_spec, mask_tests, sample_true_params

__all__ = [
    "__version__",
    "BetaPrior",
    "Dataset",
    "HyperParams",
    "Params",
    "SubjectRecord",
    "Violation",
    "joint_log_likelihood",
    "moment_match_beta",
    "noninformative_prior",
    "validate_dataset",
    "DiagnosisPosterior",
    "JointDTPosterior",
    "Imputations",
    "posterior_odds",
    "posterior_odds_truncated",
    "joint_posterior_dt",
    "sample_imputations",
    "SufficientStats",
    "BetaFitError",
    "accumulate_stats",
    "update_rate",
    "fit_beta",
    "m_step",
    "Chain",
    "EngineConfig",
    "EngineError",
    "FitSummary",
    "ParameterPosterior",
    "initial_params",
    "parameter_posteriors",
    "run_stem",
    "subject_posterior",
    "subject_posterior_table",
    "TrueParams",
    "GridCell",
    "generate",
    "grid_spec",
    "mask_tests",
    "sample_true_params",
    "BenchResult",
    "VanillaResult",
    "accuracy",
    "gain_over_t",
    "fixed_prior_em",
    "vanilla_classifier",
    "run_grid",
]
