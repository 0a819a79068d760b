"""Stochastic EM driver: imputation loop, chain bookkeeping, convergence,
and posterior summaries with credible intervals.

Reproducibility contract: every random draw descends from the config seed
through fixed stream keys (one stream per iteration for imputations, one
for snapshot selection in summaries), so identical inputs give identical
chains and summaries regardless of scheduling.
"""

import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from . import estep, mstep
from .model import (
    BetaPrior,
    Dataset,
    HyperParams,
    Params,
    SubjectRecord,
    validate_dataset,
)

# Stream keys separating the engine's independent randomness domains.
_IMPUTATION_STREAM = 1
_SUMMARY_STREAM = 2

# Components of the running parameter mean near zero are compared on this
# absolute scale instead of a vanishing relative one.
CONV_SCALE_FLOOR = 0.05

VALID_BETA_LOSSES = ("squared", "bernoulli")
VALID_MISSING_MODES = ("truncated", "joint_imputation")


class EngineError(RuntimeError):
    """Fit failure surfaced with the chain built so far attached."""

    def __init__(self, message: str, chain: Optional["Chain"] = None):
        super().__init__(message)
        self.chain = chain


@dataclass(frozen=True)
class EngineConfig:
    """Stochastic EM controls; ``burn_in`` defaults to max(50, max_iters/5)."""

    max_iters: int = 500
    burn_in: Optional[int] = None
    conv_tol: float = 1e-3
    conv_window: int = 25
    seed: int = 0
    intercept: bool = True
    beta_loss: str = "squared"
    missing_t_mode: str = "joint_imputation"
    imputed_class_enabled: bool = True
    n_posterior_draws: int = 200

    def __post_init__(self):
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", max(50, self.max_iters // 5))
        if not 0 <= self.burn_in < self.max_iters:
            raise ValueError(
                f"burn_in must satisfy 0 <= burn_in < max_iters, got {self.burn_in} "
                f"vs {self.max_iters}"
            )
        if self.conv_tol <= 0:
            raise ValueError("conv_tol must be positive")
        if self.conv_window < 1:
            raise ValueError("conv_window must be at least 1")
        if self.n_posterior_draws < 100:
            raise ValueError("n_posterior_draws must be at least 100")
        if self.beta_loss not in VALID_BETA_LOSSES:
            raise ValueError(f"beta_loss must be one of {VALID_BETA_LOSSES}")
        if self.missing_t_mode not in VALID_MISSING_MODES:
            raise ValueError(f"missing_t_mode must be one of {VALID_MISSING_MODES}")


@dataclass(frozen=True)
class Chain:
    """Per-iteration history of one fit.

    ``tests`` is None when no test outcome was imputed; otherwise it carries
    the observed-or-imputed value per subject and iteration (-1 where absent
    under truncated handling).
    """

    snapshots: tuple
    diagnoses: np.ndarray
    tests: Optional[np.ndarray]
    n_iters: int
    stop_reason: str
    burn_in: int
    iter_seconds: np.ndarray
    final_stats: mstep.SufficientStats

    @property
    def post_burn_in(self) -> tuple:
        return self.snapshots[self.burn_in :]


@dataclass(frozen=True)
class FitSummary:
    """Point estimate, posterior samples, and per-subject summaries.

    ``parameter_samples`` maps each parameter name to its post-burn-in
    trajectory (vector families as ``name[k]`` entries, risk weights as one
    (iterations, P) matrix). ``final_posteriors`` maps each rate family to
    its conjugate Beta posterior at the final imputation.
    """

    params_mean: Params
    parameter_samples: Dict[str, np.ndarray]
    subject_means: np.ndarray
    subject_intervals: np.ndarray
    final_posteriors: Dict[str, BetaPrior]


@dataclass(frozen=True)
class ParameterPosterior:
    """Chain-empirical samples plus, for rate families, the conjugate Beta."""

    samples: np.ndarray
    conjugate: Optional[BetaPrior]


def initial_params(hyper: HyperParams, weight_len: int, with_imputed_class: bool) -> Params:
    """Starting point: rates at prior point estimates, weights at zero."""
    imputed = (None, None)
    if with_imputed_class:
        imputed = (
            hyper.imputed_sensitivity_prior.point_estimate,
            hyper.imputed_false_positive_prior.point_estimate,
        )
    return Params(
        sensitivity=hyper.sensitivity_prior.point_estimate,
        false_positive_rate=hyper.false_positive_prior.point_estimate,
        symptomatic_if_healthy=hyper.symptomatic_if_healthy_prior.point_estimate,
        symptomatic_if_infected=hyper.symptomatic_if_infected_prior.point_estimate,
        symptom_rates_healthy=np.array([b.point_estimate for b in hyper.symptom_priors_healthy]),
        symptom_rates_infected=np.array(
            [b.point_estimate for b in hyper.symptom_priors_infected]
        ),
        risk_weights=np.zeros(weight_len),
        imputed_sensitivity=imputed[0],
        imputed_false_positive_rate=imputed[1],
    )


def _iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_IMPUTATION_STREAM, iteration))
    )


def _summary_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_SUMMARY_STREAM,))
    )


def _orient_labels(
    d_hat: np.ndarray, obs_mask: np.ndarray, t_obs: np.ndarray, t_obs_total: float
) -> np.ndarray:
    """Flip an imputed labeling that disagrees with the observed tests.

    The two latent classes are exchangeable; the identifiability anchor is
    that the test is informative (sensitivity above the false-positive
    rate). A draw whose empirical rates violate that ordering is the mirror
    image of an equally likely oriented draw, so relabel it.

    ``t_obs`` (the observed test outcomes as floats) and ``t_obs_total``
    (their sum) are constant per run and hoisted by the caller.
    """
    if t_obs.shape[0] == 0:
        return d_hat
    d_obs = d_hat[obs_mask].astype(np.float64)
    n1 = d_obs.sum()
    n0 = d_obs.shape[0] - n1
    if n1 == 0 or n0 == 0:
        return d_hat
    true_positives = float(t_obs @ d_obs)
    empirical_sensitivity = true_positives / n1
    empirical_false_positive = (t_obs_total - true_positives) / n0
    if empirical_sensitivity < empirical_false_positive:
        return (1 - d_hat).astype(np.int8)
    return d_hat


def _draw_joint_cells(params: Params, questionnaire: np.ndarray, u: np.ndarray):
    """Map one uniform per row through the normalized four-cell posterior."""
    logw = estep.joint_cells_from_questionnaire(params, questionnaire)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    cum = np.cumsum(w, axis=1)
    idx = (u[:, None] >= cum).sum(axis=1)
    np.clip(idx, 0, 3, out=idx)
    cells = np.asarray(estep.CELL_ORDER, dtype=np.int8)
    return cells[idx, 0], cells[idx, 1]


def run_stem(
    dataset: Dataset, hyper: HyperParams, config: EngineConfig
) -> Tuple[Chain, FitSummary]:
    """Run the stochastic EM loop to convergence or the iteration cap.

    Each iteration computes the exact diagnosis posterior per subject (joint
    with the test outcome where that is missing and joint handling is on),
    draws one imputation per subject, and maximizes every parameter family.
    The loop stops once the running post-burn-in parameter mean moves less
    than ``conv_tol`` (relative) across the trailing ``conv_window``
    iterations.

    Returns:
        The chain and its summary (point estimate, per-parameter samples,
        per-subject posterior means with 95% credible intervals).

    Raises:
        ValueError: the dataset fails validation.
        EngineError: the weight fit failed; the partial chain is attached.
    """
    violations = validate_dataset(dataset)
    if violations:
        head = "; ".join(f"{v.record_id}: {v.rule}" for v in violations[:5])
        raise ValueError(f"dataset failed validation ({len(violations)} violations): {head}")
    if hyper.k_symptoms != dataset.k_symptoms:
        raise ValueError("hyper-parameter symptom arity does not match the dataset")

    arr = dataset.arrays
    n = len(dataset)
    design = dataset.design_matrix(config.intercept)
    symptomatic = arr.symptomatic_float
    symptoms = arr.symptoms
    observed = arr.test_observed
    missing = ~observed
    any_observed = bool(observed.any())
    any_missing = bool(missing.any())
    use_joint = any_missing and config.missing_t_mode == "joint_imputation"
    separate_class = use_joint and config.imputed_class_enabled

    test_template = np.where(observed, np.nan_to_num(arr.test, nan=-1.0), -1.0).astype(np.int8)
    test_float_obs = arr.test[observed]
    test_float_total = float(test_float_obs.sum())
    imputed_mask = missing & use_joint
    iteration_rngs = [_iteration_rng(config.seed, i) for i in range(config.max_iters)]

    params = initial_params(hyper, design.shape[1], separate_class)
    snapshots = []
    diagnoses = np.empty((config.max_iters, n), dtype=np.int8)
    tests = np.empty((config.max_iters, n), dtype=np.int8) if use_joint else None
    iter_seconds = np.empty(config.max_iters)
    mean_history = []
    running_sum = None
    stop_reason = "max_iters"
    n_iters = config.max_iters
    last_imputations = None

    def partial_chain(upto: int) -> Optional["Chain"]:
        if upto == 0 or last_imputations is None:
            return None
        return Chain(
            snapshots=tuple(snapshots),
            diagnoses=diagnoses[:upto].copy(),
            tests=tests[:upto].copy() if tests is not None else None,
            n_iters=upto,
            stop_reason="error",
            burn_in=min(config.burn_in, upto - 1),
            iter_seconds=iter_seconds[:upto].copy(),
            final_stats=mstep.accumulate_stats(
                dataset, last_imputations, intercept=config.intercept
            ),
        )

    for i in range(config.max_iters):
        tic = time.perf_counter()
        u = iteration_rngs[i].random(n)

        risk_log_odds = design @ params.risk_weights
        questionnaire = estep.questionnaire_log_odds(params, symptomatic, symptoms, risk_log_odds)

        if not any_missing:
            p1 = expit(questionnaire + estep.test_log_odds(params, test_float_obs))
            d_hat = (u < p1).astype(np.int8)
            t_filled = test_template
        else:
            d_hat = np.zeros(n, dtype=np.int8)
            t_filled = test_template.copy()
            if any_observed:
                p1 = expit(questionnaire[observed] + estep.test_log_odds(params, test_float_obs))
                d_hat[observed] = u[observed] < p1
            if use_joint:
                d_m, t_m = _draw_joint_cells(params, questionnaire[missing], u[missing])
                d_hat[missing] = d_m
                t_filled[missing] = t_m
            else:
                p1m = expit(questionnaire[missing])
                d_hat[missing] = u[missing] < p1m

        d_hat = _orient_labels(d_hat, observed, test_float_obs, test_float_total)

        imputations = estep.Imputations(
            diagnoses=d_hat,
            test=t_filled,
            test_imputed=imputed_mask,
            separate_imputed_class=separate_class,
        )
        last_imputations = imputations

        try:
            params = mstep.m_step(
                dataset,
                imputations,
                hyper,
                params,
                beta_loss=config.beta_loss,
                zero_start=False,
            )
        except mstep.BetaFitError as err:
            raise EngineError(f"weight fit failed at iteration {i}: {err}", partial_chain(i)) from err

        snapshots.append(params)
        diagnoses[i] = d_hat
        if tests is not None:
            tests[i] = t_filled
        iter_seconds[i] = time.perf_counter() - tic

        if i >= config.burn_in:
            vec = params.as_vector()
            running_sum = vec.copy() if running_sum is None else running_sum + vec
            mean_history.append(running_sum / (i - config.burn_in + 1))
            if i >= config.burn_in + config.conv_window:
                new = mean_history[-1]
                old = mean_history[-1 - config.conv_window]
                rel = np.abs(new - old) / np.maximum(np.abs(old), CONV_SCALE_FLOOR)
                if float(rel.max()) < config.conv_tol:
                    stop_reason = "converged"
                    n_iters = i + 1
                    break

    chain = Chain(
        snapshots=tuple(snapshots),
        diagnoses=diagnoses[:n_iters].copy(),
        tests=tests[:n_iters].copy() if tests is not None else None,
        n_iters=n_iters,
        stop_reason=stop_reason,
        burn_in=config.burn_in,
        iter_seconds=iter_seconds[:n_iters].copy(),
        final_stats=mstep.accumulate_stats(dataset, last_imputations, intercept=config.intercept),
    )
    return chain, summarize(chain, dataset, hyper, config)


def _selected_snapshots(chain: Chain, config: EngineConfig) -> list:
    """Deterministic snapshot subsample shared by all summary operations."""
    post = chain.post_burn_in
    if not post:
        raise ValueError("chain has no post-burn-in snapshots")
    rng = _summary_rng(config.seed)
    replace = len(post) < config.n_posterior_draws
    idx = rng.choice(len(post), size=config.n_posterior_draws, replace=replace)
    return [post[j] for j in idx]


def _posterior_matrix(
    snapshots: list,
    symptomatic: np.ndarray,
    symptoms: np.ndarray,
    risks: np.ndarray,
    test: np.ndarray,
    observed: np.ndarray,
    intercept: bool,
    include_test: bool,
) -> np.ndarray:
    """(draws, subjects) matrix of posterior probabilities across snapshots."""
    n = symptomatic.shape[0]
    ones = np.ones((n, 1))
    design = np.hstack([ones, risks]) if intercept else risks
    out = np.empty((len(snapshots), n))
    for row, p in enumerate(snapshots):
        risk_log_odds = design @ p.risk_weights
        log_odds = estep.questionnaire_log_odds(p, symptomatic, symptoms, risk_log_odds)
        if include_test and observed.any():
            log_odds = log_odds.copy()
            log_odds[observed] += estep.test_log_odds(p, test[observed])
        out[row] = expit(log_odds)
    return out


def summarize(
    chain: Chain, dataset: Dataset, hyper: HyperParams, config: EngineConfig
) -> FitSummary:
    """Build the FitSummary for a finished chain."""
    post = chain.post_burn_in
    k = dataset.k_symptoms
    has_imputed = post[-1].has_imputed_class

    stacked = np.vstack([p.as_vector() for p in post])
    params_mean = Params.from_vector(stacked.mean(axis=0), k, has_imputed)

    samples: Dict[str, np.ndarray] = {
        "sensitivity": np.array([p.sensitivity for p in post]),
        "false_positive_rate": np.array([p.false_positive_rate for p in post]),
        "symptomatic_if_healthy": np.array([p.symptomatic_if_healthy for p in post]),
        "symptomatic_if_infected": np.array([p.symptomatic_if_infected for p in post]),
    }
    healthy = np.vstack([p.symptom_rates_healthy for p in post])
    infected = np.vstack([p.symptom_rates_infected for p in post])
    for j in range(k):
        samples[f"symptom_rates_healthy[{j}]"] = healthy[:, j]
        samples[f"symptom_rates_infected[{j}]"] = infected[:, j]
    if has_imputed:
        samples["imputed_sensitivity"] = np.array([p.imputed_sensitivity for p in post])
        samples["imputed_false_positive_rate"] = np.array(
            [p.imputed_false_positive_rate for p in post]
        )
    samples["risk_weights"] = np.vstack([p.risk_weights for p in post])

    means, intervals = subject_posterior_table(chain, dataset, config, include_test=True)

    return FitSummary(
        params_mean=params_mean,
        parameter_samples=samples,
        subject_means=means,
        subject_intervals=intervals,
        final_posteriors=_conjugate_posteriors(chain.final_stats, hyper, has_imputed),
    )


def _conjugate(counts, prior: BetaPrior) -> BetaPrior:
    a, b = counts
    return BetaPrior(prior.alpha + a, prior.beta + (b - a))


def _conjugate_posteriors(
    stats: mstep.SufficientStats, hyper: HyperParams, has_imputed: bool
) -> Dict[str, BetaPrior]:
    out = {
        "sensitivity": _conjugate(stats.test_counts, hyper.sensitivity_prior),
        "false_positive_rate": _conjugate(stats.false_positive_counts, hyper.false_positive_prior),
        "symptomatic_if_healthy": _conjugate(
            stats.symptomatic_healthy_counts, hyper.symptomatic_if_healthy_prior
        ),
        "symptomatic_if_infected": _conjugate(
            stats.symptomatic_infected_counts, hyper.symptomatic_if_infected_prior
        ),
    }
    for j in range(stats.symptom_healthy_counts.shape[0]):
        out[f"symptom_rates_healthy[{j}]"] = _conjugate(
            tuple(stats.symptom_healthy_counts[j]), hyper.symptom_priors_healthy[j]
        )
        out[f"symptom_rates_infected[{j}]"] = _conjugate(
            tuple(stats.symptom_infected_counts[j]), hyper.symptom_priors_infected[j]
        )
    if has_imputed and stats.imputed_test_counts is not None:
        out["imputed_sensitivity"] = _conjugate(
            stats.imputed_test_counts, hyper.imputed_sensitivity_prior
        )
        out["imputed_false_positive_rate"] = _conjugate(
            stats.imputed_false_positive_counts, hyper.imputed_false_positive_prior
        )
    return out


def subject_posterior_table(
    chain: Chain, dataset: Dataset, config: EngineConfig, include_test: bool = True
) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and 95% credible interval for every subject at once.

    Returns:
        (means, intervals): shapes (n,) and (n, 2). Subjects without a test
        outcome fall back to the questionnaire-only posterior even when
        ``include_test`` is True.
    """
    arr = dataset.arrays
    selected = _selected_snapshots(chain, config)
    n = len(dataset)
    means = np.empty(n)
    intervals = np.empty((n, 2))
    chunk = 8192
    for start in range(0, max(n, 1), chunk):
        stop = min(start + chunk, n)
        if start >= stop:
            break
        block = _posterior_matrix(
            selected,
            arr.symptomatic[start:stop].astype(np.float64),
            arr.symptoms[start:stop],
            arr.risks[start:stop],
            arr.test[start:stop],
            arr.test_observed[start:stop],
            config.intercept,
            include_test=include_test,
        )
        means[start:stop] = block.mean(axis=0)
        intervals[start:stop, 0] = np.quantile(block, 0.025, axis=0)
        intervals[start:stop, 1] = np.quantile(block, 0.975, axis=0)
    return means, intervals


def subject_posterior(
    r: SubjectRecord, chain: Chain, config: EngineConfig, include_test: bool = True
) -> Tuple[float, Tuple[float, float]]:
    """Posterior mean and central 95% credible interval for one subject.

    The interval spans parameter uncertainty: the diagnosis probability is
    recomputed under ``n_posterior_draws`` sampled chain snapshots and
    summarized by its empirical 2.5%/97.5% quantiles. With
    ``include_test=False`` (or a missing test outcome) the questionnaire-only
    posterior is used, mirroring the two report variants.
    """
    selected = _selected_snapshots(chain, config)
    observed = np.array([r.test_result is not None])
    test = np.array([float(r.test_result) if r.test_result is not None else np.nan])
    block = _posterior_matrix(
        selected,
        np.array([float(r.symptomatic)]),
        r.symptoms.astype(np.float64).reshape(1, -1),
        r.risk_factors.reshape(1, -1),
        test,
        observed,
        intercept=chain.snapshots[-1].risk_weights.shape[0] == r.risk_factors.shape[0] + 1,
        include_test=include_test,
    )[:, 0]
    lo, hi = np.quantile(block, [0.025, 0.975])
    return float(block.mean()), (float(lo), float(hi))


def parameter_posteriors(chain: Chain, hyper: HyperParams) -> Dict[str, ParameterPosterior]:
    """Both posterior views per parameter: conjugate Beta and chain-empirical.

    Rate families get the final-iteration conjugate Beta posterior (prior
    shapes plus final counts) alongside their post-burn-in chain samples;
    risk weights get chain samples only.
    """
    post = chain.post_burn_in
    if not post:
        raise ValueError("chain has no post-burn-in snapshots")
    has_imputed = post[-1].has_imputed_class
    conjugates = _conjugate_posteriors(chain.final_stats, hyper, has_imputed)

    k = post[-1].k_symptoms
    samples: Dict[str, np.ndarray] = {
        "sensitivity": np.array([p.sensitivity for p in post]),
        "false_positive_rate": np.array([p.false_positive_rate for p in post]),
        "symptomatic_if_healthy": np.array([p.symptomatic_if_healthy for p in post]),
        "symptomatic_if_infected": np.array([p.symptomatic_if_infected for p in post]),
    }
    healthy = np.vstack([p.symptom_rates_healthy for p in post])
    infected = np.vstack([p.symptom_rates_infected for p in post])
    for j in range(k):
        samples[f"symptom_rates_healthy[{j}]"] = healthy[:, j]
        samples[f"symptom_rates_infected[{j}]"] = infected[:, j]
    if has_imputed:
        samples["imputed_sensitivity"] = np.array([p.imputed_sensitivity for p in post])
        samples["imputed_false_positive_rate"] = np.array(
            [p.imputed_false_positive_rate for p in post]
        )
    out = {
        name: ParameterPosterior(samples=vals, conjugate=conjugates.get(name))
        for name, vals in samples.items()
    }
    out["risk_weights"] = ParameterPosterior(
        samples=np.vstack([p.risk_weights for p in post]), conjugate=None
    )
    return out
