"""Baselines, accuracy metrics, and grid experiments.

Three reference methods accompany the stochastic EM fit: an L2 logistic
regression trained directly on the noisy test labels (``vanilla``), and two
fixed-parameter EM variants that re-estimate only the diagnosis weights
(``agnostic``: uninformed rates; ``informed``: rates from test-stratified
empirical frequencies).
"""

import os
import time
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import KFold

from . import estep, mstep, synth
from .engine import EngineConfig, run_stem
from .model import (
    Dataset,
    HyperParams,
    Params,
    clamp_probability,
    moment_match_beta,
    noninformative_prior,
)

THREADS_ENV_VAR = "STEM_FUSE_THREADS"

# 13 log-spaced regularization strengths; the classifier uses their inverses
# as the usual C parameter.
PENALTY_GRID = tuple(np.logspace(-4, 2, 13))

# Spread of the test-accuracy prior handed to every method on a grid cell,
# mimicking a manufacturer-reported validation study.
TEST_PRIOR_VARIANCE = 0.0025

# Informed-baseline empirical frequencies are kept inside this interval.
EMPIRICAL_RATE_FLOOR = 0.02


def accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Percent agreement between two aligned binary vectors."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise ValueError("predicted and truth must be aligned and non-empty")
    return 100.0 * float(np.mean(predicted == truth))


def gain_over_t(predicted: np.ndarray, test: np.ndarray, truth: np.ndarray) -> float:
    """Accuracy points gained over using the test outcome as the prediction."""
    return accuracy(predicted, truth) - accuracy(test, truth)


@dataclass(frozen=True)
class VanillaResult:
    """Logistic baseline output: predictions plus bootstrap uncertainty."""

    predictions: np.ndarray
    probabilities: np.ndarray
    log_prob_intervals: Optional[np.ndarray]
    penalty: float
    fold_accuracies: Dict[float, float]


def _features(dataset: Dataset) -> np.ndarray:
    arr = dataset.arrays
    return np.hstack([arr.risks, arr.symptoms])


def vanilla_classifier(
    dataset: Dataset,
    seed: int = 0,
    cv_folds: int = 10,
    n_bootstrap: int = 200,
) -> VanillaResult:
    """Fit the test outcome directly from risk factors and symptoms.

    The regularization strength is chosen by k-fold cross-validation over
    :data:`PENALTY_GRID` (ties favor the stronger penalty); predictions are
    the refit model's probabilities thresholded at 0.5. Per-subject
    log-probability intervals come from ``n_bootstrap`` resampled refits
    (pass 0 to skip them). Folds and resamples are seeded, so the result is
    deterministic.
    """
    arr = dataset.arrays
    if not arr.test_observed.all():
        raise ValueError("vanilla classifier requires every test outcome present")
    features = _features(dataset)
    labels = arr.test.astype(np.int64)
    n = len(dataset)

    seeds = np.random.SeedSequence(seed).generate_state(2)
    n_splits = max(2, min(cv_folds, n))
    folds = KFold(n_splits=n_splits, shuffle=True, random_state=int(seeds[0]))

    def new_model(penalty: float) -> LogisticRegression:
        return LogisticRegression(C=1.0 / penalty, solver="lbfgs", max_iter=1000)

    fold_accuracies: Dict[float, float] = {}
    # Strongest penalty first so argmax ties resolve toward more shrinkage.
    for penalty in sorted(PENALTY_GRID, reverse=True):
        scores = []
        for train_idx, val_idx in folds.split(features):
            train_labels = labels[train_idx]
            if len(np.unique(train_labels)) < 2:
                warnings.warn("degenerate fold (single class) skipped")
                continue
            model = new_model(penalty).fit(features[train_idx], train_labels)
            scores.append(float(np.mean(model.predict(features[val_idx]) == labels[val_idx])))
        fold_accuracies[penalty] = float(np.mean(scores)) if scores else np.nan
    best_penalty = max(
        sorted(fold_accuracies, reverse=True), key=lambda c: np.nan_to_num(fold_accuracies[c])
    )

    if len(np.unique(labels)) < 2:
        # No signal to fit; fall back to the base rate.
        base = float(labels.mean())
        probs = np.full(n, base)
        return VanillaResult(
            predictions=(probs > 0.5).astype(np.int8),
            probabilities=probs,
            log_prob_intervals=None,
            penalty=best_penalty,
            fold_accuracies=fold_accuracies,
        )

    model = new_model(best_penalty).fit(features, labels)
    probs = model.predict_proba(features)[:, 1]
    predictions = (probs > 0.5).astype(np.int8)

    intervals = None
    if n_bootstrap > 0:
        rng = np.random.default_rng(seeds[1])
        draws = np.empty((n_bootstrap, n))
        kept = 0
        for _ in range(n_bootstrap):
            idx = rng.integers(0, n, size=n)
            if len(np.unique(labels[idx])) < 2:
                warnings.warn("degenerate bootstrap resample (single class) skipped")
                continue
            refit = new_model(best_penalty).fit(features[idx], labels[idx])
            draws[kept] = np.log(np.clip(refit.predict_proba(features)[:, 1], 1e-300, None))
            kept += 1
        if kept > 0:
            intervals = np.quantile(draws[:kept], [0.025, 0.975], axis=0).T

    return VanillaResult(
        predictions=predictions,
        probabilities=probs,
        log_prob_intervals=intervals,
        penalty=best_penalty,
        fold_accuracies=fold_accuracies,
    )


def _fixed_rates(dataset: Dataset, hyper: HyperParams, mode: str) -> Params:
    """Frozen parameter point used by the fixed-prior EM baselines."""
    k = dataset.k_symptoms
    sensitivity = hyper.sensitivity_prior.point_estimate
    false_positive = hyper.false_positive_prior.point_estimate
    if mode == "agnostic":
        return Params(
            sensitivity=sensitivity,
            false_positive_rate=false_positive,
            symptomatic_if_healthy=0.5,
            symptomatic_if_infected=0.5,
            symptom_rates_healthy=np.full(k, 0.5),
            symptom_rates_infected=np.full(k, 0.5),
            risk_weights=np.zeros(0),
        )
    if mode != "informed":
        raise ValueError(f"mode must be 'agnostic' or 'informed', got {mode!r}")

    arr = dataset.arrays
    observed = arr.test_observed
    t = arr.test[observed]
    s = arr.symptomatic[observed].astype(np.float64)
    x = arr.symptoms[observed]

    def stratum_mean(values: np.ndarray, rows: np.ndarray, fallback: float = 0.5):
        if rows.sum() == 0:
            return fallback
        return values[rows].mean(axis=0)

    pos = t == 1
    neg = ~pos
    p1 = float(stratum_mean(s, pos))
    p0 = float(stratum_mean(s, neg))
    sympt = s == 1
    s1 = np.atleast_1d(stratum_mean(x, pos & sympt))
    s0 = np.atleast_1d(stratum_mean(x, neg & sympt))
    if s1.shape[0] != k:
        s1 = np.full(k, 0.5)
    if s0.shape[0] != k:
        s0 = np.full(k, 0.5)
    lo, hi = EMPIRICAL_RATE_FLOOR, 1.0 - EMPIRICAL_RATE_FLOOR
    return Params(
        sensitivity=sensitivity,
        false_positive_rate=false_positive,
        symptomatic_if_healthy=float(np.clip(p0, lo, hi)),
        symptomatic_if_infected=float(np.clip(p1, lo, hi)),
        symptom_rates_healthy=np.clip(s0, lo, hi),
        symptom_rates_infected=np.clip(s1, lo, hi),
        risk_weights=np.zeros(0),
    )


def fixed_prior_em(
    dataset: Dataset,
    hyper: HyperParams,
    mode: str,
    intercept: bool = True,
    tol: float = 1e-8,
    max_iters: int = 100,
) -> np.ndarray:
    """Deterministic EM baseline with all rate parameters held fixed.

    The diagnosis weights are fit once, against the posterior computed with
    zero weights, and then frozen; the E-step is iterated to a fixed point
    of the posterior (which it reaches immediately, since nothing in it
    updates) and the imputed diagnosis is the thresholded posterior.
    """
    fixed = _fixed_rates(dataset, hyper, mode)
    arr = dataset.arrays
    symptomatic = arr.symptomatic.astype(np.float64)
    observed = arr.test_observed
    design = dataset.design_matrix(intercept)

    def posterior(weights: np.ndarray) -> np.ndarray:
        log_odds = estep.questionnaire_log_odds(
            fixed, symptomatic, arr.symptoms, design @ weights
        )
        log_odds[observed] += estep.test_log_odds(fixed, arr.test[observed])
        return expit(log_odds)

    w = posterior(np.zeros(design.shape[1]))
    weights = mstep.fit_beta(
        design,
        w,
        hyper.noise_scale,
        hyper.weight_scale,
        init=np.zeros(design.shape[1]),
    )

    w = posterior(weights)
    for _ in range(max_iters):
        w_next = posterior(weights)
        if float(np.abs(w_next - w).max()) < tol:
            w = w_next
            break
        w = w_next
    return (w > 0.5).astype(np.int8)


@dataclass(frozen=True)
class BenchResult:
    """Aggregated per-(cell, method) scores across replicates."""

    method: str
    sensitivity: float
    specificity: float
    n: int
    noise_scale: float
    mean_accuracy: float
    std_accuracy: float
    mean_gain: float
    std_gain: float
    mean_fit_seconds: float
    mean_iterations: float
    mean_iter_seconds: float
    n_replicates: int
    n_failures: int


def default_cell_hyper(cell: synth.GridCell) -> HyperParams:
    """Priors a study on this grid cell would plausibly hold.

    Test accuracy gets a moment-matched prior at its nominal value (a
    manufacturer-style validation claim); everything else is noninformative.
    """
    peak_s = cell.sensitivity * (1.0 - cell.sensitivity)
    peak_f = cell.specificity * (1.0 - cell.specificity)
    var_s = min(TEST_PRIOR_VARIANCE, 0.5 * peak_s)
    var_f = min(TEST_PRIOR_VARIANCE, 0.5 * peak_f)
    ni = noninformative_prior()
    return HyperParams(
        sensitivity_prior=moment_match_beta(cell.sensitivity, var_s),
        false_positive_prior=moment_match_beta(1.0 - cell.specificity, var_f),
        symptomatic_if_healthy_prior=ni,
        symptomatic_if_infected_prior=ni,
        symptom_priors_healthy=(ni,) * cell.k_symptoms,
        symptom_priors_infected=(ni,) * cell.k_symptoms,
        noise_scale=cell.noise_scale,
    )


KNOWN_METHODS = ("stem", "informed_em", "agnostic_em", "vanilla")


def _score_one(
    cell: synth.GridCell,
    methods: Sequence[str],
    engine_config: EngineConfig,
    hyper_builder: Callable[[synth.GridCell], HyperParams],
) -> Dict[str, Tuple]:
    """Generate one replicate and score every method on it."""
    rng = np.random.default_rng(cell.seed)
    true_params = synth.sample_true_params(
        cell.k_symptoms,
        cell.m_factors,
        cell.sensitivity,
        cell.specificity,
        rng,
        noise_scale=cell.noise_scale,
    )
    dataset, truth = synth.generate(true_params, cell.n, cell.k_symptoms, cell.m_factors, rng)
    test = dataset.arrays.test.astype(np.int8)
    hyper = hyper_builder(cell)

    out: Dict[str, Tuple] = {}
    for method in methods:
        start = time.perf_counter()
        iterations = np.nan
        iter_seconds = np.nan
        try:
            if method == "stem":
                config = replace(engine_config, seed=cell.seed)
                chain, summary = run_stem(dataset, hyper, config)
                predictions = (summary.subject_means > 0.5).astype(np.int8)
                iterations = chain.n_iters
                iter_seconds = float(chain.iter_seconds.mean())
            elif method == "informed_em":
                predictions = fixed_prior_em(dataset, hyper, "informed")
            elif method == "agnostic_em":
                predictions = fixed_prior_em(dataset, hyper, "agnostic")
            elif method == "vanilla":
                predictions = vanilla_classifier(dataset, seed=cell.seed, n_bootstrap=0).predictions
            else:
                raise ValueError(f"unknown method {method!r}")
            out[method] = (
                accuracy(predictions, truth),
                gain_over_t(predictions, test, truth),
                time.perf_counter() - start,
                iterations,
                iter_seconds,
                None,
            )
        except Exception as err:  # replicate failures are recorded, not fatal
            out[method] = (np.nan, np.nan, np.nan, np.nan, np.nan, str(err))
    return out


def _worker_count(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            warnings.warn(f"ignoring non-integer {THREADS_ENV_VAR}={env!r}")
    return 1


def run_grid(
    cells: Iterable[synth.GridCell],
    methods: Sequence[str] = ("stem",),
    engine_config: Optional[EngineConfig] = None,
    hyper_builder: Callable[[synth.GridCell], HyperParams] = default_cell_hyper,
    threads: Optional[int] = None,
) -> List[BenchResult]:
    """Generate, fit, and score every (cell, method, replicate) combination.

    Individual replicate failures are counted per cell without aborting it.
    Worker count comes from ``threads`` or the STEM_FUSE_THREADS environment
    variable; aggregation order is fixed by cell enumeration order either
    way.

    Returns:
        One :class:`BenchResult` per (cell, method), in first-seen cell order.
    """
    unknown = [m for m in methods if m not in KNOWN_METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {KNOWN_METHODS}")
    engine_config = engine_config or EngineConfig()
    rows = list(cells)
    n_jobs = _worker_count(threads)

    if n_jobs > 1:
        from joblib import Parallel, delayed

        scored = Parallel(n_jobs=n_jobs)(
            delayed(_score_one)(cell, methods, engine_config, hyper_builder) for cell in rows
        )
    else:
        scored = [_score_one(cell, methods, engine_config, hyper_builder) for cell in rows]

    grouped: Dict[Tuple, Dict[str, List[Tuple]]] = {}
    order: List[Tuple] = []
    for cell, result in zip(rows, scored):
        if cell.key not in grouped:
            grouped[cell.key] = {m: [] for m in methods}
            order.append(cell.key)
        for method in methods:
            grouped[cell.key][method].append(result[method])

    results = []
    for key in order:
        sens, spec, n, sigma = key
        for method in methods:
            rows_m = grouped[key][method]
            scores = np.array([r[0] for r in rows_m], dtype=np.float64)
            gains = np.array([r[1] for r in rows_m], dtype=np.float64)
            seconds = np.array([r[2] for r in rows_m], dtype=np.float64)
            iters = np.array([r[3] for r in rows_m], dtype=np.float64)
            iter_secs = np.array([r[4] for r in rows_m], dtype=np.float64)
            ok = ~np.isnan(scores)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                results.append(
                    BenchResult(
                        method=method,
                        sensitivity=sens,
                        specificity=spec,
                        n=n,
                        noise_scale=sigma,
                        mean_accuracy=float(np.nanmean(scores)) if ok.any() else np.nan,
                        std_accuracy=float(np.nanstd(scores)) if ok.any() else np.nan,
                        mean_gain=float(np.nanmean(gains)) if ok.any() else np.nan,
                        std_gain=float(np.nanstd(gains)) if ok.any() else np.nan,
                        mean_fit_seconds=float(np.nanmean(seconds)) if ok.any() else np.nan,
                        mean_iterations=float(np.nanmean(iters)) if not np.isnan(iters).all() else np.nan,
                        mean_iter_seconds=float(np.nanmean(iter_secs))
                        if not np.isnan(iter_secs).all()
                        else np.nan,
                        n_replicates=len(rows_m),
                        n_failures=int((~ok).sum()),
                    )
                )
    return results
