"""Maximization step: closed-form conjugate rate updates and the penalized
logistic weight fit.

Each rate family update is the interior mode of its Beta posterior when that
mode exists, falling back to the posterior mean otherwise. The risk-weight
fit minimizes a penalized loss (squared by default, Bernoulli optionally)
by damped Newton iterations with a gradient-descent fallback.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import lapack
from scipy.special import expit, log_expit

from .model import BetaPrior, Dataset, HyperParams, Params, clamp_probability
from .estep import Imputations

NEWTON_MAX_ITERS = 100
NEWTON_GRAD_TOL = 1e-8
BACKTRACK_FACTOR = 0.5
ARMIJO_C = 1e-4


class BetaFitError(RuntimeError):
    """Raised when the weight fit fails to reach the gradient tolerance.

    Carries the best iterate found and the gradient norm there.
    """

    def __init__(self, best_weights: np.ndarray, gradient_norm: float, objective: float):
        self.best_weights = np.asarray(best_weights, dtype=np.float64)
        self.gradient_norm = float(gradient_norm)
        self.objective = float(objective)
        super().__init__(
            f"weight fit did not converge: gradient norm {gradient_norm:.3e} "
            f"after {NEWTON_MAX_ITERS} iterations (objective {objective:.6g})"
        )


@dataclass(frozen=True)
class SufficientStats:
    """Pseudo-counts per rate family plus the weight-fit design and labels.

    Each count pair is (successes a, trials b) entering the Beta posterior.
    ``imputed_test_counts``/``imputed_false_positive_counts`` are None when
    no separate accuracy class is active.
    """

    test_counts: Tuple[int, int]
    false_positive_counts: Tuple[int, int]
    symptomatic_healthy_counts: Tuple[int, int]
    symptomatic_infected_counts: Tuple[int, int]
    symptom_healthy_counts: np.ndarray
    symptom_infected_counts: np.ndarray
    imputed_test_counts: Optional[Tuple[int, int]]
    imputed_false_positive_counts: Optional[Tuple[int, int]]
    design: np.ndarray
    labels: np.ndarray


def _pair(a: float, b: float) -> Tuple[int, int]:
    return int(round(a)), int(round(b))


def accumulate_stats(
    dataset: Dataset, imputations: Imputations, intercept: bool = True
) -> SufficientStats:
    """Reduce one iteration's imputations to exact per-family counts.

    Test-accuracy counts only cover rows that carry a test value; when the
    separate accuracy class is active, rows whose test was imputed are routed
    to the imputed family instead of the observed one. Symptom counts only
    accumulate over symptomatic subjects.
    """
    arr = dataset.arrays
    d = imputations.diagnoses.astype(np.float64)
    s = arr.symptomatic_float
    x = arr.symptoms
    # Every count below is a sum of 0/1-valued float64 terms, hence an exact
    # integer: complements and totals may be derived by subtraction instead
    # of fresh reductions without changing any result.
    d_comp = 1.0 - d
    n_infected = float(d.sum())
    n_healthy = float(d.shape[0]) - n_infected

    has_test = imputations.test >= 0
    if imputations.separate_imputed_class:
        observed_rows = has_test & ~imputations.test_imputed
        imputed_rows = has_test & imputations.test_imputed
    else:
        observed_rows = has_test
        imputed_rows = None

    def test_family(rows: np.ndarray) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        if rows.all():
            t = imputations.test.astype(np.float64)
            return (
                _pair(float(t @ d), n_infected),
                _pair(float(t @ d_comp), n_healthy),
            )
        t = imputations.test[rows].astype(np.float64)
        dr = d[rows]
        cr = d_comp[rows]
        pos = _pair(float(t @ dr), float(dr.sum()))
        neg = _pair(float(t @ cr), float(cr.sum()))
        return pos, neg

    test_counts, false_positive_counts = test_family(observed_rows)
    imputed_test_counts = imputed_false_positive_counts = None
    if imputations.separate_imputed_class:
        imputed_test_counts, imputed_false_positive_counts = test_family(imputed_rows)

    # Per-symptom counts, restricted to symptomatic subjects.
    w1 = s * d
    w0 = s - w1
    w1_total = float(w1.sum())
    w0_total = float(s.sum()) - w1_total
    symptomatic_infected = _pair(w1_total, n_infected)
    symptomatic_healthy = _pair(w0_total, n_healthy)

    infected = np.column_stack([x.T @ w1, np.full(x.shape[1], w1_total)])
    healthy = np.column_stack([x.T @ w0, np.full(x.shape[1], w0_total)])

    return SufficientStats(
        test_counts=test_counts,
        false_positive_counts=false_positive_counts,
        symptomatic_healthy_counts=symptomatic_healthy,
        symptomatic_infected_counts=symptomatic_infected,
        symptom_healthy_counts=healthy.astype(np.int64),
        symptom_infected_counts=infected.astype(np.int64),
        imputed_test_counts=imputed_test_counts,
        imputed_false_positive_counts=imputed_false_positive_counts,
        design=dataset.design_matrix(intercept),
        labels=d,
    )


def update_rate(counts: Tuple[int, int], prior: BetaPrior) -> float:
    """Closed-form rate update from counts (a successes of b trials).

    Returns the interior mode of Beta(a + alpha, b - a + beta) when both
    posterior shapes exceed one, otherwise that posterior's mean; the result
    is clamped into the open unit interval.
    """
    a, b = counts
    if a < 0 or b < a:
        raise ValueError(f"counts must satisfy 0 <= a <= b, got {counts}")
    post_alpha = a + prior.alpha
    post_beta = (b - a) + prior.beta
    if post_alpha > 1.0 and post_beta > 1.0:
        value = (post_alpha - 1.0) / (post_alpha + post_beta - 2.0)
    else:
        value = post_alpha / (post_alpha + post_beta)
    return float(clamp_probability(value))


def _update_rate_vectors(
    counts: np.ndarray, prior_alphas: np.ndarray, prior_betas: np.ndarray
) -> np.ndarray:
    """Vectorized ``update_rate`` across one family's (successes, trials) rows."""
    a = counts[:, 0].astype(np.float64)
    b = counts[:, 1].astype(np.float64)
    if np.any(a < 0.0) or np.any(b < a):
        raise ValueError("counts must satisfy 0 <= a <= b in every row")
    post_alpha = a + prior_alphas
    post_beta = (b - a) + prior_betas
    interior = (post_alpha > 1.0) & (post_beta > 1.0)
    denom = np.where(interior, post_alpha + post_beta - 2.0, 1.0)
    value = np.where(
        interior, (post_alpha - 1.0) / denom, post_alpha / (post_alpha + post_beta)
    )
    return clamp_probability(value)




def _positive_definite(a: np.ndarray) -> bool:
    """Positive-definiteness of a symmetric matrix.

    Uses the leading-principal-minor test for the tiny systems the weight
    fit produces (a handful of risk factors), avoiding a LAPACK round trip
    on every Newton step; larger matrices fall back to a Cholesky attempt.
    """
    p = a.shape[0]
    if p <= 3:
        it = a.ravel().tolist()
        if p == 1:
            return it[0] > 0.0
        if p == 2:
            return it[0] > 0.0 and it[0] * it[3] - it[1] * it[2] > 0.0
        a00, a01, a02, _, a11, a12, _, _, a22 = it
        if a00 <= 0.0 or a00 * a11 - a01 * a01 <= 0.0:
            return False
        return (
            a00 * (a11 * a22 - a12 * a12)
            - a01 * (a01 * a22 - a12 * a02)
            + a02 * (a01 * a12 - a11 * a02)
        ) > 0.0
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False


@lru_cache(maxsize=16)
def _identity(p: int) -> np.ndarray:
    eye = np.eye(p)
    eye.flags.writeable = False
    return eye


def _penalized_loss(loss: str, design, labels, noise_scale, weight_scale):
    """Split evaluation closures for the weight fit.

    ``evaluate`` returns the objective value together with a cache of its
    forward pass; ``gradient`` consumes that cache (so the accepted line
    search point is never recomputed) and ``hessian`` is assembled only on
    steps that actually take one.
    """
    inv_var = 1.0 / (noise_scale * noise_scale)
    inv_prior = 1.0 / (weight_scale * weight_scale)
    neg_inv_var = -inv_var
    eye = _identity(design.shape[1])

    if loss == "squared":

        def evaluate(w):
            g = expit(design @ w)
            resid = labels - g
            f = 0.5 * inv_var * float(resid @ resid) + 0.5 * inv_prior * float(w @ w)
            return f, (g, resid)

        def gradient(w, cache):
            g, resid = cache
            gp = g * (1.0 - g)
            return neg_inv_var * (design.T @ (resid * gp)) + inv_prior * w, gp

        def hessian(cache, gp):
            g, resid = cache
            # Exact curvature gives quadratic terminal convergence but can
            # be indefinite in high-residual regions; fall back to the
            # positive-definite Gauss-Newton form (residual term dropped)
            # whenever the exact matrix is not positive definite.
            curv = gp * (gp - resid * (1.0 - 2.0 * g))
            hess = inv_var * (design.T @ (design * curv[:, None])) + inv_prior * eye
            if not _positive_definite(hess):
                curv = gp * gp
                hess = inv_var * (design.T @ (design * curv[:, None])) + inv_prior * eye
            return hess

    elif loss == "bernoulli":

        def evaluate(w):
            z = design @ w
            ll = labels @ log_expit(z) + (1.0 - labels) @ log_expit(-z)
            return -float(ll) + 0.5 * inv_prior * float(w @ w), expit(z)

        def gradient(w, cache):
            return design.T @ (cache - labels) + inv_prior * w, None

        def hessian(cache, _unused):
            gp = cache * (1.0 - cache)
            return design.T @ (design * gp[:, None]) + inv_prior * eye

    else:
        raise ValueError(f"unknown loss {loss!r}; expected 'squared' or 'bernoulli'")

    return evaluate, gradient, hessian


def _newton_descend(evaluate, gradient, hessian, start, max_iters, grad_tol):
    """Damped Newton from one start; returns (weights, objective, grad_norm, converged)."""
    w = np.array(start, dtype=np.float64)
    f, cache = evaluate(w)
    for _ in range(max_iters):
        grad, curv_cache = gradient(w, cache)
        gnorm = math.sqrt(float(grad @ grad))
        if gnorm < grad_tol:
            return w, f, gnorm, True
        hess = hessian(cache, curv_cache)
        _, _, solution, singular = lapack.dgesv(hess, grad)
        direction = -solution if singular == 0 else -grad
        slope = float(grad @ direction)
        if slope >= 0.0:
            # Indefinite Hessian made Newton an ascent direction.
            direction = -grad
            slope = -gnorm * gnorm
        noise = 1e-14 * (1.0 + abs(f))
        if abs(slope) <= noise:
            # Predicted decrease below the float64 resolution of the
            # objective: the line search can no longer arbitrate. A tiny
            # Newton step still contracts the gradient, so take it ungated;
            # anything larger means the iterate cannot improve further.
            if np.linalg.norm(direction) <= 1e-6 * (1.0 + np.linalg.norm(w)):
                w = w + direction
                f, cache = evaluate(w)
                continue
            return w, f, gnorm, gnorm < grad_tol
        step = 1.0
        while step > 1e-14:
            candidate = w + step * direction
            f_new, cache_new = evaluate(candidate)
            if f_new <= f + ARMIJO_C * step * slope:
                break
            step *= BACKTRACK_FACTOR
        else:
            # Backtracking exhausted without decrease.
            return w, f, gnorm, gnorm < grad_tol
        w, f, cache = candidate, f_new, cache_new
    grad, _ = gradient(w, cache)
    gnorm = math.sqrt(float(grad @ grad))
    return w, f, gnorm, gnorm < grad_tol


def fit_beta(
    design: np.ndarray,
    labels: np.ndarray,
    noise_scale: float,
    weight_scale: float,
    init: np.ndarray,
    loss: str = "squared",
    max_iters: int = NEWTON_MAX_ITERS,
    grad_tol: float = NEWTON_GRAD_TOL,
    zero_start: bool = True,
) -> np.ndarray:
    """Minimize the penalized diagnosis-fit loss over the risk weights.

    Args:
        design: (n, P) risk design matrix (intercept column included by the
            caller when wanted).
        labels: (n,) imputed diagnoses, may be fractional in [0, 1].
        noise_scale: residual scale of the squared loss (ignored by the
            Bernoulli loss).
        weight_scale: standard deviation of the Gaussian penalty on each
            weight.
        init: starting weight vector.
        loss: "squared" (default) or "bernoulli".
        zero_start: also descend from the origin and keep the better
            stationary point; guards against a poor warm start.

    Returns:
        A stationary point: gradient norm below ``grad_tol``, objective no
        larger than at ``init``.

    Raises:
        BetaFitError: no start converged; carries the best iterate found.
    """
    design = np.asarray(design, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    init = np.asarray(init, dtype=np.float64)
    if design.shape[0] != labels.shape[0]:
        raise ValueError("design rows and labels must align")
    if not (noise_scale > 0 and weight_scale > 0):
        raise ValueError("noise_scale and weight_scale must be positive")

    evaluate, gradient, hessian = _penalized_loss(loss, design, labels, noise_scale, weight_scale)

    starts = [init]
    if zero_start and np.any(init != 0.0):
        starts.append(np.zeros_like(init))

    best = None
    best_converged = None
    for start in starts:
        result = _newton_descend(evaluate, gradient, hessian, start, max_iters, grad_tol)
        if best is None or result[1] < best[1]:
            best = result
        if result[3] and (best_converged is None or result[1] < best_converged[1]):
            best_converged = result

    if best_converged is None:
        raise BetaFitError(best[0], best[2], best[1])
    return best_converged[0]


def m_step(
    dataset: Dataset,
    imputations: Imputations,
    hyper: HyperParams,
    current: Params,
    beta_loss: str = "squared",
    zero_start: bool = True,
) -> Params:
    """One full maximization: every rate family plus the weight fit.

    The weight fit is warm-started at the current weights. The imputed-test
    accuracy class is updated only when present on ``current``.
    """
    intercept = current.risk_weights.shape[0] == dataset.m_factors + 1
    stats = accumulate_stats(dataset, imputations, intercept=intercept)

    # All Beta-family updates run as one vectorized pass; rows follow the
    # layout of HyperParams.rate_prior_vectors (four scalar families, then
    # per-symptom healthy, then per-symptom infected).
    k = stats.symptom_healthy_counts.shape[0]
    all_counts = np.concatenate(
        [
            np.array(
                [
                    stats.test_counts,
                    stats.false_positive_counts,
                    stats.symptomatic_healthy_counts,
                    stats.symptomatic_infected_counts,
                ],
                dtype=np.int64,
            ),
            stats.symptom_healthy_counts,
            stats.symptom_infected_counts,
        ]
    )
    rates = _update_rate_vectors(all_counts, *hyper.rate_prior_vectors)
    symptom_healthy = rates[4 : 4 + k]
    symptom_infected = rates[4 + k :]

    imputed_sensitivity = imputed_false_positive = None
    if current.has_imputed_class:
        imputed_counts = stats.imputed_test_counts or (0, 0)
        imputed_fp_counts = stats.imputed_false_positive_counts or (0, 0)
        imputed_sensitivity = update_rate(imputed_counts, hyper.imputed_sensitivity_prior)
        imputed_false_positive = update_rate(
            imputed_fp_counts, hyper.imputed_false_positive_prior
        )

    weights = fit_beta(
        stats.design,
        stats.labels,
        hyper.noise_scale,
        hyper.weight_scale,
        init=current.risk_weights,
        loss=beta_loss,
        zero_start=zero_start,
    )

    return Params(
        sensitivity=float(rates[0]),
        false_positive_rate=float(rates[1]),
        symptomatic_if_healthy=float(rates[2]),
        symptomatic_if_infected=float(rates[3]),
        symptom_rates_healthy=symptom_healthy,
        symptom_rates_infected=symptom_infected,
        risk_weights=weights,
        imputed_sensitivity=imputed_sensitivity,
        imputed_false_positive_rate=imputed_false_positive,
    )
