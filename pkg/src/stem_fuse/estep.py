"""Exact per-subject posteriors of the hidden diagnosis, and stochastic draws.

All products of probabilities are evaluated as sums of logs; with a
fourteen-symptom panel the multiplicative forms underflow.

The array kernels (`questionnaire_log_odds`, `test_log_odds`,
`joint_cell_log_weights`) operate on whole datasets at once; the
record-level operations delegate to them with singleton arrays so the two
paths cannot drift apart.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit, logsumexp

from .model import Params, SubjectRecord, clamp_probability, linear_predictor

# Cell order used everywhere a joint (diagnosis, test) posterior is flattened.
CELL_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class DiagnosisPosterior:
    """Posterior probability that the subject is truly positive."""

    p1: float

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise ValueError(f"posterior probability out of range: {self.p1}")


@dataclass(frozen=True)
class JointDTPosterior:
    """Joint posterior over (diagnosis, test outcome) for a missing test.

    ``cells[d, t]`` is the posterior mass of diagnosis ``d`` and test
    outcome ``t``; the four cells sum to one.
    """

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.float64).reshape(2, 2)
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        if (cells < 0).any() or abs(cells.sum() - 1.0) > 1e-12:
            raise ValueError("joint posterior cells must be nonnegative and sum to 1")

    def marginal_diagnosis(self) -> DiagnosisPosterior:
        return DiagnosisPosterior(float(self.cells[1].sum()))


def test_log_odds(p: Params, test: np.ndarray) -> np.ndarray:
    """Log evidence ratio contributed by observed test outcomes."""
    x = float(clamp_probability(p.sensitivity))
    y = float(clamp_probability(p.false_positive_rate))
    test = np.asarray(test, dtype=np.float64)
    return np.where(
        test == 1.0, np.log(x) - np.log(y), np.log1p(-x) - np.log1p(-y)
    )


def questionnaire_log_odds(
    p: Params,
    symptomatic: np.ndarray,
    symptoms: np.ndarray,
    risk_log_odds: np.ndarray,
) -> np.ndarray:
    """Posterior log-odds from symptomaticity, symptoms, and risk factors only.

    Args:
        p: current parameters.
        symptomatic: (n,) 0/1 flags.
        symptoms: (n, K) 0/1 panel; rows with ``symptomatic == 0`` are all
            zero and contribute nothing beyond the symptomaticity factor.
        risk_log_odds: (n,) linear predictor from the risk factors.

    Returns:
        (n,) log posterior odds of infection, test factor excluded.
    """
    rates_infected = clamp_probability(p.symptom_rates_infected)
    rates_healthy = clamp_probability(p.symptom_rates_healthy)
    d_present = np.log(rates_infected) - np.log(rates_healthy)
    d_absent = np.log1p(-rates_infected) - np.log1p(-rates_healthy)

    p1 = float(clamp_probability(p.symptomatic_if_infected))
    p0 = float(clamp_probability(p.symptomatic_if_healthy))

    symptomatic = np.asarray(symptomatic, dtype=np.float64)
    symptoms = np.asarray(symptoms, dtype=np.float64)
    symptom_sum = symptoms @ (d_present - d_absent) + d_absent.sum()
    when_symptomatic = symptom_sum + np.log(p1) - np.log(p0)
    when_not = np.log1p(-p1) - np.log1p(-p0)
    return np.where(symptomatic == 1.0, when_symptomatic, when_not) + np.asarray(
        risk_log_odds, dtype=np.float64
    )


def _imputed_test_rates(p: Params) -> tuple:
    # The separate accuracy class governs imputed tests when present.
    if p.has_imputed_class:
        return p.imputed_sensitivity, p.imputed_false_positive_rate
    return p.sensitivity, p.false_positive_rate


def joint_cells_from_questionnaire(p: Params, questionnaire: np.ndarray) -> np.ndarray:
    """Cell log weights given precomputed questionnaire log-odds."""
    q = np.asarray(questionnaire, dtype=np.float64)
    xi, yi = _imputed_test_rates(p)
    xi = float(clamp_probability(xi))
    yi = float(clamp_probability(yi))
    out = np.empty((q.shape[0], 4))
    out[:, 0] = np.log1p(-yi)
    out[:, 1] = np.log(yi)
    out[:, 2] = np.log1p(-xi) + q
    out[:, 3] = np.log(xi) + q
    return out


def joint_cell_log_weights(
    p: Params,
    symptomatic: np.ndarray,
    symptoms: np.ndarray,
    risk_log_odds: np.ndarray,
) -> np.ndarray:
    """Unnormalized log weights of the four (diagnosis, test) cells.

    Returns:
        (n, 4) array ordered as :data:`CELL_ORDER`.
    """
    q = questionnaire_log_odds(p, symptomatic, symptoms, risk_log_odds)
    return joint_cells_from_questionnaire(p, q)


def _record_inputs(r: SubjectRecord, p: Params):
    z = linear_predictor(r.risk_factors, p.risk_weights)
    symptomatic = np.array([r.symptomatic], dtype=np.float64)
    symptoms = r.symptoms.astype(np.float64).reshape(1, -1)
    return symptomatic, symptoms, np.array([z])


def posterior_odds(r: SubjectRecord, p: Params) -> DiagnosisPosterior:
    """Exact posterior of the hidden diagnosis given all observations.

    The test outcome must be present; the full log-odds is the questionnaire
    log-odds plus the test evidence ratio.
    """
    if r.test_result is None:
        raise ValueError("posterior_odds requires an observed test outcome")
    symptomatic, symptoms, z = _record_inputs(r, p)
    log_odds = questionnaire_log_odds(p, symptomatic, symptoms, z) + test_log_odds(
        p, np.array([r.test_result], dtype=np.float64)
    )
    return DiagnosisPosterior(float(expit(log_odds[0])))


def posterior_odds_truncated(r: SubjectRecord, p: Params) -> DiagnosisPosterior:
    """Posterior of the diagnosis with the test factor removed."""
    symptomatic, symptoms, z = _record_inputs(r, p)
    log_odds = questionnaire_log_odds(p, symptomatic, symptoms, z)
    return DiagnosisPosterior(float(expit(log_odds[0])))


def joint_posterior_dt(r: SubjectRecord, p: Params) -> JointDTPosterior:
    """Joint posterior over (diagnosis, test) for a record with missing test.

    Marginalizing the result over the test outcome reproduces
    :func:`posterior_odds_truncated` exactly.
    """
    if r.test_result is not None:
        raise ValueError("joint_posterior_dt applies only when the test outcome is missing")
    symptomatic, symptoms, z = _record_inputs(r, p)
    logw = joint_cell_log_weights(p, symptomatic, symptoms, z)[0]
    cells = np.exp(logw - logsumexp(logw))
    cells /= cells.sum()
    return JointDTPosterior(cells.reshape(2, 2))


def sample_imputations(
    posteriors: Sequence[Union[DiagnosisPosterior, JointDTPosterior]],
    rng: np.random.Generator,
) -> list:
    """Draw one imputation per posterior, in order, from a seeded generator.

    Consumes exactly one uniform per posterior. A :class:`DiagnosisPosterior`
    yields an int diagnosis; a :class:`JointDTPosterior` yields a
    ``(diagnosis, test)`` pair drawn from the four cells.
    """
    u = rng.random(len(posteriors))
    draws = []
    for ui, post in zip(u, posteriors):
        if isinstance(post, DiagnosisPosterior):
            draws.append(int(ui < post.p1))
        elif isinstance(post, JointDTPosterior):
            flat = np.cumsum(post.cells.reshape(-1))
            idx = int(np.searchsorted(flat, ui, side="right"))
            idx = min(idx, 3)
            draws.append(CELL_ORDER[idx])
        else:
            raise TypeError(f"unsupported posterior type: {type(post).__name__}")
    return draws


@dataclass(frozen=True)
class Imputations:
    """One iteration's imputed values, aligned with the dataset rows.

    ``test`` carries the observed outcome where present and the imputed one
    where drawn; -1 marks rows with no test value at all (truncated
    handling). ``test_imputed`` flags the imputed rows, and
    ``separate_imputed_class`` routes their counts to the dedicated
    accuracy class.
    """

    diagnoses: np.ndarray
    test: np.ndarray
    test_imputed: np.ndarray
    separate_imputed_class: bool = True

    def __post_init__(self):
        d = np.asarray(self.diagnoses, dtype=np.int8)
        t = np.asarray(self.test, dtype=np.int8)
        m = np.asarray(self.test_imputed, dtype=bool)
        for a in (d, t, m):
            a.flags.writeable = False
        object.__setattr__(self, "diagnoses", d)
        object.__setattr__(self, "test", t)
        object.__setattr__(self, "test_imputed", m)
        if not (len(d) == len(t) == len(m)):
            raise ValueError("imputation arrays must share one length")
