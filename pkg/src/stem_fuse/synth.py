"""Ground-truth-labeled synthetic data from the exact generative model.

Draw order per dataset is fixed (risk factors, log-odds noise, diagnosis,
symptomaticity, symptoms, test) so a seeded generator reproduces a dataset
exactly.
"""

from dataclasses import dataclass
from itertools import product
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .model import Dataset, Params, SubjectRecord

# Axes mirrored by the default experiment grid.
DEFAULT_ACCURACY_AXIS = (0.6, 0.7, 0.8, 0.93, 0.99)
DEFAULT_N = (300,)
DEFAULT_NOISE_SCALES = (0.5,)
DEFAULT_K_SYMPTOMS = 14
DEFAULT_M_FACTORS = 2

# Ranges for randomly drawn true rate parameters. Chosen so the
# questionnaire carries a strong but imperfect signal: symptom prevalences
# separate the classes clearly while overlapping enough that single
# symptoms never reveal the diagnosis.
SYMPTOMATIC_HEALTHY_RANGE = (0.10, 0.30)
SYMPTOMATIC_INFECTED_RANGE = (0.60, 0.90)
SYMPTOM_HEALTHY_RANGE = (0.05, 0.30)
SYMPTOM_INFECTED_RANGE = (0.30, 0.80)
RISK_WEIGHT_SCALE = 1.0


@dataclass(frozen=True)
class TrueParams(Params):
    """Generating parameter values, plus the log-odds noise scale."""

    noise_scale: float = 0.5


@dataclass(frozen=True)
class GridCell:
    """One generation config: a grid point plus its replicate index and seed."""

    sensitivity: float
    specificity: float
    n: int
    noise_scale: float
    replicate: int
    seed: int
    k_symptoms: int = DEFAULT_K_SYMPTOMS
    m_factors: int = DEFAULT_M_FACTORS

    @property
    def key(self) -> Tuple[float, float, int, float]:
        return (self.sensitivity, self.specificity, self.n, self.noise_scale)


def sample_true_params(
    k_symptoms: int,
    m_factors: int,
    sensitivity: float,
    specificity: float,
    rng: np.random.Generator,
    noise_scale: float = 0.5,
    intercept: bool = True,
) -> TrueParams:
    """Draw one set of true parameters at a fixed test accuracy pair.

    Rate parameters are drawn uniformly from the module-level ranges; risk
    weights are standard normal (intercept fixed at zero, keeping prevalence
    centered near one half).
    """
    weights = rng.standard_normal(m_factors) * RISK_WEIGHT_SCALE
    if intercept:
        weights = np.concatenate([[0.0], weights])
    return TrueParams(
        sensitivity=sensitivity,
        false_positive_rate=1.0 - specificity,
        symptomatic_if_healthy=rng.uniform(*SYMPTOMATIC_HEALTHY_RANGE),
        symptomatic_if_infected=rng.uniform(*SYMPTOMATIC_INFECTED_RANGE),
        symptom_rates_healthy=rng.uniform(*SYMPTOM_HEALTHY_RANGE, size=k_symptoms),
        symptom_rates_infected=rng.uniform(*SYMPTOM_INFECTED_RANGE, size=k_symptoms),
        risk_weights=weights,
        noise_scale=noise_scale,
    )


def generate(
    true_params: TrueParams,
    n: int,
    k_symptoms: int,
    m_factors: int,
    rng: np.random.Generator,
) -> Tuple[Dataset, np.ndarray]:
    """Sample a dataset of ``n`` subjects plus the hidden diagnoses.

    Per subject: risk factors are i.i.d. standard normal; the diagnosis is
    Bernoulli of the logistic of (risk score + Gaussian log-odds noise);
    symptomaticity and the test follow their diagnosis-conditional rates;
    symptoms follow their rates only when symptomatic, else are zero.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if true_params.k_symptoms != k_symptoms:
        raise ValueError("k_symptoms does not match true_params")
    expected_m = true_params.risk_weights.shape[0]
    if expected_m not in (m_factors, m_factors + 1):
        raise ValueError("m_factors does not match true_params risk weights")

    risks = rng.standard_normal((n, m_factors))
    noise = rng.normal(0.0, true_params.noise_scale, size=n)
    if expected_m == m_factors + 1:
        score = true_params.risk_weights[0] + risks @ true_params.risk_weights[1:]
    else:
        score = risks @ true_params.risk_weights
    diagnosis = (rng.random(n) < expit(score + noise)).astype(np.int8)

    p_sym = np.where(
        diagnosis == 1,
        true_params.symptomatic_if_infected,
        true_params.symptomatic_if_healthy,
    )
    symptomatic = (rng.random(n) < p_sym).astype(np.int8)

    rates = np.where(
        (diagnosis == 1)[:, None],
        true_params.symptom_rates_infected[None, :],
        true_params.symptom_rates_healthy[None, :],
    )
    symptoms = (rng.random((n, k_symptoms)) < rates) & (symptomatic == 1)[:, None]
    symptoms = symptoms.astype(np.int8)

    p_test = np.where(
        diagnosis == 1, true_params.sensitivity, true_params.false_positive_rate
    )
    test = (rng.random(n) < p_test).astype(np.int8)

    width = max(5, len(str(n)))
    records = [
        SubjectRecord(
            id=f"s{i:0{width}d}",
            test_result=int(test[i]),
            symptomatic=int(symptomatic[i]),
            symptoms=symptoms[i],
            risk_factors=risks[i],
        )
        for i in range(n)
    ]
    return Dataset(tuple(records), k_symptoms, m_factors), diagnosis


def mask_tests(dataset: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    """Return a copy with a random fraction of test outcomes removed."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = len(dataset)
    n_masked = int(round(fraction * n))
    masked = set(rng.choice(n, size=n_masked, replace=False).tolist())
    records = [
        SubjectRecord(
            id=r.id,
            test_result=None if i in masked else r.test_result,
            symptomatic=r.symptomatic,
            symptoms=r.symptoms,
            risk_factors=r.risk_factors,
        )
        for i, r in enumerate(dataset.records)
    ]
    return Dataset(tuple(records), dataset.k_symptoms, dataset.m_factors)


def _cell_seed(master_seed: int, index: int) -> int:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def grid_spec(
    sens_list: Sequence[float] = DEFAULT_ACCURACY_AXIS,
    spec_list: Sequence[float] = DEFAULT_ACCURACY_AXIS,
    n_list: Sequence[int] = DEFAULT_N,
    sigma_list: Sequence[float] = DEFAULT_NOISE_SCALES,
    replicates: int = 100,
    master_seed: int = 0,
    k_symptoms: int = DEFAULT_K_SYMPTOMS,
    m_factors: int = DEFAULT_M_FACTORS,
) -> Iterator[GridCell]:
    """Cartesian grid of generation configs with per-replicate seeds.

    Every (sensitivity, specificity, n, noise scale, replicate) combination
    receives a distinct deterministic seed derived from ``master_seed``, so
    grid rows can be generated independently and in any order.
    """
    axes = [tuple(sens_list), tuple(spec_list), tuple(n_list), tuple(sigma_list)]
    if any(len(axis) == 0 for axis in axes) or replicates < 1:
        raise ValueError("grid axes must be non-empty and replicates >= 1")
    index = 0
    for sens, spec, n, sigma in product(*axes):
        for rep in range(replicates):
            yield GridCell(
                sensitivity=sens,
                specificity=spec,
                n=n,
                noise_scale=sigma,
                replicate=rep,
                seed=_cell_seed(master_seed, index),
                k_symptoms=k_symptoms,
                m_factors=m_factors,
            )
            index += 1
