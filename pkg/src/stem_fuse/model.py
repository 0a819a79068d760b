"""Domain types, validation, prior construction, and the joint log-likelihood.

The model fuses three evidence sources about a hidden binary diagnosis:
a noisy binary test, a panel of binary symptom indicators gated by an
overall symptomaticity switch, and continuous per-subject risk factors
entering through a logistic link.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_expit

# Probabilities are clamped into this open interval before any log so a
# conflicting observation stays detectable without producing NaN.
CLAMP_EPS = 1e-12


def clamp_probability(p):
    """Clamp a probability (scalar or array) to [CLAMP_EPS, 1 - CLAMP_EPS]."""
    if isinstance(p, (float, int)):
        # Scalar fast path: this sits on the per-iteration rate-update path,
        # where numpy dispatch overhead would dominate the arithmetic.
        return min(max(p, CLAMP_EPS), 1.0 - CLAMP_EPS)
    return np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)


@dataclass(frozen=True)
class BetaPrior:
    """Beta(alpha, beta) uncertainty over a single probability."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta shapes must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))

    @property
    def mode(self) -> Optional[float]:
        """Interior mode, or None when either shape is <= 1."""
        if self.alpha > 1.0 and self.beta > 1.0:
            return (self.alpha - 1.0) / (self.alpha + self.beta - 2.0)
        return None

    @property
    def point_estimate(self) -> float:
        """Mode when defined, otherwise the mean."""
        m = self.mode
        return m if m is not None else self.mean


def noninformative_prior() -> BetaPrior:
    """Default prior used when no external information exists."""
    return BetaPrior(0.5, 0.5)


def moment_match_beta(mean: float, variance: float) -> BetaPrior:
    """Build the Beta prior with the given first two moments.

    Args:
        mean: target mean, strictly inside (0, 1).
        variance: target variance; must be < mean * (1 - mean).

    Returns:
        BetaPrior whose mean and variance reproduce the inputs.

    Raises:
        ValueError: if the moment pair is infeasible for a Beta distribution.
    """
    if not 0.0 < mean < 1.0:
        raise ValueError(f"mean must lie strictly inside (0, 1), got {mean}")
    peak = mean * (1.0 - mean)
    if not 0.0 < variance < peak:
        raise ValueError(
            f"infeasible moments: need 0 < variance < mean*(1-mean) = {peak}, got {variance}"
        )
    c = peak / variance - 1.0
    return BetaPrior(mean * c, (1.0 - mean) * c)


@dataclass(frozen=True)
class HyperParams:
    """Fixed hyper-parameters: one Beta prior per rate family plus two scales.

    ``noise_scale`` is the log-odds noise used at generation time and as the
    residual scale of the squared-loss weight fit; it is never estimated.
    ``weight_scale`` is the standard deviation of the Gaussian prior on each
    risk weight.
    """

    sensitivity_prior: BetaPrior
    false_positive_prior: BetaPrior
    symptomatic_if_healthy_prior: BetaPrior
    symptomatic_if_infected_prior: BetaPrior
    symptom_priors_healthy: tuple
    symptom_priors_infected: tuple
    weight_scale: float = 10.0
    noise_scale: float = 0.5
    imputed_sensitivity_prior: BetaPrior = field(default_factory=lambda: BetaPrior(2.0, 2.0))
    imputed_false_positive_prior: BetaPrior = field(default_factory=lambda: BetaPrior(2.0, 2.0))

    def __post_init__(self):
        object.__setattr__(self, "symptom_priors_healthy", tuple(self.symptom_priors_healthy))
        object.__setattr__(self, "symptom_priors_infected", tuple(self.symptom_priors_infected))
        if len(self.symptom_priors_healthy) != len(self.symptom_priors_infected):
            raise ValueError("symptom prior vectors must share one length")
        if not (self.weight_scale > 0 and self.noise_scale > 0):
            raise ValueError("weight_scale and noise_scale must be positive")

    @property
    def k_symptoms(self) -> int:
        return len(self.symptom_priors_healthy)

    @cached_property
    def rate_prior_vectors(self) -> Tuple[np.ndarray, np.ndarray]:
        """Prior (alpha, beta) vectors for every rate family, in M-step order.

        Layout: the four scalar rate families first (sensitivity, false
        positive, symptomatic-if-healthy, symptomatic-if-infected), then the
        per-symptom priors for healthy subjects, then for infected subjects,
        so all Beta updates can run as one vectorized pass.
        """
        priors = [
            self.sensitivity_prior,
            self.false_positive_prior,
            self.symptomatic_if_healthy_prior,
            self.symptomatic_if_infected_prior,
            *self.symptom_priors_healthy,
            *self.symptom_priors_infected,
        ]
        alphas = _frozen_array([p.alpha for p in priors], np.float64)
        betas = _frozen_array([p.beta for p in priors], np.float64)
        return alphas, betas

    @classmethod
    def noninformative(cls, k_symptoms: int, **overrides) -> "HyperParams":
        """All-noninformative priors for a panel of ``k_symptoms`` symptoms."""
        ni = noninformative_prior()
        base = dict(
            sensitivity_prior=ni,
            false_positive_prior=ni,
            symptomatic_if_healthy_prior=ni,
            symptomatic_if_infected_prior=ni,
            symptom_priors_healthy=(ni,) * k_symptoms,
            symptom_priors_infected=(ni,) * k_symptoms,
        )
        base.update(overrides)
        return cls(**base)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Params:
    """Learnable parameter set for one fit.

    ``imputed_sensitivity`` / ``imputed_false_positive_rate`` form the
    separate accuracy class for test outcomes that were imputed rather than
    observed; they are None unless missing-test handling is active.
    """

    sensitivity: float
    false_positive_rate: float
    symptomatic_if_healthy: float
    symptomatic_if_infected: float
    symptom_rates_healthy: np.ndarray
    symptom_rates_infected: np.ndarray
    risk_weights: np.ndarray
    imputed_sensitivity: Optional[float] = None
    imputed_false_positive_rate: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(
            self, "symptom_rates_healthy", _frozen_array(self.symptom_rates_healthy, np.float64)
        )
        object.__setattr__(
            self, "symptom_rates_infected", _frozen_array(self.symptom_rates_infected, np.float64)
        )
        object.__setattr__(self, "risk_weights", _frozen_array(self.risk_weights, np.float64))
        if self.symptom_rates_healthy.shape != self.symptom_rates_infected.shape:
            raise ValueError("symptom rate vectors must share one length")
        probs = [
            self.sensitivity,
            self.false_positive_rate,
            self.symptomatic_if_healthy,
            self.symptomatic_if_infected,
            *self.symptom_rates_healthy,
            *self.symptom_rates_infected,
        ]
        if self.imputed_sensitivity is not None:
            probs.append(self.imputed_sensitivity)
        if self.imputed_false_positive_rate is not None:
            probs.append(self.imputed_false_positive_rate)
        if not all(0.0 < p < 1.0 for p in probs):
            raise ValueError("every probability must lie strictly inside (0, 1)")

    @property
    def k_symptoms(self) -> int:
        return self.symptom_rates_healthy.shape[0]

    @property
    def has_imputed_class(self) -> bool:
        return self.imputed_sensitivity is not None

    @cached_property
    def _vector(self) -> np.ndarray:
        parts = [
            [
                self.sensitivity,
                self.false_positive_rate,
                self.symptomatic_if_healthy,
                self.symptomatic_if_infected,
            ],
            self.symptom_rates_healthy,
            self.symptom_rates_infected,
        ]
        if self.has_imputed_class:
            parts.append([self.imputed_sensitivity, self.imputed_false_positive_rate])
        parts.append(self.risk_weights)
        out = np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])
        out.flags.writeable = False
        return out

    def as_vector(self) -> np.ndarray:
        """Flatten to one read-only vector (rates first, risk weights last)."""
        return self._vector

    @classmethod
    def from_vector(cls, vec: np.ndarray, k_symptoms: int, has_imputed: bool) -> "Params":
        """Inverse of :meth:`as_vector`; remaining entries become risk weights."""
        vec = np.asarray(vec, dtype=np.float64)
        i = 4 + 2 * k_symptoms
        imputed = (None, None)
        if has_imputed:
            imputed = (float(vec[i]), float(vec[i + 1]))
            i += 2
        return cls(
            sensitivity=float(vec[0]),
            false_positive_rate=float(vec[1]),
            symptomatic_if_healthy=float(vec[2]),
            symptomatic_if_infected=float(vec[3]),
            symptom_rates_healthy=vec[4 : 4 + k_symptoms],
            symptom_rates_infected=vec[4 + k_symptoms : 4 + 2 * k_symptoms],
            risk_weights=vec[i:],
            imputed_sensitivity=imputed[0],
            imputed_false_positive_rate=imputed[1],
        )


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's observations; ``test_result`` is None when missing."""

    id: str
    test_result: Optional[int]
    symptomatic: int
    symptoms: np.ndarray
    risk_factors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "symptoms", _frozen_array(self.symptoms, np.int8))
        object.__setattr__(self, "risk_factors", _frozen_array(self.risk_factors, np.float64))
        if self.test_result is not None:
            object.__setattr__(self, "test_result", int(self.test_result))
        object.__setattr__(self, "symptomatic", int(self.symptomatic))


@dataclass(frozen=True)
class DatasetArrays:
    """Column-major view of a dataset used by the vectorized kernels.

    ``test`` holds NaN where the test outcome is missing.
    """

    test: np.ndarray
    test_observed: np.ndarray
    symptomatic: np.ndarray
    symptoms: np.ndarray
    risks: np.ndarray

    @cached_property
    def symptomatic_float(self) -> np.ndarray:
        """Float64 copy of ``symptomatic``, shared by the per-iteration kernels."""
        out = self.symptomatic.astype(np.float64)
        out.flags.writeable = False
        return out


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of subject records sharing one symptom/risk arity."""

    records: tuple
    k_symptoms: int
    m_factors: int

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord]) -> "Dataset":
        records = tuple(records)
        if not records:
            return cls(records, 0, 0)
        return cls(records, len(records[0].symptoms), len(records[0].risk_factors))

    @cached_property
    def arrays(self) -> DatasetArrays:
        n = len(self.records)
        test = np.full(n, np.nan)
        symptomatic = np.zeros(n, dtype=np.int8)
        symptoms = np.zeros((n, self.k_symptoms), dtype=np.float64)
        risks = np.zeros((n, self.m_factors), dtype=np.float64)
        for i, r in enumerate(self.records):
            if r.test_result is not None:
                test[i] = r.test_result
            symptomatic[i] = r.symptomatic
            if len(r.symptoms) == self.k_symptoms:
                symptoms[i] = r.symptoms
            if len(r.risk_factors) == self.m_factors:
                risks[i] = r.risk_factors
        observed = ~np.isnan(test)
        for a in (test, observed, symptomatic, symptoms, risks):
            a.flags.writeable = False
        return DatasetArrays(test, observed, symptomatic, symptoms, risks)

    @cached_property
    def _design_store(self) -> dict:
        return {}

    def design_matrix(self, intercept: bool) -> np.ndarray:
        """Risk-factor design, with a leading column of ones when requested."""
        key = bool(intercept)
        if key not in self._design_store:
            risks = self.arrays.risks
            design = np.hstack([np.ones((len(self), 1)), risks]) if key else risks
            design.flags.writeable = False
            self._design_store[key] = design
        return self._design_store[key]


@dataclass(frozen=True)
class Violation:
    """One failed dataset rule, attributed to a record."""

    record_id: str
    rule: str
    message: str


def validate_dataset(dataset: Dataset) -> list:
    """Check every record invariant; violations are data, not exceptions.

    Returns:
        List of :class:`Violation`, empty iff the dataset is fully valid.
    """
    violations = []
    seen = {}
    for r in dataset.records:
        if r.id in seen:
            violations.append(Violation(r.id, "duplicate id", f"id {r.id!r} appears more than once"))
        seen[r.id] = True
        if len(r.symptoms) != dataset.k_symptoms:
            violations.append(
                Violation(
                    r.id,
                    "symptom arity",
                    f"expected {dataset.k_symptoms} symptom entries, got {len(r.symptoms)}",
                )
            )
        if len(r.risk_factors) != dataset.m_factors:
            violations.append(
                Violation(
                    r.id,
                    "risk arity",
                    f"expected {dataset.m_factors} risk entries, got {len(r.risk_factors)}",
                )
            )
        if r.test_result is not None and r.test_result not in (0, 1):
            violations.append(
                Violation(r.id, "test domain", f"test outcome must be 0/1, got {r.test_result}")
            )
        if r.symptomatic not in (0, 1):
            violations.append(
                Violation(
                    r.id, "symptomatic domain", f"symptomatic flag must be 0/1, got {r.symptomatic}"
                )
            )
        symptom_values = (
            r.symptoms.tolist() if isinstance(r.symptoms, np.ndarray) else list(r.symptoms)
        )
        if not all(v == 0 or v == 1 for v in symptom_values):
            violations.append(
                Violation(r.id, "symptom domain", "symptom entries must all be 0/1")
            )
        elif r.symptomatic == 0 and any(symptom_values):
            violations.append(
                Violation(
                    r.id,
                    "symptom set while asymptomatic",
                    "symptoms must all be 0 when the subject is asymptomatic",
                )
            )
        risk_values = (
            r.risk_factors.tolist()
            if isinstance(r.risk_factors, np.ndarray)
            else list(r.risk_factors)
        )
        if not all(math.isfinite(v) for v in risk_values):
            violations.append(
                Violation(r.id, "risk factor not finite", "risk factors must be finite numbers")
            )
    return violations


def linear_predictor(risk_factors: np.ndarray, risk_weights: np.ndarray) -> float:
    """Log-odds of infection from risk factors alone.

    A weight vector one entry longer than the risk vector carries its
    intercept in position 0.
    """
    risk_factors = np.asarray(risk_factors, dtype=np.float64)
    risk_weights = np.asarray(risk_weights, dtype=np.float64)
    if risk_weights.shape[0] == risk_factors.shape[-1] + 1:
        return float(risk_weights[0] + risk_factors @ risk_weights[1:])
    if risk_weights.shape[0] == risk_factors.shape[-1]:
        return float(risk_factors @ risk_weights)
    raise ValueError(
        f"risk weight length {risk_weights.shape[0]} does not match "
        f"{risk_factors.shape[-1]} risk factors (with or without intercept)"
    )


def _beta_log_kernel(value: float, prior: BetaPrior) -> float:
    # Unnormalized Beta log-density; the constant is omitted consistently.
    v = float(clamp_probability(value))
    return (prior.alpha - 1.0) * math.log(v) + (prior.beta - 1.0) * math.log1p(-v)


def joint_log_likelihood(r: SubjectRecord, d: int, p: Params, h: HyperParams) -> float:
    """Log of the unnormalized joint density of (observations, diagnosis=d, params).

    Sums the log test term, the per-symptom Bernoulli factors, the
    symptomaticity term, the logistic diagnosis term, and the log parameter
    priors (Beta normalizing constants omitted consistently). A symptom set
    while asymptomatic is structurally impossible and yields -inf.

    Args:
        r: subject record; the test outcome must be present.
        d: candidate diagnosis, 0 or 1.
        p: current parameter values.
        h: hyper-parameters supplying the priors.

    Returns:
        The joint log-density up to an additive constant shared by d=0 and d=1.
    """
    if r.test_result is None:
        raise ValueError("joint_log_likelihood requires an observed test outcome")
    if d not in (0, 1):
        raise ValueError(f"diagnosis must be 0 or 1, got {d}")

    t = r.test_result
    s = r.symptomatic
    if s == 0 and r.symptoms.any():
        return -math.inf

    test_rate = clamp_probability(p.sensitivity if d == 1 else p.false_positive_rate)
    symptomatic_rate = clamp_probability(
        p.symptomatic_if_infected if d == 1 else p.symptomatic_if_healthy
    )
    total = t * math.log(test_rate) + (1 - t) * math.log1p(-test_rate)
    total += s * math.log(symptomatic_rate) + (1 - s) * math.log1p(-symptomatic_rate)

    if s == 1:
        rates = clamp_probability(
            p.symptom_rates_infected if d == 1 else p.symptom_rates_healthy
        )
        x = r.symptoms.astype(np.float64)
        total += float(x @ np.log(rates) + (1.0 - x) @ np.log1p(-rates))

    z = linear_predictor(r.risk_factors, p.risk_weights)
    total += float(log_expit(z) if d == 1 else log_expit(-z))

    total += _beta_log_kernel(p.sensitivity, h.sensitivity_prior)
    total += _beta_log_kernel(p.false_positive_rate, h.false_positive_prior)
    total += _beta_log_kernel(p.symptomatic_if_healthy, h.symptomatic_if_healthy_prior)
    total += _beta_log_kernel(p.symptomatic_if_infected, h.symptomatic_if_infected_prior)
    for rate, prior in zip(p.symptom_rates_healthy, h.symptom_priors_healthy):
        total += _beta_log_kernel(rate, prior)
    for rate, prior in zip(p.symptom_rates_infected, h.symptom_priors_infected):
        total += _beta_log_kernel(rate, prior)
    if p.imputed_sensitivity is not None:
        total += _beta_log_kernel(p.imputed_sensitivity, h.imputed_sensitivity_prior)
    if p.imputed_false_positive_rate is not None:
        total += _beta_log_kernel(p.imputed_false_positive_rate, h.imputed_false_positive_prior)
    total += -0.5 * float(p.risk_weights @ p.risk_weights) / (h.weight_scale**2)
    return total
