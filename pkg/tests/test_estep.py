"""Posterior computations and stochastic imputation draws."""

import dataclasses
import math

import numpy as np
import pytest

from stem_fuse.estep import (
    DiagnosisPosterior,
    JointDTPosterior,
    joint_cell_log_weights,
    joint_posterior_dt,
    posterior_odds,
    posterior_odds_truncated,
    sample_imputations,
)
from stem_fuse.model import (
    HyperParams,
    Params,
    SubjectRecord,
    joint_log_likelihood,
    linear_predictor,
)

from .test_model import make_params, make_record


def flat_params(k=2, m=0, **overrides):
    base = dict(
        sensitivity=0.5,
        false_positive_rate=0.5,
        symptomatic_if_healthy=0.5,
        symptomatic_if_infected=0.5,
        symptom_rates_healthy=np.full(k, 0.5),
        symptom_rates_infected=np.full(k, 0.5),
        risk_weights=np.zeros(m + 1),
    )
    base.update(overrides)
    return Params(**base)


def record(test=1, symptomatic=0, symptoms=(0, 0), risks=(), id="r"):
    return SubjectRecord(
        id=id,
        test_result=test,
        symptomatic=symptomatic,
        symptoms=np.array(symptoms, np.int8),
        risk_factors=np.array(risks, float),
    )


class TestPosteriorOdds:
    def test_uninformative_model_gives_half(self):
        p = flat_params()
        assert posterior_odds(record(test=1), p).p1 == pytest.approx(0.5, abs=1e-12)
        assert posterior_odds(record(test=0), p).p1 == pytest.approx(0.5, abs=1e-12)

    def test_only_test_term_survives(self):
        p = flat_params(sensitivity=0.9, false_positive_rate=0.1)
        post = posterior_odds(record(test=1), p)
        # odds = 0.9 / 0.1 = 9
        assert post.p1 == pytest.approx(0.9, abs=1e-12)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(42)
        h = HyperParams.noninformative(3)
        for _ in range(1000):
            p = make_params(k=3, m=2, rng=rng)
            r = make_record(rng, k=3, m=2, test=int(rng.random() < 0.5))
            l1 = joint_log_likelihood(r, 1, p, h)
            l0 = joint_log_likelihood(r, 0, p, h)
            expected = 1.0 / (1.0 + math.exp(l0 - l1))
            assert posterior_odds(r, p).p1 == pytest.approx(expected, abs=1e-12)

    def test_log_odds_match_likelihood_difference(self):
        rng = np.random.default_rng(8)
        h = HyperParams.noninformative(3)
        for _ in range(200):
            p = make_params(k=3, m=2, rng=rng)
            r = make_record(rng, k=3, m=2, test=int(rng.random() < 0.5))
            p1 = posterior_odds(r, p).p1
            log_odds = math.log(p1) - math.log1p(-p1)
            diff = joint_log_likelihood(r, 1, p, h) - joint_log_likelihood(r, 0, p, h)
            assert abs(log_odds - diff) < 1e-10

    def test_positive_test_raises_posterior_when_test_informative(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            p = make_params(rng=rng)  # sensitivity > false positive rate
            base = make_record(rng, test=0)
            flipped = dataclasses.replace(base, test_result=1)
            assert posterior_odds(flipped, p).p1 >= posterior_odds(base, p).p1

    def test_symptom_permutation_invariance(self):
        rng = np.random.default_rng(21)
        p = make_params(k=4, rng=rng)
        r = record(test=1, symptomatic=1, symptoms=(1, 0, 1, 0), risks=(0.4, -1.2))
        perm = rng.permutation(4)
        p_perm = dataclasses.replace(
            p,
            symptom_rates_healthy=p.symptom_rates_healthy[perm],
            symptom_rates_infected=p.symptom_rates_infected[perm],
        )
        r_perm = dataclasses.replace(r, symptoms=r.symptoms[perm])
        assert posterior_odds(r_perm, p_perm).p1 == pytest.approx(
            posterior_odds(r, p).p1, abs=1e-12
        )

    def test_requires_test_outcome(self):
        with pytest.raises(ValueError):
            posterior_odds(record(test=None), flat_params())


class TestTruncatedPosterior:
    def test_drops_test_factor(self):
        p = flat_params(sensitivity=0.95, false_positive_rate=0.05)
        post = posterior_odds_truncated(record(test=1), p)
        assert post.p1 == pytest.approx(0.5, abs=1e-12)

    def test_equals_posterior_with_neutral_test(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            p = make_params(k=3, rng=rng)
            neutral = dataclasses.replace(p, sensitivity=0.5, false_positive_rate=0.5)
            r = make_record(rng, k=3, test=int(rng.random() < 0.5))
            assert posterior_odds_truncated(r, p).p1 == pytest.approx(
                posterior_odds(r, neutral).p1, abs=1e-12
            )

    def test_two_symptom_hand_enumeration(self):
        p = flat_params(
            k=2,
            symptom_rates_infected=np.array([0.8, 0.2]),
            symptom_rates_healthy=np.array([0.2, 0.2]),
        )
        post = posterior_odds_truncated(record(symptomatic=1, symptoms=(1, 0)), p)
        # odds = (0.8 * 0.8) / (0.2 * 0.8) = 4
        assert post.p1 / (1 - post.p1) == pytest.approx(4.0, abs=1e-10)

    def test_accepts_missing_test(self):
        p = flat_params()
        assert posterior_odds_truncated(record(test=None), p).p1 == pytest.approx(0.5)


class TestJointPosterior:
    def test_cells_sum_to_one(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            p = make_params(k=3, rng=rng, imputed=True)
            r = make_record(rng, k=3, test=None)
            cells = joint_posterior_dt(r, p).cells
            assert cells.sum() == pytest.approx(1.0, abs=1e-12)
            assert (cells >= 0).all()

    def test_all_half_gives_quarter_cells(self):
        p = flat_params(imputed_sensitivity=0.5, imputed_false_positive_rate=0.5)
        cells = joint_posterior_dt(record(test=None), p).cells
        assert np.allclose(cells, 0.25, atol=1e-12)

    def test_perfect_imputed_sensitivity_kills_false_negative_cell(self):
        # Sensitivity 1 means an infected subject cannot test negative.
        p = flat_params(
            imputed_sensitivity=1.0 - 1e-15, imputed_false_positive_rate=0.3
        )
        cells = joint_posterior_dt(record(test=None), p).cells
        assert cells[1, 0] == pytest.approx(0.0, abs=1e-12)

    def test_marginal_matches_truncated(self):
        rng = np.random.default_rng(50)
        for _ in range(50):
            p = make_params(k=3, rng=rng, imputed=True)
            r = make_record(rng, k=3, test=None)
            joint = joint_posterior_dt(r, p)
            marg = joint.marginal_diagnosis()
            trunc = posterior_odds_truncated(r, p)
            assert marg.p1 == pytest.approx(trunc.p1, abs=1e-12)

    def test_rejects_observed_test(self):
        with pytest.raises(ValueError):
            joint_posterior_dt(record(test=1), flat_params())

    def test_normalization_invariant_to_constant_shift(self):
        rng = np.random.default_rng(60)
        p = make_params(k=3, rng=rng, imputed=True)
        r = make_record(rng, k=3, test=None)
        z = np.array([linear_predictor(r.risk_factors, p.risk_weights)])
        logs = joint_cell_log_weights(
            p,
            np.array([float(r.symptomatic)]),
            r.symptoms.astype(float).reshape(1, -1),
            z,
        )[0]
        base = joint_posterior_dt(r, p).cells

        def normalize(lw):
            w = np.exp(lw - lw.max())
            return (w / w.sum()).reshape(2, 2)

        assert np.allclose(normalize(logs + 123.4), base, atol=1e-12)


class TestSampling:
    def test_degenerate_probabilities(self):
        rng = np.random.default_rng(0)
        posteriors = [DiagnosisPosterior(0.0)] * 50 + [DiagnosisPosterior(1.0)] * 50
        draws = sample_imputations(posteriors, rng)
        assert draws[:50] == [0] * 50
        assert draws[50:] == [1] * 50

    def test_law_of_large_numbers(self):
        rng = np.random.default_rng(123)
        posteriors = [DiagnosisPosterior(0.3)] * 100_000
        draws = sample_imputations(posteriors, rng)
        assert np.mean(draws) == pytest.approx(0.3, abs=0.01)

    def test_deterministic_given_seed(self):
        posteriors = [DiagnosisPosterior(p) for p in np.linspace(0.05, 0.95, 40)]
        a = sample_imputations(posteriors, np.random.default_rng(9))
        b = sample_imputations(posteriors, np.random.default_rng(9))
        assert a == b

    def test_joint_draws_are_cell_indices(self):
        rng = np.random.default_rng(77)
        cells = np.array([[0.1, 0.2], [0.3, 0.4]])
        posteriors = [JointDTPosterior(cells)] * 10_000
        draws = sample_imputations(posteriors, rng)
        assert all(isinstance(d, tuple) and len(d) == 2 for d in draws)
        freq = np.zeros((2, 2))
        for d, t in draws:
            freq[d, t] += 1
        assert np.allclose(freq / len(draws), cells, atol=0.02)

    def test_joint_law_of_large_numbers(self):
        rng = np.random.default_rng(5)
        cells = np.array([[0.7, 0.0], [0.0, 0.3]])
        posteriors = [JointDTPosterior(cells)] * 100_000
        draws = sample_imputations(posteriors, rng)
        mean_d = np.mean([d for d, _ in draws])
        assert mean_d == pytest.approx(0.3, abs=0.01)

    def test_mixed_posterior_types(self):
        rng = np.random.default_rng(3)
        posteriors = [
            DiagnosisPosterior(1.0),
            JointDTPosterior(np.array([[1.0, 0.0], [0.0, 0.0]])),
            DiagnosisPosterior(0.0),
        ]
        draws = sample_imputations(posteriors, rng)
        assert draws[0] == 1
        assert draws[1] == (0, 0)
        assert draws[2] == 0


class TestInvariantChecks:
    def test_joint_cells_validated(self):
        with pytest.raises(ValueError):
            JointDTPosterior(np.array([[0.5, 0.5], [0.5, 0.5]]))

    def test_posterior_probability_validated(self):
        with pytest.raises(ValueError):
            DiagnosisPosterior(1.5)
