import json
import math

import mpmath
import numpy as np
import pytest
import sympy

from nlmeimh import (
    CONSTANT, LINEAR, PK1_ORAL, GaussianProposal, IndividualRecord, MapOptions, MapResult,
    NotConvergedError, PopulationParams, ProposalError, StructuralModel,
    expected_info_gap, find_map, laplace_proposal, linearized_proposal, log_joint,
    log_prior, proposal_logpdf, proposal_sample,
)
from nlmeimh.model import latent_jacobian
from nlmeimh.proposal import factorize_with_jitter, observed_information

from conftest import conjugate_setup, noisy_pk_record


def brute_logpdf(x, mean, cov):
    d = x - mean
    return -0.5 * (len(x) * math.log(2 * math.pi) + math.log(np.linalg.det(cov)) + d @ np.linalg.inv(cov) @ d)


def random_spd(rng, p):
    A = rng.standard_normal((p, p))
    return A @ A.T + 0.2 * np.eye(p)


class TestLinearized:
    def test_conjugate_variance(self, conjugate):
        record, theta, model, mean, var = conjugate
        prop = linearized_proposal(record, theta, model, find_map(record, theta, model))
        assert prop.mean[0] == pytest.approx(mean, rel=1e-8)
        assert prop.cov[0, 0] == pytest.approx(var, rel=1e-8)

    def test_flat_model_returns_prior(self):
        flat = StructuralModel("flat", ("a", "b"), lambda t, p, d: np.zeros(len(t)),
                               analytic_jacobian=lambda t, p, d: (np.zeros(len(t)), np.zeros((len(t), 2))))
        theta = PopulationParams([0.5, -0.2], [[0.3, 0.1], [0.1, 0.2]], 1.0)
        rec = IndividualRecord("a", [0.0, 1.0], [0.3, -0.4], 1.0)
        prop = linearized_proposal(rec, theta, flat, find_map(rec, theta, flat))
        assert np.allclose(prop.mean, theta.prior_mean, atol=1e-12)
        assert np.allclose(prop.cov, theta.omega, rtol=1e-12)

    def test_pk_cov_matches_extended_precision_inverse(self, theta_pk, pk_record):
        res = find_map(pk_record, theta_pk, PK1_ORAL)
        prop = linearized_proposal(pk_record, theta_pk, PK1_ORAL, res)
        _, J = latent_jacobian(pk_record, res.phi_hat, theta_pk, PK1_ORAL)
        mpmath.mp.dps = 40
        Jm = mpmath.matrix(J.tolist())
        Om = mpmath.matrix(theta_pk.omega.tolist())
        P = Jm.T * Jm / mpmath.mpf(theta_pk.sigma2) + Om ** -1
        oracle = np.array((P ** -1).tolist(), dtype=float)
        assert np.linalg.norm(prop.cov - oracle) / np.linalg.norm(oracle) < 1e-8

    def test_loewner_order_below_omega(self, theta_pk):
        rng = np.random.default_rng(4)
        for seed in range(5):
            rec = noisy_pk_record(theta_pk, seed=seed)
            prop = linearized_proposal(rec, theta_pk, PK1_ORAL, find_map(rec, theta_pk, PK1_ORAL))
            for v in rng.standard_normal((50, 3)):
                assert v @ prop.cov @ v <= v @ theta_pk.omega @ v

    def test_linear_model_logpdf_is_log_posterior_plus_constant(self):
        theta = PopulationParams([0.5, -0.3], [[0.4, 0.05], [0.05, 0.2]], 0.7)
        rng = np.random.default_rng(2)
        t = np.linspace(0, 3, 8)
        rec = IndividualRecord("l", t, 0.2 + 0.5 * t + rng.standard_normal(8), 1.0)
        res = find_map(rec, theta, LINEAR, opts=MapOptions(gtol=1e-11))
        prop = linearized_proposal(rec, theta, LINEAR, res)
        pts = prop.mean + rng.standard_normal((200, 2))
        diffs = [proposal_logpdf(prop, x) - log_joint(rec, x, theta, LINEAR) for x in pts]
        assert np.var(diffs) < 1e-16

    def test_structure_invariants(self, theta_pk, pk_record):
        res = find_map(pk_record, theta_pk, PK1_ORAL)
        for prop in (linearized_proposal(pk_record, theta_pk, PK1_ORAL, res),
                     laplace_proposal(pk_record, theta_pk, PK1_ORAL, res)):
            assert np.array_equal(prop.cov, prop.cov.T)
            assert np.allclose(prop.chol @ prop.chol.T, prop.cov, rtol=1e-10, atol=0)
            assert prop.logdet == pytest.approx(2 * np.sum(np.log(np.diag(prop.chol))), rel=1e-14)
            assert np.array_equal(prop.mean, res.phi_hat)
            json.dumps(prop.to_dict())

    def test_refuses_unconverged_map(self, theta_pk, pk_record):
        res = find_map(pk_record, theta_pk, PK1_ORAL)
        bad = MapResult(res.phi_hat, res.objective, 1.0, 3, False, 1e-6)
        with pytest.raises(NotConvergedError):
            linearized_proposal(pk_record, theta_pk, PK1_ORAL, bad)
        with pytest.raises(NotConvergedError):
            laplace_proposal(pk_record, theta_pk, PK1_ORAL, bad)
        assert linearized_proposal(pk_record, theta_pk, PK1_ORAL, bad, allow_unconverged=True).kind == "linearized"


class TestLaplace:
    def test_coincides_with_linearized_on_linear_model(self, conjugate):
        record, theta, model, _, _ = conjugate
        res = find_map(record, theta, model)
        a = laplace_proposal(record, theta, model, res)
        b = linearized_proposal(record, theta, model, res)
        assert np.allclose(a.cov, b.cov, rtol=1e-9)

    @pytest.mark.parametrize("y_obs", [2.0, 9.0])
    def test_single_observation_curvature_matches_symbolic(self, y_obs):
        psi, y, s2 = sympy.symbols("psi y s2")
        a0, b0, c0 = 0.5, 1.5, 0.8
        f = a0 + b0 * psi + c0 * psi ** 2
        neg_hess = sympy.diff(-(-(y - f) ** 2 / (2 * s2)), psi, 2)
        quad = StructuralModel(
            "quadratic", ("psi",), lambda t, p, d: np.full(len(t), a0 + b0 * p[0] + c0 * p[0] ** 2),
            analytic_jacobian=lambda t, p, d: (np.full(len(t), a0 + b0 * p[0] + c0 * p[0] ** 2),
                                               np.full((len(t), 1), b0 + 2 * c0 * p[0])))
        theta = PopulationParams([0.2], [[0.5]], 0.3)
        rec = IndividualRecord("q", [1.0], [y_obs], 1.0)
        res = find_map(rec, theta, quad)
        info = observed_information(rec, theta, quad, res.phi_hat)[0, 0]
        oracle = float(neg_hess.subs({psi: res.phi_hat[0], y: y_obs, s2: 0.3}))
        assert info == pytest.approx(oracle, rel=1e-6)
        prop = laplace_proposal(rec, theta, quad, res)
        expected_prec = max(oracle, 0.0) + 1 / 0.5
        assert 1 / prop.cov[0, 0] == pytest.approx(expected_prec, rel=1e-6)

    def test_indefinite_curvature_is_floored(self):
        # tight prior holds the MAP at 0, where f = psi^2 with y = 5 has curvature -2y
        quad = StructuralModel(
            "quad2", ("psi",), lambda t, p, d: np.full(len(t), p[0] ** 2),
            analytic_jacobian=lambda t, p, d: (np.full(len(t), p[0] ** 2), np.full((len(t), 1), 2 * p[0])))
        theta = PopulationParams([0.0], [[0.01]], 1.0)
        rec = IndividualRecord("q", [1.0], [5.0], 1.0)
        res = find_map(rec, theta, quad)
        assert res.converged and res.phi_hat[0] == pytest.approx(0.0, abs=1e-12)
        assert observed_information(rec, theta, quad, res.phi_hat)[0, 0] == pytest.approx(-10.0, rel=1e-6)
        prop = laplace_proposal(rec, theta, quad, res)
        assert prop.cov[0, 0] == pytest.approx(0.01, rel=1e-12)

    def test_zero_residual_pk_matches_linearized(self, theta_pk, times):
        f = PK1_ORAL.predict(times, theta_pk.psi_pop, 105.0)
        rec = IndividualRecord("z", times, f, 105.0)
        res = find_map(rec, theta_pk, PK1_ORAL)
        assert np.allclose(res.phi_hat, theta_pk.prior_mean, atol=1e-10)
        a = laplace_proposal(rec, theta_pk, PK1_ORAL, res)
        b = linearized_proposal(rec, theta_pk, PK1_ORAL, res)
        assert np.linalg.norm(a.cov - b.cov) / np.linalg.norm(b.cov) < 1e-6

    def test_shares_mean_with_linearized(self, theta_pk, pk_record):
        res = find_map(pk_record, theta_pk, PK1_ORAL)
        a = laplace_proposal(pk_record, theta_pk, PK1_ORAL, res)
        b = linearized_proposal(pk_record, theta_pk, PK1_ORAL, res)
        assert np.array_equal(a.mean, b.mean)


class TestExpectedInfoGap:
    def test_linear_model_gap_is_zero(self):
        record, theta, model, _, _ = conjugate_setup()
        res = find_map(record, theta, model)
        for n in (1, 50):
            assert expected_info_gap(record, theta, model, res, n, seed=n).gap < 1e-8

    def test_pk_gap_within_three_standard_errors(self, theta_pk, pk_record):
        res = find_map(pk_record, theta_pk, PK1_ORAL)
        out = expected_info_gap(pk_record, theta_pk, PK1_ORAL, res, 10_000, seed=5)
        assert out.gap < 3 * out.stderr

    def test_gap_scales_like_inverse_sqrt_n(self, theta_pk, pk_record):
        res = find_map(pk_record, theta_pk, PK1_ORAL)
        ns = np.array([1, 10, 100, 1000, 10_000])
        logs = np.array([[math.log(expected_info_gap(pk_record, theta_pk, PK1_ORAL, res, int(n), seed=100 * r + i).gap)
                          for i, n in enumerate(ns)] for r in range(20)])
        slope = np.polyfit(np.log(ns), logs.mean(axis=0), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.1)
        ratio = math.exp(logs[:, 0].mean() - logs[:, -1].mean())
        assert 100 / 3 <= ratio <= 300

    def test_requires_positive_n(self, conjugate):
        record, theta, model, _, _ = conjugate
        with pytest.raises(ValueError):
            expected_info_gap(record, theta, model, find_map(record, theta, model), 0, seed=0)


class TestSamplingAndDensity:
    def test_degenerate_returns_mean(self):
        prop = GaussianProposal.degenerate([1.0, -2.0])
        rng = np.random.default_rng(0)
        assert np.array_equal(proposal_sample(prop, rng), np.array([1.0, -2.0]))

    def test_law_of_large_numbers(self):
        cov = np.array([[0.5, 0.2], [0.2, 0.3]])
        prop = GaussianProposal.from_cov([1.0, -1.0], cov, "linearized")
        rng = np.random.default_rng(1)
        N = 100_000
        X = np.array([proposal_sample(prop, rng) for _ in range(N)])
        assert np.all(np.abs(X.mean(axis=0) - prop.mean) < 4 * np.sqrt(np.diag(cov) / N))
        assert np.all(np.abs(np.cov(X.T) - cov) <= 0.05 * np.abs(cov))

    def test_seeded_draws_repeat(self):
        prop = GaussianProposal.from_cov([0.0, 0.0], np.eye(2), "laplace")
        a = proposal_sample(prop, np.random.default_rng(9))
        b = proposal_sample(prop, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_logpdf_at_mean(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        prop = GaussianProposal.from_cov([0.5, 0.5], cov, "laplace")
        expected = -math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(cov))
        assert proposal_logpdf(prop, prop.mean) == pytest.approx(expected, rel=1e-13)

    def test_logpdf_equals_log_prior_for_prior_parameters(self, theta_pk):
        prop = GaussianProposal.from_cov(theta_pk.prior_mean, theta_pk.omega, "linearized")
        phi = theta_pk.prior_mean + np.array([0.3, -0.2, 0.1])
        assert proposal_logpdf(prop, phi) == pytest.approx(log_prior(phi, theta_pk), rel=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_logpdf_matches_explicit_inverse(self, seed):
        rng = np.random.default_rng(seed)
        cov = random_spd(rng, 3)
        prop = GaussianProposal.from_cov(rng.standard_normal(3), cov, "linearized")
        x = rng.standard_normal(3)
        assert proposal_logpdf(prop, x) == pytest.approx(brute_logpdf(x, prop.mean, cov), rel=1e-10)


class TestJitter:
    def test_singular_matrix_gets_bounded_jitter(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        L, jitter = factorize_with_jitter(a)
        assert 0 < jitter <= 1e-4 * np.trace(a) / 2
        assert np.allclose(L @ L.T, a + jitter * np.eye(2))

    def test_pd_matrix_untouched(self):
        _, jitter = factorize_with_jitter(np.eye(3))
        assert jitter == 0.0

    def test_indefinite_matrix_fails_with_condition_number(self):
        with pytest.raises(ProposalError, match="condition number"):
            factorize_with_jitter(np.array([[1.0, 0.0], [0.0, -1.0]]))
