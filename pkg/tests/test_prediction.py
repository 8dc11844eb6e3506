"""Tests for predictive marginals, class probabilities, and test metrics."""

import numpy as np
import pytest

from pggpc.kernel import KernelParams, build_gram, kern_diag, kern_matrix
from pggpc.model import Dataset, VariationalState, init_state
from pggpc.pg import sigmoid
from pggpc.prediction import EvalReport, class_prob, evaluate, latent_predict

# Reference values computed with 40-digit quadrature of the logistic-Gaussian
# integral; frozen here so regressions in the rule are caught exactly.
CLASS_PROB_1_4 = 0.64772643852586868508
CLASS_PROB_0_1 = 0.5
CLASS_PROB_2_QUARTER = 0.87099346362277842304
CLASS_PROB_M3_9 = 0.19438573608839075974


def _random_state(rng, m=3, d=2, params=None):
    """A variational state with non-trivial (mu, Sigma) for prediction tests."""
    params = params or KernelParams(log_lengthscale=np.log(0.8), log_amplitude=np.log(1.3))
    Z = rng.normal(size=(m, d))
    B = rng.normal(size=(m, m))
    Sigma = B @ B.T + 0.1 * np.eye(m)
    mu = rng.normal(size=m)
    eta2 = -0.5 * np.linalg.inv(Sigma)
    eta1 = np.linalg.solve(Sigma, mu)
    return VariationalState.from_natural(eta1, eta2, Z, params)


class TestClassProb:
    @pytest.mark.parametrize(
        "mu, var, expected, tol",
        [
            (1.0, 4.0, CLASS_PROB_1_4, 1e-10),
            (0.0, 1.0, CLASS_PROB_0_1, 1e-13),
            (2.0, 0.25, CLASS_PROB_2_QUARTER, 5e-13),
            (-3.0, 9.0, CLASS_PROB_M3_9, 1e-10),
        ],
    )
    def test_frozen_oracle_values(self, mu, var, expected, tol):
        assert class_prob(mu, var) == pytest.approx(expected, abs=tol)

    def test_zero_variance_is_sigmoid(self):
        z = np.array([-7.0, -1.3, 0.0, 0.4, 6.0])
        np.testing.assert_allclose(class_prob(z, 0.0), sigmoid(z), atol=1e-14)

    def test_probability_is_half_at_zero_mean(self):
        for var in (0.09, 1.0, 4.0, 25.0):
            assert class_prob(0.0, var) == pytest.approx(0.5, abs=1e-14)

    def test_reflection_identity(self):
        mu = np.array([-4.0, -1.5, 0.3, 2.0, 5.0])
        for var in (0.25, 1.0, 16.0):
            np.testing.assert_allclose(
                class_prob(-mu, var), 1.0 - class_prob(mu, var), atol=1e-13
            )

    def test_monotone_in_mean(self):
        mu = np.linspace(-6.0, 6.0, 41)
        for var in (0.5, 9.0):
            p = class_prob(mu, var)
            assert np.all(np.diff(p) > 0.0)
            assert np.all((p > 0.0) & (p < 1.0))

    def test_widening_variance_shrinks_toward_half(self):
        variances = np.array([0.0, 0.5, 2.0, 8.0, 32.0])
        p = class_prob(2.0, variances)
        assert np.all(np.diff(p) < 0.0)
        assert np.all(p > 0.5)

    def test_rule_refinement_agrees(self):
        # The 20-node rule has already converged: refining to 100 nodes moves
        # no probability by more than ~1e-11 anywhere on this grid.
        mus = np.linspace(-5.0, 5.0, 9)
        sds = np.linspace(0.1, 5.0, 7)
        worst = 0.0
        for mu in mus:
            for sd in sds:
                gap = abs(class_prob(mu, sd**2, order=20) - class_prob(mu, sd**2, order=100))
                worst = max(worst, gap)
        assert worst < 1e-8

    def test_monte_carlo_agreement(self):
        rng = np.random.default_rng(20240811)
        draws = sigmoid(1.0 + 2.0 * rng.standard_normal(200_000))
        se = draws.std(ddof=1) / np.sqrt(draws.size)
        assert class_prob(1.0, 4.0) == pytest.approx(draws.mean(), abs=3.5 * se)

    def test_negative_variance_raises(self):
        with pytest.raises(ValueError, match="nonnegative"):
            class_prob(0.0, -1e-3)
        with pytest.raises(ValueError, match="nonnegative"):
            class_prob(np.zeros(3), np.array([1.0, -0.5, 2.0]))

    def test_broadcasting_and_scalar_return(self):
        p = class_prob(1.0, 2.0)
        assert np.ndim(p) == 0
        assert class_prob(np.zeros(3), np.ones(3)).shape == (3,)
        assert class_prob(np.zeros((2, 3)), 4.0).shape == (2, 3)
        assert class_prob(0.5, np.ones((4, 1))).shape == (4, 1)

    def test_mixed_batch_matches_pointwise(self):
        # Narrow and wide variances in one call take different internal paths;
        # the batched answer must match per-point evaluation bit-for-bit close.
        mu = np.array([-2.0, 0.7, 3.0, -1.0])
        var = np.array([0.25, 4.0, 1.0, 25.0])
        batched = class_prob(mu, var)
        single = np.array([class_prob(m, v) for m, v in zip(mu, var)])
        np.testing.assert_allclose(batched, single, atol=1e-14)


class TestLatentPredict:
    def test_matches_dense_linear_algebra(self):
        rng = np.random.default_rng(3)
        state = _random_state(rng, m=4, d=2)
        Xs = rng.normal(size=(6, 2))

        mu_star, var_star = latent_predict(state, Xs)

        K = kern_matrix(state.Z, state.Z, state.params, same=True)
        A = kern_matrix(Xs, state.Z, state.params)
        W = np.linalg.solve(K, A.T)
        ref_mu = A @ np.linalg.solve(K, state.mu)
        ref_var = (
            kern_diag(Xs, state.params)
            - np.einsum("ij,ji->i", A, W)
            + np.einsum("ji,jk,ki->i", W, state.Sigma, W)
        )
        np.testing.assert_allclose(mu_star, ref_mu, rtol=1e-9)
        np.testing.assert_allclose(var_star, ref_var, rtol=1e-9)

    def test_prior_state_predicts_prior(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(20, 2))
        y = np.sign(X[:, 0]) + (X[:, 0] == 0)
        data = Dataset(X, y)
        state = init_state(data, m=5, params=KernelParams(), rng=rng)

        Xs = rng.normal(size=(7, 2))
        mu_star, var_star = latent_predict(state, Xs)
        np.testing.assert_allclose(mu_star, 0.0, atol=1e-12)
        np.testing.assert_allclose(var_star, kern_diag(Xs, state.params), rtol=1e-8)

    def test_far_point_reverts_to_prior(self):
        rng = np.random.default_rng(5)
        state = _random_state(rng, m=3, d=2)
        mu_star, var_star = latent_predict(state, np.array([80.0, -80.0]))
        prior_var = state.params.amplitude**2 + state.params.jitter
        assert mu_star == pytest.approx(0.0, abs=1e-12)
        assert var_star == pytest.approx(prior_var, rel=1e-10)
        assert class_prob(mu_star, var_star) == pytest.approx(0.5, abs=1e-12)

    def test_single_point_returns_floats(self):
        rng = np.random.default_rng(7)
        state = _random_state(rng)
        x = np.array([0.3, -0.4])
        mu_one, var_one = latent_predict(state, x)
        assert isinstance(mu_one, float) and isinstance(var_one, float)
        mu_batch, var_batch = latent_predict(state, x[None, :])
        assert mu_one == pytest.approx(mu_batch[0], rel=1e-14)
        assert var_one == pytest.approx(var_batch[0], rel=1e-14)

    def test_gram_reuse_matches_fresh_factorization(self):
        rng = np.random.default_rng(13)
        state = _random_state(rng, m=4)
        X_train = rng.normal(size=(10, 2))
        gram = build_gram(X_train, state.Z, state.params)
        Xs = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(
            latent_predict(state, Xs, gram=gram)[0], latent_predict(state, Xs)[0]
        )
        np.testing.assert_array_equal(
            latent_predict(state, Xs, gram=gram)[1], latent_predict(state, Xs)[1]
        )


def _confident_state(mu_scale=8.0):
    """1-D state whose predictions at z = -5 and +5 are near 0 and 1."""
    Z = np.array([[-5.0], [5.0]])
    params = KernelParams(log_amplitude=np.log(3.0))
    Sigma = 0.01 * np.eye(2)
    mu = np.array([-mu_scale, mu_scale])
    return VariationalState.from_natural(
        np.linalg.solve(Sigma, mu), -0.5 * np.linalg.inv(Sigma), Z, params
    )


class TestEvaluate:
    def test_correct_predictions_score_zero_error(self):
        state = _confident_state()
        data = Dataset(np.array([[-5.0], [5.0], [-5.0]]), np.array([-1.0, 1.0, -1.0]))
        report = evaluate(state, data)
        assert report.error_rate == 0.0
        assert report.mean_nll < 0.05
        assert report.n == 3

    def test_flipped_labels_are_counted(self):
        state = _confident_state()
        data = Dataset(
            np.array([[-5.0], [5.0], [-5.0], [5.0]]), np.array([-1.0, 1.0, 1.0, -1.0])
        )
        report = evaluate(state, data)
        assert report.error_rate == 0.5
        assert report.mean_nll > 2.0

    def test_probability_floor_bounds_the_loss(self):
        # An essentially certain wrong prediction is clipped at 1e-12, so the
        # per-point loss cannot exceed -log(1e-12).
        state = _confident_state(mu_scale=60.0)
        data = Dataset(np.array([[5.0]]), np.array([-1.0]))
        report = evaluate(state, data)
        assert report.mean_nll == pytest.approx(-np.log(1e-12), rel=1e-12)

    def test_uninformative_predictions_cost_log_two(self):
        rng = np.random.default_rng(17)
        X = rng.normal(size=(12, 2))
        y = np.where(rng.random(12) < 0.5, -1.0, 1.0)
        data = Dataset(X, y)
        state = init_state(data, m=4, params=KernelParams(), rng=rng)
        report = evaluate(state, data)
        assert report.mean_nll == pytest.approx(np.log(2.0), abs=1e-10)

    def test_empty_test_set_raises(self):
        state = _confident_state()
        empty = Dataset(np.empty((0, 1)), np.empty(0))
        with pytest.raises(ValueError, match="empty"):
            evaluate(state, empty)

    def test_report_is_plain_data(self):
        report = EvalReport(error_rate=0.25, mean_nll=0.5, n=4)
        assert (report.error_rate, report.mean_nll, report.n) == (0.25, 0.5, 4)
