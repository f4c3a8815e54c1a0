import logging
import math
from unittest.mock import patch

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import logit

from slpca.models.schemas import BinaryDataMatrix, Bound, FitConfig, Link, ScoreUpdate, WorkingState
from slpca.services import solver
from slpca.services.errors import DataValidationError, DegenerateFactorError, DimensionMismatchError
from slpca.services.likelihood import log_likelihood_theta, penalized_objective


def _row(y):
    return BinaryDataMatrix(values=np.atleast_2d(np.asarray(y, dtype=float)))


class TestWorkingValues:
    """Tests for working responses and weights"""

    def test_uniform_at_origin(self):
        """θ=0 gives x=±2, w=1/8"""
        X, W = solver.working_values_uniform(np.zeros((1, 2)), _row([1.0, 0.0]))
        assert np.allclose(X, [[2.0, -2.0]])
        assert np.all(W == 0.125)

    def test_uniform_known_value(self):
        """θ=2, y=1 gives 2.4768116"""
        X, _ = solver.working_values_uniform(np.array([[2.0]]), _row([1.0]))
        assert X[0, 0] == pytest.approx(2.4768116, abs=1e-7)

    def test_tight_origin_limit(self):
        """Curvature at and near 0 equals the uniform 1/8"""
        W = solver.tight_weights(np.array([0.0, 1e-6, -1e-6]))
        assert np.all(W == 0.125)
        assert solver.tight_weights(np.array([1e-3]))[0] == pytest.approx(0.125, rel=1e-6)

    def test_tight_known_value(self):
        """θ=2, y=1 gives w=0.0951993 and x≈2.62607"""
        X, W = solver.working_values_tight(np.array([[2.0]]), _row([1.0]))
        assert W[0, 0] == pytest.approx(0.0951993, abs=1e-7)
        assert X[0, 0] == pytest.approx(2.62607, abs=1e-4)

    def test_tight_weights_even(self, rng):
        """w(θ) = w(−θ) and never exceeds 1/8"""
        theta = rng.uniform(-20, 20, size=500)
        W = solver.tight_weights(theta)
        assert np.allclose(W, solver.tight_weights(-theta))
        assert np.all(W <= 0.125)
        assert np.all(W > 0)

    def test_probit_at_origin(self):
        """θ=0 gives x=±0.7978846"""
        X, W = solver.working_values_probit(np.zeros((1, 2)), _row([1.0, 0.0]))
        assert X[0, 0] == pytest.approx(0.7978846, abs=1e-7)
        assert X[0, 1] == pytest.approx(-0.7978846, abs=1e-7)
        assert np.all(W == 0.5)

    def test_probit_far_tail(self):
        """θ=−10, y=1 stays finite near 0.0990"""
        X, _ = solver.working_values_probit(np.array([[-10.0]]), _row([1.0]))
        assert np.isfinite(X[0, 0])
        assert 0.09 < X[0, 0] < 0.11

    def test_mills_ratio_branches_agree(self):
        """Continued fraction and log-density branches match in the overlap"""
        t = np.linspace(-12.0, -6.0, 61)
        fraction = solver.mills_ratio(t, cutoff=0.0)
        direct = solver.mills_ratio(t, cutoff=-100.0)
        assert np.allclose(fraction, direct, rtol=1e-10)

    def test_gaussian_identity(self):
        """y=3.2, σ²=1 gives (3.2, 1); σ²=4 gives w=0.25"""
        data = BinaryDataMatrix(values=[[1.0, 3.2], [0.0, -1.0]], col_kind=["binary", "continuous"])
        x, w = solver.working_values_gaussian(data, 1, 1.0)
        assert x[0] == 3.2
        assert np.all(w == 1.0)
        _, w = solver.working_values_gaussian(data, [1], 4.0)
        assert np.all(w == 0.25)

    def test_gaussian_rejects_binary_column(self):
        """Binary columns have no Gaussian working value"""
        data = BinaryDataMatrix(values=[[1.0, 3.2]], col_kind=["binary", "continuous"])
        with pytest.raises(DataValidationError):
            solver.working_values_gaussian(data, 0, 1.0)

    def test_dispatch_overwrites_continuous(self, mixed_data):
        """Mixed data: binary columns use the logit bound, continuous ones x=y"""
        theta = np.zeros((mixed_data.n, mixed_data.d))
        X, W = solver.working_values(theta, mixed_data, sigma2=2.0)
        assert np.array_equal(X[:, 4:], mixed_data.values[:, 4:])
        assert np.all(W[:, 4:] == 0.5)
        assert np.all(np.abs(X[:, :4]) == 2.0)
        assert np.all(W[:, :4] == 0.125)


class TestImputeMissing:
    """Tests for missing-cell imputation"""

    def test_empty_mask_noop(self, rng):
        """No masked cells leaves X unchanged"""
        X = rng.normal(size=(3, 4))
        out = solver.impute_missing(X, rng.normal(size=(3, 4)), np.zeros((3, 4), dtype=bool))
        assert np.array_equal(out, X)

    def test_full_mask(self, rng):
        """All masked gives Θ"""
        theta = rng.normal(size=(3, 4))
        out = solver.impute_missing(rng.normal(size=(3, 4)), theta, np.ones((3, 4), dtype=bool))
        assert np.array_equal(out, theta)

    def test_single_cell(self):
        """One masked cell takes θ=1.3"""
        mask = np.zeros((2, 2), dtype=bool)
        mask[1, 0] = True
        out = solver.impute_missing(np.zeros((2, 2)), np.full((2, 2), 1.3), mask)
        assert out[1, 0] == 1.3
        assert out.sum() == 1.3

    def test_shape_mismatch(self):
        """Shapes must agree"""
        with pytest.raises(DimensionMismatchError):
            solver.impute_missing(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2), dtype=bool))


class TestUpdateIntercept:
    """Tests for the intercept step"""

    def test_constant_matrix(self):
        """A=0, X≡c gives μ=c"""
        mu = solver.update_intercept(np.full((4, 3), 1.7), np.full((4, 3), 0.125), np.zeros((4, 1)), np.ones((3, 1)))
        assert np.allclose(mu, 1.7)

    def test_uniform_mean(self):
        """Column (1, 3) gives 2"""
        mu = solver.update_intercept(np.array([[1.0], [3.0]]), np.full((2, 1), 0.125), np.zeros((2, 1)), np.zeros((1, 1)))
        assert mu[0] == 2.0

    def test_weighted_mean(self):
        """Weights (1, 3) on (1, 3) give 2.5"""
        mu = solver.update_intercept(np.array([[1.0], [3.0]]), np.array([[1.0], [3.0]]), np.zeros((2, 1)), np.zeros((1, 1)))
        assert mu[0] == pytest.approx(2.5)


class TestUpdateScores:
    """Tests for the QR score step"""

    def test_single_column_unit_norm(self, rng):
        """B=e₁ gives a ∝ x*₁ with unit norm"""
        X = rng.normal(size=(6, 3))
        B = np.array([[1.0], [0.0], [0.0]])
        A, _ = solver.update_scores(X, np.full(X.shape, 0.125), np.zeros(3), B)
        assert np.linalg.norm(A[:, 0]) == pytest.approx(1.0)
        assert abs(A[:, 0] @ X[:, 0]) == pytest.approx(np.linalg.norm(X[:, 0]))

    def test_recovers_noiseless_span(self, rng):
        """X* = A₀B₀ᵀ returns span(A₀) and the same product"""
        A0, _ = np.linalg.qr(rng.normal(size=(15, 2)))
        B0 = rng.normal(size=(8, 2))
        X = A0 @ B0.T
        A, B = solver.update_scores(X, np.full(X.shape, 0.125), np.zeros(8), B0)
        assert np.allclose(A.T @ A, np.eye(2), atol=1e-10)
        assert np.allclose(A @ B.T, X, atol=1e-8)
        overlap = np.linalg.svd(A.T @ A0, compute_uv=False)
        assert np.min(overlap) == pytest.approx(1.0, abs=1e-8)

    def test_weighted_rows(self, rng):
        """Non-uniform weights solve each row's weighted system"""
        X = rng.normal(size=(5, 4))
        W = rng.uniform(0.1, 1.0, size=(5, 4))
        B = rng.normal(size=(4, 2))
        A, B_out = solver.update_scores(X, W, np.zeros(4), B)
        fitted = A @ B_out.T
        for i in range(5):
            a = np.linalg.solve(B.T @ (W[i][:, None] * B), B.T @ (W[i] * X[i]))
            assert np.allclose(fitted[i], B @ a, atol=1e-8)

    def test_ridge_fallback(self, rng, caplog):
        """B=0 is singular; the ridge retry succeeds and logs a warning"""
        X = rng.normal(size=(4, 3))
        with caplog.at_level(logging.WARNING, logger="slpca.services.solver"):
            A, B = solver.update_scores(X, np.full(X.shape, 0.125), np.zeros(3), np.zeros((3, 2)))
        assert np.all(B == 0)
        assert A.shape == (4, 2)
        assert "ridge" in caplog.text

    def test_persistent_failure(self, rng):
        """Failure after the ridge retry raises DegenerateFactorError"""
        X = rng.normal(size=(4, 3))
        with patch("slpca.services.solver._solve_batched", side_effect=solver._SingularSystem("boom")) as solve:
            with pytest.raises(DegenerateFactorError):
                solver.update_scores(X, np.full(X.shape, 0.125), np.zeros(3), rng.normal(size=(3, 2)))
        assert solve.call_count == 2


class TestProcrustesScores:
    """Tests for the orthonormal Procrustes score step"""

    def test_orthonormal(self, rng):
        """Output has orthonormal columns for any weights"""
        X = rng.normal(size=(10, 5))
        W = rng.uniform(0.05, 0.5, size=(10, 5))
        A0, _ = np.linalg.qr(rng.normal(size=(10, 2)))
        A = solver.update_scores_procrustes(X, W, np.zeros(5), A0, rng.normal(size=(5, 2)))
        assert np.allclose(A.T @ A, np.eye(2), atol=1e-10)

    def test_recovers_noiseless_scores(self, rng):
        """X* = A₀B₀ᵀ gives back A₀ exactly"""
        A0, _ = np.linalg.qr(rng.normal(size=(12, 2)))
        B0 = rng.normal(size=(6, 2))
        X = A0 @ B0.T
        A = solver.update_scores_procrustes(X, np.full(X.shape, 0.125), np.zeros(6), np.eye(12)[:, :2], B0)
        assert np.allclose(A, A0, atol=1e-8)


class TestUpdateLoadings:
    """Tests for the loading step"""

    def _one_column(self, c=2.0, n=10):
        X = np.zeros((n, 1))
        X[0, 0] = c
        A = np.zeros((n, 1))
        A[0, 0] = 1.0
        return X, np.full((n, 1), 0.125), A

    def test_no_penalty(self):
        """λ=0 returns c unchanged"""
        X, W, A = self._one_column()
        B = solver.update_loadings(X, W, np.zeros(1), A, np.array([[1.0]]), [0.0], 10)
        assert B[0, 0] == pytest.approx(2.0)

    def test_shrinkage_value(self):
        """|b_m|=1, c=2, n=10, λ=0.05 gives 2/3"""
        X, W, A = self._one_column()
        B = solver.update_loadings(X, W, np.zeros(1), A, np.array([[1.0]]), [0.05], 10)
        assert B[0, 0] == pytest.approx(0.6667, abs=1e-4)

    def test_absorbing_zero(self):
        """b_m=0 stays exactly 0 under a penalty"""
        X, W, A = self._one_column()
        B = solver.update_loadings(X, W, np.zeros(1), A, np.array([[0.0]]), [0.05], 10)
        assert B[0, 0] == 0.0

    def test_zero_not_absorbed_without_penalty(self):
        """λ=0 lets a zero loading move"""
        X, W, A = self._one_column()
        B = solver.update_loadings(X, W, np.zeros(1), A, np.array([[0.0]]), [0.0], 10)
        assert B[0, 0] == pytest.approx(2.0)

    def test_weighted_path_matches_shrinkage(self, rng):
        """The ridge solve reduces to the shrinkage formula under uniform weights"""
        n, d = 12, 5
        X = rng.normal(size=(n, d))
        W = np.full((n, d), 0.125)
        A, _ = np.linalg.qr(rng.normal(size=(n, 2)))
        B_m = rng.normal(size=(d, 2))
        lam = [0.01, 0.03]
        fast = solver.update_loadings(X, W, np.zeros(d), A, B_m, lam, n)
        with patch("slpca.services.solver._is_orthonormal", return_value=False):
            slow = solver.update_loadings(X, W, np.zeros(d), A, B_m, lam, n)
        assert np.allclose(fast, slow, atol=1e-10)

    def test_weighted_absorption(self, rng):
        """Absorbed entries stay 0 on the weighted path"""
        n, d = 10, 4
        W = rng.uniform(0.05, 0.25, size=(n, d))
        B_m = rng.normal(size=(d, 2))
        B_m[1, 0] = 0.0
        B = solver.update_loadings(rng.normal(size=(n, d)), W, np.zeros(d), rng.normal(size=(n, 2)), B_m, [0.1, 0.1], n)
        assert B[1, 0] == 0.0
        assert np.count_nonzero(B) == 7

    def test_shrinkage_monotone_in_penalty(self, rng):
        """Larger λ never gives a larger loading, and signs are kept"""
        n, d = 15, 6
        X = rng.normal(size=(n, d))
        W = np.full((n, d), 0.125)
        A, _ = np.linalg.qr(rng.normal(size=(n, 2)))
        B_m = rng.normal(size=(d, 2))
        unpenalized = solver.update_loadings(X, W, np.zeros(d), A, B_m, [0.0, 0.0], n)
        previous = np.abs(unpenalized)
        for lam in [0.001, 0.01, 0.05, 0.2, 1.0]:
            B = solver.update_loadings(X, W, np.zeros(d), A, B_m, [lam, lam], n)
            assert np.all(np.abs(B) <= previous + 1e-12)
            assert np.all(B * unpenalized >= 0)
            previous = np.abs(B)


class TestMMStep:
    """Tests for one MM cycle"""

    def test_step_state(self, noise_data, rng):
        """mm_step returns a valid state with orthonormal scores"""
        config = FitConfig(k=2, lambda_=0.01)
        A, _ = np.linalg.qr(rng.normal(size=(20, 2)))
        state, sigma2 = solver.mm_step(noise_data, config, np.zeros(10), A, rng.normal(size=(10, 2)), None, 1)
        assert isinstance(state, WorkingState)
        assert state.iter == 1
        assert sigma2 is None
        assert np.allclose(state.A.T @ state.A, np.eye(2), atol=1e-10)

    def test_majorizer_tangent_and_above(self, noise_data, rng):
        """The bound touches the objective at the tangent and lies above it elsewhere"""
        config = FitConfig(k=2, lambda_=0.02)
        result = solver.fit(noise_data, config.with_updates(max_iter=3))
        tangent = result.model
        assert solver.majorizer_value(noise_data, tangent, tangent) == pytest.approx(
            penalized_objective(noise_data, tangent), rel=1e-10
        )
        for _ in range(20):
            other = tangent.model_copy(update={
                "A": tangent.A + rng.normal(scale=0.2, size=tangent.A.shape),
                "B": tangent.B + rng.normal(scale=0.2, size=tangent.B.shape),
            })
            assert solver.majorizer_value(noise_data, other, tangent) >= penalized_objective(noise_data, other) - 1e-9

    def test_step_decreases_majorizer(self, missing_data, rng):
        """A cycle does not increase the bound built at its start"""
        config = FitConfig(k=2, lambda_=0.01, bound=Bound.TIGHT)
        start = solver.fit(missing_data, config.with_updates(max_iter=2)).model
        state, _ = solver.mm_step(missing_data, config, start.mu, start.A, start.B, None)
        after = start.model_copy(update={"mu": state.mu, "A": state.A, "B": state.B})
        before_value = solver.majorizer_value(missing_data, start, start, Bound.TIGHT)
        after_value = solver.majorizer_value(missing_data, after, start, Bound.TIGHT)
        assert after_value <= before_value + 1e-9 * abs(before_value)

    def test_qr_step_falls_back_when_objective_rises(self, planted_data, rng):
        """A QR step that loses the fitted signal is replaced by the Procrustes step"""
        config = FitConfig(k=1, lambda_=0.005, score_update=ScoreUpdate.QR)
        start = solver.fit(planted_data, config.with_updates(score_update=ScoreUpdate.PROCRUSTES)).model
        unrelated, _ = np.linalg.qr(rng.normal(size=(planted_data.n, 1)))
        with patch("slpca.services.solver.update_scores", return_value=(unrelated, start.B)) as qr_step:
            state, _ = solver.mm_step(planted_data, config, start.mu, start.A, start.B, None)
        procrustes, _ = solver.mm_step(
            planted_data, config.with_updates(score_update=ScoreUpdate.PROCRUSTES), start.mu, start.A, start.B, None
        )
        assert qr_step.call_count == 1
        assert np.allclose(state.A, procrustes.A)
        assert np.allclose(state.B, procrustes.B)

    def test_qr_step_kept_when_it_descends(self, noise_data, rng):
        """Without a penalty the QR step is used as is"""
        config = FitConfig(k=2, score_update=ScoreUpdate.QR)
        A, _ = np.linalg.qr(rng.normal(size=(20, 2)))
        B = rng.normal(size=(10, 2))
        with patch("slpca.services.solver.update_scores_procrustes") as procrustes:
            state, _ = solver.mm_step(noise_data, config, np.zeros(10), A, B, None)
        procrustes.assert_not_called()
        assert np.allclose(state.A.T @ state.A, np.eye(2), atol=1e-10)


class TestExtrapolate:
    """Tests for the extrapolated point between MM iterates"""

    def _iterates(self, rng):
        previous = (rng.normal(size=5), np.linalg.qr(rng.normal(size=(8, 2)))[0], rng.normal(size=(5, 2)))
        B = rng.normal(size=(5, 2))
        B[2, 1] = 0.0
        B[4, 0] = 0.0
        current = (rng.normal(size=5), np.linalg.qr(rng.normal(size=(8, 2)))[0], B)
        return previous, current

    def test_zeros_stay_zero(self, rng):
        """Exact zero loadings are not moved by the extrapolation"""
        previous, current = self._iterates(rng)
        _, _, B = solver._extrapolate(previous, current, 0.7)
        assert B[2, 1] == 0.0
        assert B[4, 0] == 0.0
        assert np.count_nonzero(B) == 8

    def test_scores_orthonormal(self, rng):
        """Extrapolated scores are projected back onto orthonormal columns"""
        previous, current = self._iterates(rng)
        _, A, _ = solver._extrapolate(previous, current, 0.9)
        assert np.allclose(A.T @ A, np.eye(2), atol=1e-10)

    def test_zero_momentum_returns_current(self, rng):
        """β=0 gives back the latest iterate"""
        previous, current = self._iterates(rng)
        mu, A, B = solver._extrapolate(previous, current, 0.0)
        assert np.array_equal(mu, current[0])
        assert np.allclose(A, current[1], atol=1e-10)
        assert np.array_equal(B, current[2])

    def test_intercept_moves_linearly(self, rng):
        """μ moves by β times the last step"""
        previous, current = self._iterates(rng)
        mu, _, _ = solver._extrapolate(previous, current, 0.5)
        assert np.allclose(mu, current[0] + 0.5 * (current[0] - previous[0]))


def _recorded(step, position):
    return [call.args[position] for call in step.call_args_list]


class TestIterationInvariants:
    """Invariants checked at the start of every MM cycle of a fit"""

    def test_zero_loadings_stay_zero(self, noise_data):
        """Once a loading reaches 0 under a penalty it stays 0 in later iterations"""
        config = FitConfig(k=2, lambda_=0.3, tol=1e-14, max_iter=300)
        with patch("slpca.services.solver.mm_step", wraps=solver.mm_step) as step:
            result = solver.fit(noise_data, config)
        loadings = _recorded(step, 4) + [result.model.B]
        absorbed = np.zeros(loadings[0].shape, dtype=bool)
        for B in loadings:
            assert np.all(B[absorbed] == 0.0)
            absorbed |= B == 0.0
        assert absorbed.any()

    @pytest.mark.parametrize("accelerate", [True, False])
    def test_scores_orthonormal(self, planted_data, accelerate):
        """AᵀA = I holds for every iterate"""
        config = FitConfig(k=2, lambda_=0.005, accelerate=accelerate, max_iter=200)
        with patch("slpca.services.solver.mm_step", wraps=solver.mm_step) as step:
            solver.fit(planted_data, config)
        scores = _recorded(step, 3)
        assert len(scores) > 1
        for A in scores:
            assert np.allclose(A.T @ A, np.eye(2), atol=1e-8)

    def test_plain_trace_follows_each_step(self, noise_data):
        """Without extrapolation every trace entry comes from one MM cycle"""
        config = FitConfig(k=2, lambda_=0.01, accelerate=False, max_iter=40)
        with patch("slpca.services.solver.mm_step", wraps=solver.mm_step) as step:
            result = solver.fit(noise_data, config)
        assert step.call_count == result.iterations
        assert result.is_monotone()


DESCENT_CASES = [
    pytest.param(Link.LOGIT, Bound.UNIFORM, 0.0, ScoreUpdate.PROCRUSTES, id="logit-uniform-dense"),
    pytest.param(Link.LOGIT, Bound.UNIFORM, 0.02, ScoreUpdate.PROCRUSTES, id="logit-uniform-sparse"),
    pytest.param(Link.LOGIT, Bound.TIGHT, 0.0, ScoreUpdate.PROCRUSTES, id="logit-tight-dense"),
    pytest.param(Link.LOGIT, Bound.TIGHT, 0.02, ScoreUpdate.PROCRUSTES, id="logit-tight-sparse"),
    pytest.param(Link.PROBIT, Bound.UNIFORM, 0.02, ScoreUpdate.PROCRUSTES, id="probit-sparse"),
    pytest.param(Link.LOGIT, Bound.UNIFORM, 0.0, ScoreUpdate.QR, id="logit-qr-dense"),
    pytest.param(Link.LOGIT, Bound.TIGHT, 0.0, ScoreUpdate.QR, id="logit-tight-qr-dense"),
]


class TestFit:
    """Tests for the full MM fit"""

    @pytest.mark.parametrize("link,bound,lam,score_update", DESCENT_CASES)
    def test_monotone_descent(self, noise_data, link, bound, lam, score_update):
        """Objective never increases"""
        config = FitConfig(k=2, link=link, bound=bound, lambda_=lam, score_update=score_update, max_iter=300)
        result = solver.fit(noise_data, config)
        assert result.is_monotone()
        assert len(result.objective_trace) == result.iterations + 1

    @pytest.mark.parametrize("bound", [Bound.UNIFORM, Bound.TIGHT])
    def test_monotone_with_missing(self, missing_data, bound):
        """Missing cells keep descent"""
        result = solver.fit(missing_data, FitConfig(k=2, bound=bound, lambda_=0.01, max_iter=300))
        assert result.is_monotone()

    def test_mixed_data(self, mixed_data):
        """Mixed columns fit a positive σ² with descent"""
        result = solver.fit(mixed_data, FitConfig(k=2, lambda_=0.01, max_iter=300))
        assert result.model.sigma2 is not None
        assert result.model.sigma2 > 0
        assert result.is_monotone()

    def test_binary_fit_has_no_sigma2(self, noise_data):
        """Binary-only data carry no residual variance"""
        result = solver.fit(noise_data, FitConfig(k=1, max_iter=20))
        assert result.model.sigma2 is None

    def test_orthonormal_scores(self, planted_data):
        """AᵀA = I at the end of a fit"""
        result = solver.fit(planted_data, FitConfig(k=2, lambda_=0.005))
        assert np.allclose(result.model.A.T @ result.model.A, np.eye(2), atol=1e-8)

    def test_trace_matches_final_model(self, planted_data):
        """The last trace entry is the objective of the returned model"""
        result = solver.fit(planted_data, FitConfig(k=1, lambda_=0.005))
        assert result.final_objective == pytest.approx(penalized_objective(planted_data, result.model), rel=1e-10)

    def test_planted_signal_loads_on_support(self, planted_data):
        """The first component concentrates on the six signal columns"""
        result = solver.fit(planted_data, FitConfig(k=1, lambda_=0.002))
        weights = np.abs(result.model.B[:, 0])
        assert weights[:6].min() > weights[6:].max()

    def test_large_penalty_zeroes_loadings(self, noise_data):
        """Pure noise with a large λ gives B = 0 and μ at the empirical logits"""
        config = FitConfig(k=1, lambda_=1.0, tol=1e-14, max_iter=500)
        result = solver.fit(noise_data, config)
        assert np.all(result.model.B == 0)
        assert result.nnz == 0
        means = noise_data.values.mean(axis=0)
        assert np.allclose(result.model.mu, logit(means), atol=1e-6)

    def test_deterministic(self, noise_data):
        """Same seed gives the same fit"""
        config = FitConfig(k=2, lambda_=0.01, seed=3, max_iter=50)
        first = solver.fit(noise_data, config)
        second = solver.fit(noise_data, config)
        assert first.objective_trace == second.objective_trace
        assert np.array_equal(first.model.B, second.model.B)

    def test_restarts_keep_best(self, noise_data):
        """Extra restarts never worsen the best objective"""
        config = FitConfig(k=2, lambda_=0.01, seed=5, max_iter=200)
        single = solver.fit(noise_data, config)
        multi = solver.fit(noise_data, config.with_updates(restarts=3), n_jobs=2)
        assert multi.final_objective <= single.final_objective + 1e-12
        assert 0 <= multi.restart < 3

    def test_warm_start(self, planted_data):
        """Starting from a converged fit does not increase the objective"""
        config = FitConfig(k=1, lambda_=0.005)
        first = solver.fit(planted_data, config)
        again = solver.fit(planted_data, config, init=first.model)
        assert again.objective_trace[0] == pytest.approx(first.final_objective, rel=1e-10)
        assert again.final_objective <= first.final_objective * (1 + 1e-9)

    def test_warm_start_rank_mismatch(self, planted_data):
        """A warm start of the wrong rank is rejected"""
        first = solver.fit(planted_data, FitConfig(k=1, max_iter=5))
        with pytest.raises(DataValidationError):
            solver.fit(planted_data, FitConfig(k=2), init=first.model)

    def test_rank_too_large(self, noise_data):
        """k above min(n, d) raises"""
        with pytest.raises(DataValidationError):
            solver.fit(noise_data, FitConfig(k=11))

    def test_max_iter_reached(self, planted_data, caplog):
        """Stopping at max_iter is reported, not raised"""
        with caplog.at_level(logging.WARNING, logger="slpca.services.solver"):
            result = solver.fit(planted_data, FitConfig(k=2, tol=1e-15, max_iter=3))
        assert not result.converged
        assert result.iterations == 3
        assert "did not converge" in caplog.text

    def test_safe_fit_swallows_library_errors(self, noise_data):
        """safe_fit returns None instead of raising"""
        with patch("slpca.services.solver.fit", side_effect=DegenerateFactorError("singular")):
            assert solver.safe_fit(noise_data, FitConfig(k=1)) is None

    def test_objective_finite_under_separation(self):
        """Perfectly separable columns keep a finite, clamped objective"""
        values = np.zeros((8, 3))
        values[:4, :] = 1.0
        result = solver.fit(BinaryDataMatrix(values=values), FitConfig(k=1, max_iter=200))
        assert math.isfinite(result.final_objective)
        assert np.all(np.isfinite(result.model.B))


def _randomized_data(seed, missing):
    rng = np.random.default_rng(seed)
    n, d = 30, 8
    scores = rng.normal(0.0, 1.5, size=n)
    theta = np.outer(scores, rng.normal(size=d))
    values = (rng.random((n, d)) < 1.0 / (1.0 + np.exp(-theta))).astype(float)
    mask = rng.random((n, d)) < missing
    return BinaryDataMatrix(values=values, mask=mask)


DESCENT_GRID = [
    pytest.param(link, bound, missing, lam, seed, id=f"{link.value}-{bound.value}-{missing}-{lam}-{seed}")
    for link in Link
    for bound in Bound
    for missing in (0.0, 0.1, 0.5)
    for lam in (0.0, 0.001, 0.01)
    for seed in range(6)
]


class TestDescentGrid:
    """Randomized descent checks over links, bounds, missingness and penalties"""

    @pytest.mark.parametrize("link,bound,missing,lam,seed", DESCENT_GRID)
    def test_trace_nonincreasing(self, link, bound, missing, lam, seed):
        """Every objective trace is nonincreasing within 1e-9 relative slack"""
        data = _randomized_data(seed, missing)
        config = FitConfig(k=2, link=link, bound=bound, lambda_=lam, seed=seed, max_iter=150)
        result = solver.fit(data, config)
        assert result.is_monotone(rtol=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_qr_with_penalty_nonincreasing(self, seed):
        """The QR score update stays monotone when loadings are penalized"""
        data = BinaryDataMatrix(values=np.random.default_rng(seed).integers(0, 2, size=(20, 10)).astype(float))
        config = FitConfig(k=2, lambda_=0.01, score_update=ScoreUpdate.QR, seed=seed, max_iter=200)
        assert solver.fit(data, config).is_monotone()


class TestEmptyMask:
    """An empty missingness mask leaves the fit untouched"""

    @pytest.mark.parametrize("seed", range(20))
    def test_bitwise_identical_to_complete_path(self, seed):
        """Fits with and without the imputation step agree bit for bit"""
        rng = np.random.default_rng(seed)
        values = rng.integers(0, 2, size=(15, 6)).astype(float)
        data = BinaryDataMatrix.from_array(values, mask=np.zeros(values.shape, dtype=bool))
        config = FitConfig(k=2, lambda_=0.005, seed=seed, max_iter=60)
        with_mask = solver.fit(data, config)
        with patch("slpca.services.solver.impute_missing", side_effect=lambda X, theta, mask: X):
            complete = solver.fit(BinaryDataMatrix(values=values), config)
        assert not data.has_missing
        assert with_mask.objective_trace == complete.objective_trace
        assert np.array_equal(with_mask.model.mu, complete.model.mu)
        assert np.array_equal(with_mask.model.A, complete.model.A)
        assert np.array_equal(with_mask.model.B, complete.model.B)


def _tiny_instance(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(3, 6)), int(rng.integers(2, 5))
    while True:
        values = rng.integers(0, 2, size=(n, d)).astype(float)
        counts = values.sum(axis=0)
        if np.all((counts > 0) & (counts < n)):
            return BinaryDataMatrix(values=values)


def _derivative_free_best(data, seed, starts=5):
    n, d = data.n, data.d

    def objective(z):
        theta = z[:d][None, :] + np.outer(z[d:d + n], z[d + n:])
        return -log_likelihood_theta(data, theta, Link.LOGIT, None, 1e-12)

    rng = np.random.default_rng(seed + 1000)
    best = math.inf
    for _ in range(starts):
        first = minimize(objective, rng.normal(size=2 * d + n), method="Powell",
                         options={"xtol": 1e-10, "ftol": 1e-12, "maxfev": 5000})
        polished = minimize(objective, first.x, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxfev": 5000})
        best = min(best, first.fun, polished.fun)
    return best


class TestDerivativeFreeAgreement:
    """Rank-one fits on tiny matrices against a general-purpose optimizer"""

    @pytest.mark.parametrize("seed", range(20))
    def test_objective_not_worse(self, seed):
        """The MM fit is within 1e-3 of the best derivative-free objective"""
        data = _tiny_instance(seed)
        config = FitConfig(k=1, bound=Bound.TIGHT, tol=1e-12, max_iter=2000, restarts=3, seed=seed)
        result = solver.fit(data, config, n_jobs=1)
        assert result.is_monotone()
        assert result.final_objective <= _derivative_free_best(data, seed) + 1e-3
