"""Tests for the robust least-squares engine."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from scalepal.exceptions import (
    DegenerateProblem,
    InvalidResampleCount,
    NonFiniteResidual,
    NonPositiveCoordinate,
    NotConverged,
    TooFewPoints,
    ValidationError,
)
from scalepal.fit_engine import (
    FitOptions,
    FitProblem,
    FitResult,
    PowerLawFit,
    Transform,
    bootstrap_ci,
    fit,
    fit_power_law,
    huber_objective,
    huber_weights,
    numerical_jacobian,
    start_grid,
)


def decay_residuals(params, data):
    """Residuals of y = a * exp(-b x) + c."""
    a, b, c = params
    x, y = data[:, 0], data[:, 1]
    return a * np.exp(-b * x) + c - y


def decay_data(noise=0.0, seed=0):
    """Samples of 2 exp(-0.5 x) + 1."""
    x = np.linspace(0.0, 8.0, 40)
    y = 2.0 * np.exp(-0.5 * x) + 1.0
    if noise:
        y = y + noise * np.random.default_rng(seed).standard_normal(len(x))
    return np.column_stack([x, y])


def decay_problem(starts=None, **kwargs):
    """The exponential decay problem with log-positive parameters."""
    return FitProblem(
        residual_fn=decay_residuals,
        param_count=3,
        transforms=(Transform.LOG_POSITIVE,) * 3,
        starts=starts or [np.array([1.0, 1.0, 0.5])],
        param_names=("a", "b", "c"),
        **kwargs,
    )


class TestHuber:
    """Tests for the Huber loss helpers."""

    def test_quadratic_inside_delta(self):
        """Test the objective is half the sum of squares for small residuals."""
        r = np.array([0.1, -0.2, 0.05])
        assert huber_objective(r, 1.0) == pytest.approx(0.5 * np.sum(r ** 2))

    def test_linear_outside_delta(self):
        """Test the linear branch."""
        assert huber_objective(np.array([3.0]), 1.0) == pytest.approx(2.5)

    def test_weights(self):
        """Test IRLS weights."""
        np.testing.assert_allclose(huber_weights(np.array([0.5, -4.0]), 1.0), [1.0, 0.25])


class TestNumericalJacobian:
    """Tests for numerical_jacobian."""

    def test_linear_map(self):
        """Test the Jacobian of a linear map is its matrix."""
        matrix = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]])
        jac = numerical_jacobian(lambda x: matrix @ x, np.array([0.3, 2.0]))
        np.testing.assert_allclose(jac, matrix, atol=1e-8)

    def test_nonlinear(self):
        """Test against an analytic derivative."""
        jac = numerical_jacobian(lambda x: np.array([np.exp(x[0]) * x[1]]), np.array([0.5, 2.0]))
        np.testing.assert_allclose(jac, [[2.0 * np.exp(0.5), np.exp(0.5)]], rtol=1e-6)


class TestFitProblem:
    """Tests for problem validation."""

    def test_transform_count(self):
        """Test the transform count must match."""
        with pytest.raises(ValidationError):
            FitProblem(decay_residuals, 3, (Transform.IDENTITY,), [np.zeros(3)])

    def test_log_start_must_be_positive(self):
        """Test log-parameterized starts are positive."""
        with pytest.raises(ValidationError):
            decay_problem(starts=[np.array([1.0, -1.0, 1.0])])

    def test_delta_must_be_positive(self):
        """Test the Huber threshold check."""
        with pytest.raises(ValidationError):
            decay_problem(huber_delta=0.0)

    def test_internal_round_trip(self):
        """Test the parameter transform is invertible."""
        problem = decay_problem()
        params = np.array([2.0, 0.5, 1.0])
        np.testing.assert_allclose(problem.to_natural(problem.to_internal(params)), params)

    def test_start_grid(self):
        """Test the cartesian product of axes."""
        grid = start_grid([[1.0, 2.0], [3.0], [4.0, 5.0]])
        assert len(grid) == 4
        np.testing.assert_array_equal(grid[0], [1.0, 3.0, 4.0])


class TestFit:
    """Tests for fit."""

    def test_recovers_exact_parameters(self):
        """Test noiseless data is fitted exactly."""
        result = fit(decay_problem(), decay_data())
        assert result.converged
        np.testing.assert_allclose(result.params, [2.0, 0.5, 1.0], rtol=1e-5)
        assert result.n_data == 40

    def test_analytic_jacobian(self):
        """Test a user Jacobian gives the same answer."""

        def jacobian(params, data):
            a, b, _ = params
            x = data[:, 0]
            e = np.exp(-b * x)
            return np.column_stack([e, -a * x * e, np.ones_like(x)])

        result = fit(decay_problem(jacobian_fn=jacobian), decay_data())
        np.testing.assert_allclose(result.params, [2.0, 0.5, 1.0], rtol=1e-5)

    def test_multi_start_keeps_best(self):
        """Test screening and polishing over many starts."""
        starts = start_grid([[0.5, 5.0], [0.05, 3.0], [0.1, 2.0]])
        options = FitOptions(polish_top=2, screen_iter=20)
        result = fit(decay_problem(starts=starts), decay_data(), options)
        np.testing.assert_allclose(result.params, [2.0, 0.5, 1.0], rtol=1e-4)

    def test_workers_do_not_change_result(self):
        """Test the thread pool gives the same fit."""
        starts = start_grid([[0.5, 5.0], [0.05, 3.0], [0.1, 2.0]])
        serial = fit(decay_problem(starts=starts), decay_data(0.01))
        pooled = fit(decay_problem(starts=starts), decay_data(0.01), FitOptions(workers=4))
        np.testing.assert_array_equal(serial.params, pooled.params)
        assert serial.start_index == pooled.start_index

    def test_robust_to_outlier(self):
        """Test a single outlier barely moves a Huber fit."""
        data = decay_data()
        data[5, 1] += 5.0
        result = fit(decay_problem(huber_delta=1e-3), data)
        np.testing.assert_allclose(result.params, [2.0, 0.5, 1.0], rtol=2e-2)

    def test_row_order_does_not_matter(self):
        """Test shuffled rows give the same fit."""
        data = decay_data(0.01)
        shuffled = data[np.random.default_rng(4).permutation(len(data))]
        ordered = fit(decay_problem(), data)
        permuted = fit(decay_problem(), shuffled)
        np.testing.assert_allclose(permuted.params, ordered.params, rtol=1e-4)
        assert permuted.objective == pytest.approx(ordered.objective, rel=1e-6)

    def test_too_few_rows(self):
        """Test fewer rows than parameters."""
        with pytest.raises(DegenerateProblem):
            fit(decay_problem(), decay_data()[:2])

    def test_non_finite_row(self):
        """Test the offending row is reported."""
        data = decay_data()
        data[7, 1] = np.nan
        with pytest.raises(NonFiniteResidual) as info:
            fit(decay_problem(), data)
        assert info.value.row == 7

    def test_as_dict(self):
        """Test the JSON-ready form names parameters."""
        result = fit(decay_problem(), decay_data())
        payload = result.as_dict()
        assert set(payload["params"]) == {"a", "b", "c"}
        assert "ci" not in payload


class TestBootstrap:
    """Tests for bootstrap_ci."""

    def test_interval_contains_estimate(self):
        """Test the intervals bracket the point estimate."""
        data = decay_data(noise=0.02)
        problem = decay_problem()
        result = fit(problem, data)
        boot = bootstrap_ci(problem, data, result, resamples=100, seed=1)
        assert boot.resamples > 0
        assert np.all(boot.ci_low <= boot.params)
        assert np.all(boot.params <= boot.ci_high)
        assert boot.as_dict()["ci_level"] == pytest.approx(0.95)

    def test_deterministic(self):
        """Test a fixed seed gives identical intervals."""
        data = decay_data(noise=0.02)
        problem = decay_problem()
        result = fit(problem, data)
        first = bootstrap_ci(problem, data, result, resamples=100, seed=3)
        second = bootstrap_ci(problem, data, result, resamples=100, seed=3)
        np.testing.assert_array_equal(first.ci_low, second.ci_low)
        np.testing.assert_array_equal(first.ci_high, second.ci_high)

    def test_too_few_resamples(self):
        """Test the resample floor."""
        problem = decay_problem()
        result = fit(problem, decay_data())
        with pytest.raises(InvalidResampleCount):
            bootstrap_ci(problem, decay_data(), result, resamples=10)

    def test_needs_converged_fit(self):
        """Test unconverged fits are refused."""
        result = FitResult(np.array([2.0, 0.5, 1.0]), 0.0, False, 5, 40)
        with pytest.raises(NotConverged):
            bootstrap_ci(decay_problem(), decay_data(), result, resamples=100)


class TestPowerLaw:
    """Tests for fit_power_law."""

    def test_exact_law(self):
        """Test an exact power law is recovered."""
        points = [(x, 3.0 * x ** -0.4) for x in (1e2, 1e3, 1e4, 1e5)]
        law = fit_power_law(points)
        assert law.lam == pytest.approx(3.0)
        assert law.alpha == pytest.approx(0.4)
        assert law.stderr == pytest.approx(0.0, abs=1e-10)
        assert law.loss_range == (1e2, 1e5)
        assert law.predict(1e6) == pytest.approx(3.0 * 1e6 ** -0.4)

    def test_negative_exponent(self):
        """Test increasing laws give a negative alpha."""
        law = fit_power_law([(x, 0.1 * x ** 0.3) for x in (1.0, 10.0, 100.0)])
        assert law.alpha == pytest.approx(-0.3)

    @pytest.mark.parametrize("factor", [1e-3, 7.0, 1e4])
    def test_rescaling_x(self, factor):
        """Test scaling x by c keeps alpha and multiplies lam by c**alpha."""
        rng = np.random.default_rng(3)
        xs = np.logspace(2, 6, 12)
        ys = 5.0 * xs ** -0.3 * np.exp(0.05 * rng.standard_normal(len(xs)))
        base = fit_power_law(list(zip(xs, ys)))
        scaled = fit_power_law(list(zip(factor * xs, ys)))
        assert scaled.alpha == pytest.approx(base.alpha, rel=1e-9)
        assert scaled.lam == pytest.approx(base.lam * factor ** base.alpha, rel=1e-9)

    def test_dict_round_trip(self):
        """Test rebuilding from as_dict."""
        law = fit_power_law([(x, 2.0 / x) for x in (1.0, 2.0, 4.0)])
        assert PowerLawFit.from_dict(law.as_dict()) == law

    def test_too_few_points(self):
        """Test the minimum point count."""
        with pytest.raises(TooFewPoints):
            fit_power_law([(1.0, 1.0), (2.0, 0.5)])

    def test_non_positive(self):
        """Test coordinates must be positive."""
        with pytest.raises(NonPositiveCoordinate):
            fit_power_law([(1.0, 1.0), (2.0, 0.0), (3.0, 0.3)])

    def test_equal_x(self):
        """Test a vertical point set."""
        with pytest.raises(DegenerateProblem):
            fit_power_law([(2.0, 1.0), (2.0, 0.5), (2.0, 0.3)])
