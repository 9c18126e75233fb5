"""Robust nonlinear least squares: multi-start Levenberg-Marquardt with Huber loss."""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from tqdm import tqdm

from scalepal.constants import (
    DEFAULT_CI_LEVEL,
    DEFAULT_GRAD_TOL,
    DEFAULT_HUBER_DELTA,
    DEFAULT_MAX_ITER,
    DEFAULT_RESAMPLES,
    DEFAULT_STEP_TOL,
    FINITE_DIFF_STEP,
    MIN_POWER_LAW_POINTS,
    MIN_RESAMPLES,
    POLISH_TOP,
    SCREEN_ITER,
)
from scalepal.exceptions import (
    DegenerateProblem,
    InvalidResampleCount,
    NonFiniteResidual,
    NonPositiveCoordinate,
    NotConverged,
    TooFewPoints,
    ValidationError,
)

logger = logging.getLogger(__name__)

ResidualFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Damping bounds for the Levenberg-Marquardt loop
LAMBDA_INIT = 1e-3
LAMBDA_MIN = 1e-12
LAMBDA_MAX = 1e16


class Transform(Enum):
    """How a parameter is represented inside the optimizer."""

    LOG_POSITIVE = "log_positive"
    IDENTITY = "identity"


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings."""

    max_iter: int = DEFAULT_MAX_ITER
    grad_tol: float = DEFAULT_GRAD_TOL
    step_tol: float = DEFAULT_STEP_TOL
    workers: int = 1
    screen_iter: int = SCREEN_ITER
    polish_top: int = POLISH_TOP


@dataclass
class FitProblem:
    """
    A robust least-squares problem.

    residual_fn maps (natural parameter vector, data array) to one residual
    per data row. jacobian_fn, when given, returns the analytic Jacobian of
    the residuals with respect to the natural parameters.
    """

    residual_fn: ResidualFn
    param_count: int
    transforms: Tuple[Transform, ...]
    starts: Sequence[np.ndarray]
    huber_delta: float = DEFAULT_HUBER_DELTA
    jacobian_fn: Optional[JacobianFn] = None
    param_names: Tuple[str, ...] = ()

    def __post_init__(self):
        """Validate starts and transforms."""
        if self.param_count < 1:
            raise ValidationError("a fit needs at least one parameter")
        self.transforms = tuple(Transform(t) for t in self.transforms)
        if len(self.transforms) != self.param_count:
            raise ValidationError(
                f"{len(self.transforms)} transforms given for {self.param_count} parameters"
            )
        if not self.huber_delta > 0:
            raise ValidationError(f"huber_delta must be positive, got {self.huber_delta}")
        if not len(self.starts):
            raise ValidationError("a fit needs at least one start")
        starts = []
        for index, start in enumerate(self.starts):
            start = np.asarray(start, dtype=float)
            if start.shape != (self.param_count,):
                raise ValidationError(
                    f"start {index} has shape {start.shape}, expected ({self.param_count},)"
                )
            for value, transform in zip(start, self.transforms):
                if not math.isfinite(value):
                    raise ValidationError(f"start {index} is not finite")
                if transform is Transform.LOG_POSITIVE and value <= 0:
                    raise ValidationError(
                        f"start {index} has a non-positive log-parameterized value"
                    )
            starts.append(start)
        self.starts = starts
        if not self.param_names:
            self.param_names = tuple(f"p{i}" for i in range(self.param_count))

    def to_internal(self, params: np.ndarray) -> np.ndarray:
        """Map natural parameters to optimizer coordinates."""
        internal = np.array(params, dtype=float)
        for i, transform in enumerate(self.transforms):
            if transform is Transform.LOG_POSITIVE:
                internal[i] = math.log(internal[i])
        return internal

    def to_natural(self, internal: np.ndarray) -> np.ndarray:
        """Map optimizer coordinates back to natural parameters."""
        params = np.array(internal, dtype=float)
        with np.errstate(over="ignore"):
            for i, transform in enumerate(self.transforms):
                if transform is Transform.LOG_POSITIVE:
                    params[i] = np.exp(params[i])
        return params

    def chain_factors(self, params: np.ndarray) -> np.ndarray:
        """Derivative of natural parameters with respect to optimizer coordinates."""
        return np.array(
            [
                value if transform is Transform.LOG_POSITIVE else 1.0
                for value, transform in zip(params, self.transforms)
            ]
        )


@dataclass
class FitResult:
    """Outcome of a fit, optionally carrying bootstrap intervals."""

    params: np.ndarray
    objective: float
    converged: bool
    iterations: int
    n_data: int
    start_index: int = 0
    ci_low: Optional[np.ndarray] = None
    ci_high: Optional[np.ndarray] = None
    ci_level: Optional[float] = None
    resamples: int = 0
    param_names: Tuple[str, ...] = field(default=())

    def as_dict(self) -> Dict[str, object]:
        """Return a JSON-ready description of the fit."""
        names = self.param_names or tuple(f"p{i}" for i in range(len(self.params)))
        result: Dict[str, object] = {
            "params": {n: float(v) for n, v in zip(names, self.params)},
            "objective": float(self.objective),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "n_data": int(self.n_data),
            "start_index": int(self.start_index),
        }
        if self.ci_low is not None and self.ci_high is not None:
            result["ci"] = {
                n: [float(lo), float(hi)]
                for n, lo, hi in zip(names, self.ci_low, self.ci_high)
            }
            result["ci_level"] = self.ci_level
            result["resamples"] = self.resamples
        return result


@dataclass(frozen=True)
class PowerLawFit:
    """y = lam / x**alpha fitted by least squares in log-log space."""

    lam: float
    alpha: float
    stderr: float
    alpha_stderr: float
    loss_range: Tuple[float, float]
    n_points: int

    def predict(self, x):
        """Evaluate the fitted law at x (scalar or array)."""
        return self.lam * np.power(x, -self.alpha)

    def as_dict(self) -> Dict[str, object]:
        """Return a JSON-ready description of the fit."""
        return {
            "lambda": self.lam,
            "alpha": self.alpha,
            "stderr": self.stderr,
            "alpha_stderr": self.alpha_stderr,
            "loss_range": list(self.loss_range),
            "n_points": self.n_points,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "PowerLawFit":
        """Rebuild a fit from as_dict output."""
        low, high = data["loss_range"]  # type: ignore[misc]
        return cls(
            lam=float(data["lambda"]),  # type: ignore[arg-type]
            alpha=float(data["alpha"]),  # type: ignore[arg-type]
            stderr=float(data.get("stderr", 0.0)),  # type: ignore[arg-type]
            alpha_stderr=float(data.get("alpha_stderr", 0.0)),  # type: ignore[arg-type]
            loss_range=(float(low), float(high)),
            n_points=int(data.get("n_points", 0)),  # type: ignore[arg-type]
        )


def huber_weights(residuals: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weights of the Huber loss: 1 inside delta, delta/|r| outside."""
    magnitude = np.abs(residuals)
    return np.where(magnitude <= delta, 1.0, delta / np.maximum(magnitude, delta))


def huber_objective(residuals: np.ndarray, delta: float) -> float:
    """
    Sum of Huber losses.

    Equals half the sum of squares when every residual lies within delta.
    """
    magnitude = np.abs(residuals)
    quadratic = 0.5 * magnitude ** 2
    linear = delta * (magnitude - 0.5 * delta)
    return float(np.sum(np.where(magnitude <= delta, quadratic, linear)))


def numerical_jacobian(
    func: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    rel_step: float = FINITE_DIFF_STEP,
) -> np.ndarray:
    """
    Central-difference Jacobian of a vector function.

    Args:
        func: Function from a parameter vector to a residual vector.
        x: Point to differentiate at.
        rel_step: Step is rel_step * max(1, |x_j|) per coordinate.

    Returns:
        Array of shape (len(func(x)), len(x)).
    """
    x = np.asarray(x, dtype=float)
    columns = []
    for j in range(len(x)):
        h = rel_step * max(1.0, abs(x[j]))
        forward = x.copy()
        backward = x.copy()
        forward[j] += h
        backward[j] -= h
        columns.append((func(forward) - func(backward)) / (2.0 * h))
    return np.column_stack(columns)


def start_grid(axes: Sequence[Sequence[float]]) -> List[np.ndarray]:
    """Cartesian product of per-parameter start values."""
    return [np.array(point, dtype=float) for point in itertools.product(*axes)]


def _check_data(problem: FitProblem, data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if len(data) == 0:
        raise DegenerateProblem("no data rows to fit")
    if len(data) < problem.param_count:
        raise DegenerateProblem(
            f"{len(data)} data rows for {problem.param_count} parameters"
        )
    bad = np.flatnonzero(~np.all(np.isfinite(data), axis=1))
    if len(bad):
        raise NonFiniteResidual(int(bad[0]))
    return data


class _Solver:
    """Levenberg-Marquardt iterations for one problem and data set."""

    def __init__(self, problem: FitProblem, data: np.ndarray, options: FitOptions):
        self.problem = problem
        self.data = data
        self.options = options

    def residuals(self, internal: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            params = self.problem.to_natural(internal)
            return np.asarray(self.problem.residual_fn(params, self.data), dtype=float)

    def jacobian(self, internal: np.ndarray) -> np.ndarray:
        if self.problem.jacobian_fn is not None:
            params = self.problem.to_natural(internal)
            with np.errstate(all="ignore"):
                natural = np.asarray(self.problem.jacobian_fn(params, self.data), dtype=float)
            return natural * self.problem.chain_factors(params)[None, :]
        return numerical_jacobian(self.residuals, internal)

    def run(self, internal: np.ndarray, max_iter: int) -> Tuple[np.ndarray, float, bool, int]:
        """
        Iterate from an internal point.

        Returns:
            Tuple of (internal point, objective, converged, iterations).
        """
        delta = self.problem.huber_delta
        grad_tol = self.options.grad_tol
        step_tol = self.options.step_tol

        u = np.array(internal, dtype=float)
        r = self.residuals(u)
        f = huber_objective(r, delta)
        lam = LAMBDA_INIT
        converged = False
        iterations = 0

        while iterations < max_iter:
            iterations += 1
            jac = self.jacobian(u)
            if not np.all(np.isfinite(jac)):
                break
            w = huber_weights(r, delta)
            grad = jac.T @ (w * r)
            if np.linalg.norm(grad) < grad_tol:
                converged = True
                break

            hessian = jac.T @ (w[:, None] * jac)
            scale = np.maximum(np.diag(hessian), 1e-12)
            accepted = False
            tiny_step = False
            while lam <= LAMBDA_MAX:
                try:
                    step = np.linalg.solve(hessian + lam * np.diag(scale), -grad)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                step_norm = float(np.linalg.norm(step))
                trial = u + step
                r_trial = self.residuals(trial)
                f_trial = huber_objective(r_trial, delta) if np.all(np.isfinite(r_trial)) else math.inf
                if f_trial < f:
                    u, r, f = trial, r_trial, f_trial
                    lam = max(lam / 10.0, LAMBDA_MIN)
                    accepted = True
                    tiny_step = step_norm < step_tol * (1.0 + np.linalg.norm(u))
                    break
                if step_norm < step_tol * (1.0 + np.linalg.norm(u)):
                    tiny_step = True
                    break
                lam *= 10.0

            if tiny_step:
                converged = True
                break
            if not accepted:
                logger.debug("damping exhausted after %d iterations", iterations)
                break

        return u, f, converged, iterations


def _fit_from_start(
    problem: FitProblem, data: np.ndarray, options: FitOptions, start: np.ndarray, max_iter: int
) -> Optional[Tuple[np.ndarray, float, bool, int]]:
    solver = _Solver(problem, data, options)
    internal = problem.to_internal(start)
    if not np.all(np.isfinite(solver.residuals(internal))):
        return None
    return solver.run(internal, max_iter)


def fit(problem: FitProblem, data, options: Optional[FitOptions] = None) -> FitResult:
    """
    Fit a problem from every start and keep the best result.

    Starts are first run for a short screening budget; the best few are then
    polished to full convergence. Ties are broken by start index.

    Args:
        problem: The problem to solve.
        data: Array of data rows.
        options: Optimizer settings.

    Returns:
        The best FitResult over all starts.

    Raises:
        DegenerateProblem: If there are fewer rows than parameters.
        NonFiniteResidual: If a data row is not finite, or no start gives
            finite residuals.
    """
    options = options or FitOptions()
    data = _check_data(problem, data)
    starts = problem.starts

    screen = len(starts) > options.polish_top
    first_budget = min(options.screen_iter, options.max_iter) if screen else options.max_iter

    def run_start(index: int):
        return _fit_from_start(problem, data, options, starts[index], first_budget)

    indices = list(range(len(starts)))
    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            outcomes = list(pool.map(run_start, indices))
    else:
        outcomes = [run_start(i) for i in indices]

    finished = [(i, o) for i, o in zip(indices, outcomes) if o is not None]
    if not finished:
        solver = _Solver(problem, data, options)
        r = solver.residuals(problem.to_internal(starts[0]))
        raise NonFiniteResidual(int(np.flatnonzero(~np.isfinite(r))[0]))
    logger.debug("%d of %d starts gave finite residuals", len(finished), len(starts))

    if screen:
        ranked = sorted(finished, key=lambda item: (item[1][1], item[0]))
        polished = []
        solver = _Solver(problem, data, options)
        for index, (u, f, converged, iters) in ranked[: options.polish_top]:
            if not converged:
                u, f, converged, more = solver.run(u, options.max_iter)
                iters += more
            polished.append((index, (u, f, converged, iters)))
        finished = polished + ranked[options.polish_top:]

    index, (u, f, converged, iterations) = min(
        finished, key=lambda item: (item[1][1], item[0])
    )
    result = FitResult(
        params=problem.to_natural(u),
        objective=float(f),
        converged=bool(converged),
        iterations=int(iterations),
        n_data=len(data),
        start_index=index,
        param_names=problem.param_names,
    )
    logger.info(
        "fit finished: objective %.3g, converged %s after %d iterations (start %d)",
        result.objective, result.converged, result.iterations, index,
    )
    return result


def bootstrap_ci(
    problem: FitProblem,
    data,
    fit_result: FitResult,
    resamples: int = DEFAULT_RESAMPLES,
    level: float = DEFAULT_CI_LEVEL,
    seed: int = 0,
    options: Optional[FitOptions] = None,
    progress: bool = False,
) -> FitResult:
    """
    Attach percentile bootstrap intervals to a converged fit.

    Each resample draws data rows with replacement and refits from the full
    fit's parameters. Resample indices come from numpy's PCG64 generator
    seeded with `seed`, so the intervals are deterministic.

    Args:
        problem: The fitted problem.
        data: The data the fit used.
        fit_result: A converged fit of problem on data.
        resamples: Number of resamples (at least 100).
        level: Interval coverage in (0, 1).
        seed: Generator seed.
        options: Optimizer settings for the refits.
        progress: Show a tqdm progress bar.

    Returns:
        A copy of fit_result with ci_low and ci_high set.

    Raises:
        InvalidResampleCount: If resamples is below 100.
        NotConverged: If fit_result did not converge.
    """
    if resamples < MIN_RESAMPLES:
        raise InvalidResampleCount(
            f"bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}"
        )
    if not 0.0 < level < 1.0:
        raise ValidationError(f"confidence level must lie in (0, 1), got {level}")
    if not fit_result.converged:
        raise NotConverged("bootstrap intervals need a converged fit")

    options = options or FitOptions()
    data = _check_data(problem, data)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(data), size=(resamples, len(data)))
    warm = replace(problem, starts=[np.asarray(fit_result.params, dtype=float)])

    def refit(rows: np.ndarray) -> Optional[np.ndarray]:
        outcome = _fit_from_start(warm, data[rows], options, warm.starts[0], options.max_iter)
        if outcome is None:
            return None
        params = warm.to_natural(outcome[0])
        return params if np.all(np.isfinite(params)) else None

    samples: List[Optional[np.ndarray]] = []
    with tqdm(total=resamples, desc="bootstrap", disable=not progress, leave=False) as bar:
        if options.workers > 1:
            with ThreadPoolExecutor(max_workers=options.workers) as pool:
                for params in pool.map(refit, draws):
                    samples.append(params)
                    bar.update(1)
        else:
            for rows in draws:
                samples.append(refit(rows))
                bar.update(1)

    kept = np.array([s for s in samples if s is not None])
    failed = resamples - len(kept)
    if failed:
        logger.warning("%d of %d bootstrap resamples failed and were skipped", failed, resamples)
    if len(kept) == 0:
        raise NotConverged("every bootstrap resample failed")

    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(kept, [tail, 100.0 - tail], axis=0)
    params = np.asarray(fit_result.params, dtype=float)
    return replace(
        fit_result,
        ci_low=np.minimum(low, params),
        ci_high=np.maximum(high, params),
        ci_level=level,
        resamples=len(kept),
    )


def fit_power_law(points: Sequence[Tuple[float, float]]) -> PowerLawFit:
    """
    Fit y = lam / x**alpha by ordinary least squares on (log x, log y).

    Args:
        points: (x, y) pairs with positive coordinates.

    Returns:
        A PowerLawFit; alpha may take any sign.

    Raises:
        TooFewPoints: If fewer than three points are given.
        NonPositiveCoordinate: If any coordinate is not positive.
        DegenerateProblem: If all x values are equal.
    """
    pairs = np.asarray(list(points), dtype=float)
    if len(pairs) < MIN_POWER_LAW_POINTS:
        raise TooFewPoints(
            f"power-law fit needs at least {MIN_POWER_LAW_POINTS} points, got {len(pairs)}"
        )
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValidationError("power-law points must be (x, y) pairs")
    if not np.all(np.isfinite(pairs)) or np.any(pairs <= 0):
        raise NonPositiveCoordinate("power-law fit needs finite positive coordinates")

    x, y = pairs[:, 0], pairs[:, 1]
    if np.all(x == x[0]):
        raise DegenerateProblem("power-law fit needs at least two distinct x values")

    log_x, log_y = np.log(x), np.log(y)
    regression = stats.linregress(log_x, log_y)
    residuals = log_y - (regression.intercept + regression.slope * log_x)
    dof = len(pairs) - 2
    stderr = float(np.sqrt(np.sum(residuals ** 2) / dof)) if dof > 0 else 0.0

    return PowerLawFit(
        lam=float(np.exp(regression.intercept)),
        alpha=float(-regression.slope),
        stderr=stderr,
        alpha_stderr=float(regression.stderr),
        loss_range=(float(x.min()), float(x.max())),
        n_points=len(pairs),
    )
