"""Parametric loss laws for dense and mixture-of-experts models."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from scalepal.constants import (
    DEFAULT_CI_LEVEL,
    DEFAULT_HUBER_DELTA,
    EXPERT_EXPONENT_STARTS,
    EXPONENT_STARTS,
    FLOOR_FRACTIONS,
    MAX_EXPERTS,
    START_FACTORS,
)
from scalepal.exceptions import (
    ExpertCountOutOfRange,
    InputFileNotFound,
    InsufficientDiversity,
    InvalidCoefficients,
    InvalidGrid,
    MissingField,
    NonPositiveArgument,
    NotConverged,
    ParseError,
    ValidationError,
)
from scalepal.file_utils import PathLike
from scalepal.fit_engine import (
    FitOptions,
    FitProblem,
    FitResult,
    Transform,
    bootstrap_ci,
    fit,
    start_grid,
)
from scalepal.models import RunSet, TrainingRecord

logger = logging.getLogger(__name__)

LOG10 = math.log(10.0)


class LawName(Enum):
    """The supported loss laws."""

    DENSE = "dense"
    MOE = "moe"
    CLARK = "clark"
    QUADRATIC = "quadratic"


class ScaleField(Enum):
    """Record field used as the scale argument of a law."""

    MODEL_SCALE = "model_scale"
    PARAMS = "params"


def _check_finite(coeffs, non_negative: Sequence[str] = ()) -> None:
    for item in fields(coeffs):
        value = getattr(coeffs, item.name)
        if not math.isfinite(value):
            raise InvalidCoefficients(f"{item.name} must be finite, got {value}")
        if item.name in non_negative and value < 0:
            raise InvalidCoefficients(f"{item.name} must be non-negative, got {value}")


@dataclass(frozen=True)
class DenseLawCoefficients:
    """L = A / scale**alpha + B / D**beta + sigma."""

    A: float
    B: float
    alpha: float
    beta: float
    sigma: float

    law = LawName.DENSE
    names = ("A", "B", "alpha", "beta", "sigma")

    def __post_init__(self):
        _check_finite(self, ("A", "B", "sigma"))


@dataclass(frozen=True)
class MoeLawCoefficients:
    """L = A / (N**alpha * E**gamma) + B / D**beta + sigma, for 1 <= E < 100."""

    A: float
    B: float
    alpha: float
    beta: float
    gamma: float
    sigma: float

    law = LawName.MOE
    names = ("A", "B", "alpha", "beta", "gamma", "sigma")

    def __post_init__(self):
        _check_finite(self, ("A", "B", "sigma"))

    def at_experts(self, experts: float) -> DenseLawCoefficients:
        """Collapse to a dense law at a fixed expert count."""
        check_experts(experts)
        return DenseLawCoefficients(
            A=self.A / experts ** self.gamma,
            B=self.B,
            alpha=self.alpha,
            beta=self.beta,
            sigma=self.sigma,
        )


@dataclass(frozen=True)
class ClarkSeparableCoefficients:
    """log10 L = d - a log10 P - b log10 E."""

    a: float
    b: float
    d: float

    law = LawName.CLARK
    names = ("a", "b", "d")

    def __post_init__(self):
        _check_finite(self)


@dataclass(frozen=True)
class QuadraticInteractionCoefficients:
    """log10 L = d - a log10 P - (b + c log10 P) log10 E."""

    a: float
    b: float
    c: float
    d: float

    law = LawName.QUADRATIC
    names = ("a", "b", "c", "d")

    def __post_init__(self):
        _check_finite(self)


LawCoefficients = Union[
    DenseLawCoefficients,
    MoeLawCoefficients,
    ClarkSeparableCoefficients,
    QuadraticInteractionCoefficients,
]

COEFFICIENT_TYPES = {
    LawName.DENSE: DenseLawCoefficients,
    LawName.MOE: MoeLawCoefficients,
    LawName.CLARK: ClarkSeparableCoefficients,
    LawName.QUADRATIC: QuadraticInteractionCoefficients,
}


def _positive(name: str, value):
    array = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(array)) or np.any(array <= 0):
        raise NonPositiveArgument(name)
    return array


def _result(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def check_experts(experts) -> np.ndarray:
    """Check that expert counts lie in [1, 100)."""
    array = np.asarray(experts, dtype=float)
    bad = array[~((array >= 1) & (array < MAX_EXPERTS))]
    if bad.size:
        raise ExpertCountOutOfRange(float(bad.flat[0]))
    return array


def predict_dense(coeffs: DenseLawCoefficients, scale, tokens):
    """
    Evaluate the dense law.

    Args:
        coeffs: Dense coefficients.
        scale: Model scale N or parameter count P (scalar or array).
        tokens: Training tokens D (scalar or array).

    Returns:
        Predicted loss in nats.

    Raises:
        NonPositiveArgument: If scale or tokens is not positive.
    """
    scale = _positive("scale", scale)
    tokens = _positive("tokens_D", tokens)
    return _result(coeffs.A / scale ** coeffs.alpha + coeffs.B / tokens ** coeffs.beta + coeffs.sigma)


def predict_moe(coeffs: MoeLawCoefficients, model_scale, tokens, experts=1):
    """
    Evaluate the expert-aware law.

    With one expert this is exactly the dense law with the same coefficients.

    Raises:
        NonPositiveArgument: If model_scale or tokens is not positive.
        ExpertCountOutOfRange: If any expert count is outside [1, 100).
    """
    model_scale = _positive("model_scale_N", model_scale)
    tokens = _positive("tokens_D", tokens)
    experts = check_experts(experts)
    return _result(
        coeffs.A / (model_scale ** coeffs.alpha * experts ** coeffs.gamma)
        + coeffs.B / tokens ** coeffs.beta
        + coeffs.sigma
    )


def predict_clark(coeffs: ClarkSeparableCoefficients, params, experts):
    """Evaluate 10**d / (P**a * E**b)."""
    params = _positive("params_P", params)
    experts = _positive("experts_E", experts)
    return _result(10.0 ** coeffs.d / (params ** coeffs.a * experts ** coeffs.b))


def predict_quadratic(coeffs: QuadraticInteractionCoefficients, params, experts):
    """Evaluate 10**d / (P**a * E**(b + c log10 P))."""
    params = _positive("params_P", params)
    experts = _positive("experts_E", experts)
    exponent = coeffs.b + coeffs.c * np.log10(params)
    return _result(10.0 ** coeffs.d / (params ** coeffs.a * experts ** exponent))


def predict(coeffs: LawCoefficients, scale, tokens=None, experts=1):
    """
    Evaluate any law.

    Args:
        coeffs: Coefficients of one of the four laws.
        scale: N or P, as the law expects.
        tokens: Training tokens; required by the dense and expert-aware laws.
        experts: Expert count.

    Returns:
        Predicted loss.
    """
    if isinstance(coeffs, (DenseLawCoefficients, MoeLawCoefficients)) and tokens is None:
        raise MissingField("tokens_D")
    if isinstance(coeffs, DenseLawCoefficients):
        return predict_dense(coeffs, scale, tokens)
    if isinstance(coeffs, MoeLawCoefficients):
        return predict_moe(coeffs, scale, tokens, experts)
    if isinstance(coeffs, ClarkSeparableCoefficients):
        return predict_clark(coeffs, scale, experts)
    return predict_quadratic(coeffs, scale, experts)


def effective_expert_exponent(coeffs, params_P: float) -> float:
    """
    Exponent on E at a given model size.

    Returns b for the separable law and b + c log10 P for the quadratic law.
    """
    if isinstance(coeffs, ClarkSeparableCoefficients):
        return coeffs.b
    if isinstance(coeffs, QuadraticInteractionCoefficients):
        _positive("params_P", params_P)
        return coeffs.b + coeffs.c * math.log10(params_P)
    raise InvalidCoefficients(
        f"the {coeffs.law.value} law has no size-dependent expert exponent"
    )


def tokens_for_loss(
    coeffs: Union[DenseLawCoefficients, MoeLawCoefficients],
    target_loss: float,
    model_scale: float,
    experts: float = 1,
) -> Optional[float]:
    """
    Solve the data term for the tokens needed to reach a loss.

    Args:
        coeffs: Dense or expert-aware coefficients.
        target_loss: Loss to reach.
        model_scale: Scale argument of the law.
        experts: Expert count (expert-aware law only).

    Returns:
        Tokens D, or None when the target is at or below what the scale
        term and the floor allow.
    """
    if not coeffs.B > 0 or not coeffs.beta > 0:
        raise InvalidCoefficients("B and beta must be positive to invert the data term")
    _positive("model_scale_N", model_scale)
    if isinstance(coeffs, MoeLawCoefficients):
        check_experts(experts)
        scale_term = coeffs.A / (model_scale ** coeffs.alpha * experts ** coeffs.gamma)
    else:
        scale_term = coeffs.A / model_scale ** coeffs.alpha
    remainder = target_loss - coeffs.sigma - scale_term
    if remainder <= 0:
        return None
    return (coeffs.B / remainder) ** (1.0 / coeffs.beta)


def extrapolate(
    coeffs: Union[DenseLawCoefficients, MoeLawCoefficients],
    target_scale: float,
    token_grid: Sequence[float],
    experts: float = 1,
) -> List[Tuple[float, float]]:
    """
    Predict a loss curve at an unseen scale.

    Args:
        coeffs: Dense or expert-aware coefficients.
        target_scale: Scale to predict at.
        token_grid: Strictly increasing positive token counts.
        experts: Expert count for the expert-aware law.

    Returns:
        (tokens, predicted loss) pairs in grid order.

    Raises:
        InvalidGrid: If the grid is empty, not positive or not increasing.
    """
    grid = np.asarray(list(token_grid), dtype=float)
    if grid.size == 0:
        raise InvalidGrid("token grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidGrid("token grid must be positive and strictly increasing")
    if isinstance(coeffs, MoeLawCoefficients):
        losses = predict_moe(coeffs, np.full_like(grid, target_scale), grid, experts)
    elif isinstance(coeffs, DenseLawCoefficients):
        losses = predict_dense(coeffs, np.full_like(grid, target_scale), grid)
    else:
        raise InvalidCoefficients(f"the {coeffs.law.value} law has no token term")
    return [(float(d), float(loss)) for d, loss in zip(grid, np.atleast_1d(losses))]


# Fitting


@dataclass(frozen=True)
class LossFitOptions:
    """Settings for fit_loss_law."""

    scale_field: Optional[ScaleField] = None
    huber_delta: float = DEFAULT_HUBER_DELTA
    fit_options: FitOptions = field(default_factory=FitOptions)
    include_test: bool = False
    bootstrap: int = 0
    ci_level: float = DEFAULT_CI_LEVEL
    seed: int = 0
    progress: bool = False


@dataclass
class LossLawFit:
    """Fitted coefficients together with the fit diagnostics."""

    law: LawName
    coefficients: LawCoefficients
    result: FitResult
    scale_field: ScaleField
    input_digest: Optional[str] = None
    warnings: List[str] = field(default_factory=list)

    def as_dict(self) -> Dict[str, object]:
        """Return the JSON document describing this fit."""
        document = coefficients_to_dict(self.coefficients)
        document.update(
            {
                "scale_field": self.scale_field.value,
                "input_digest": self.input_digest,
                "fit": self.result.as_dict(),
                "warnings": list(self.warnings),
            }
        )
        return document


def coefficients_to_dict(coeffs: LawCoefficients) -> Dict[str, object]:
    """Serialize coefficients as {'law': ..., 'coefficients': {...}}."""
    return {"law": coeffs.law.value, "coefficients": asdict(coeffs)}


def coefficients_from_dict(document: Dict[str, object]) -> LawCoefficients:
    """
    Rebuild coefficients from a JSON document.

    Accepts either a bare coefficient document or a report section that
    holds one under a 'coefficients' key.

    Raises:
        ParseError: If the document does not describe a known law.
    """
    try:
        law = LawName(document["law"])
        values = document["coefficients"]
        cls = COEFFICIENT_TYPES[law]
        return cls(**{name: float(values[name]) for name in cls.names})  # type: ignore[index]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"not a coefficient document: {e}")


def load_coefficients(path: PathLike) -> LawCoefficients:
    """
    Read coefficients from a JSON file.

    The file may be a coefficient document or a fit-loss report, in which case
    the first fitted law is used.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except FileNotFoundError:
        raise InputFileNotFound(str(path))
    except json.JSONDecodeError as e:
        raise ParseError(f"cannot parse '{path}' as JSON: {e}")
    if isinstance(document, dict) and "law" not in document:
        for section in document.get("sections", []):
            if section.get("operation") == "fit_loss_law":
                document = section["data"]
                break
    if not isinstance(document, dict):
        raise ParseError(f"'{path}' does not hold a coefficient document")
    return coefficients_from_dict(document)


def _scale_of(record: TrainingRecord, scale_field: ScaleField) -> float:
    if scale_field is ScaleField.PARAMS:
        if record.params is None:
            raise MissingField("params_P")
        return record.params
    if record.model_scale is None:
        raise MissingField("model_scale_N")
    return record.model_scale


def _law_rows(
    runs: RunSet, law: LawName, scale_field: ScaleField, include_test: bool
) -> Tuple[np.ndarray, List[str]]:
    """Collect (scale, tokens, experts, loss) rows for a law."""
    warnings: List[str] = []
    if law in (LawName.CLARK, LawName.QUADRATIC):
        records = [s.records[-1] for s in runs.select(include_test) if len(s)]
    else:
        records = list(runs.records(include_test))

    rows = [
        (_scale_of(r, scale_field), r.tokens, float(r.experts), r.loss) for r in records
    ]
    if law is LawName.MOE:
        kept = [row for row in rows if row[2] < MAX_EXPERTS]
        dropped = len(rows) - len(kept)
        if dropped:
            message = (
                f"dropped {dropped} records with experts_E >= {MAX_EXPERTS}, "
                f"outside the expert-aware law's range"
            )
            logger.warning(message)
            warnings.append(message)
        rows = kept

    data = np.array(rows, dtype=float).reshape(-1, 4)
    scales = np.unique(data[:, 0])
    if len(scales) < 2:
        raise InsufficientDiversity(
            f"fitting the {law.value} law needs at least 2 distinct model scales, "
            f"got {len(scales)}"
        )
    if law in (LawName.DENSE, LawName.MOE):
        if len(np.unique(data[:, 1])) < 2:
            raise InsufficientDiversity(
                f"fitting the {law.value} law needs at least 2 distinct token counts"
            )
    elif len(np.unique(data[:, 2])) < 2:
        raise InsufficientDiversity(
            f"fitting the {law.value} law needs at least 2 distinct expert counts"
        )
    return data, warnings


def _dense_terms(params: np.ndarray, data: np.ndarray):
    A, B, alpha, beta, sigma = params
    log_n, log_d = np.log(data[:, 0]), np.log(data[:, 1])
    scale_term = A * np.exp(-alpha * log_n)
    data_term = B * np.exp(-beta * log_d)
    return scale_term, data_term, scale_term + data_term + sigma, log_n, log_d


def _dense_residuals(params: np.ndarray, data: np.ndarray) -> np.ndarray:
    predicted = _dense_terms(params, data)[2]
    return np.log(predicted) - np.log(data[:, 3])


def _dense_jacobian(params: np.ndarray, data: np.ndarray) -> np.ndarray:
    A, B, _, _, _ = params
    scale_term, data_term, predicted, log_n, log_d = _dense_terms(params, data)
    columns = [
        scale_term / A if A > 0 else np.exp(-params[2] * log_n),
        data_term / B if B > 0 else np.exp(-params[3] * log_d),
        -scale_term * log_n,
        -data_term * log_d,
        np.ones_like(predicted),
    ]
    return np.column_stack(columns) / predicted[:, None]


def _moe_terms(params: np.ndarray, data: np.ndarray):
    A, B, alpha, beta, gamma, sigma = params
    log_n, log_d, log_e = np.log(data[:, 0]), np.log(data[:, 1]), np.log(data[:, 2])
    scale_term = A * np.exp(-alpha * log_n - gamma * log_e)
    data_term = B * np.exp(-beta * log_d)
    return scale_term, data_term, scale_term + data_term + sigma, log_n, log_d, log_e


def _moe_residuals(params: np.ndarray, data: np.ndarray) -> np.ndarray:
    predicted = _moe_terms(params, data)[2]
    return np.log(predicted) - np.log(data[:, 3])


def _moe_jacobian(params: np.ndarray, data: np.ndarray) -> np.ndarray:
    A, B, alpha, beta, gamma, _ = params
    scale_term, data_term, predicted, log_n, log_d, log_e = _moe_terms(params, data)
    columns = [
        scale_term / A if A > 0 else np.exp(-alpha * log_n - gamma * log_e),
        data_term / B if B > 0 else np.exp(-beta * log_d),
        -scale_term * log_n,
        -data_term * log_d,
        -scale_term * log_e,
        np.ones_like(predicted),
    ]
    return np.column_stack(columns) / predicted[:, None]


def _clark_residuals(params: np.ndarray, data: np.ndarray) -> np.ndarray:
    a, b, d = params
    return d * LOG10 - a * np.log(data[:, 0]) - b * np.log(data[:, 2]) - np.log(data[:, 3])


def _clark_jacobian(params: np.ndarray, data: np.ndarray) -> np.ndarray:
    return np.column_stack(
        [-np.log(data[:, 0]), -np.log(data[:, 2]), np.full(len(data), LOG10)]
    )


def _quadratic_residuals(params: np.ndarray, data: np.ndarray) -> np.ndarray:
    a, b, c, d = params
    log_p, log_e = np.log(data[:, 0]), np.log(data[:, 2])
    return d * LOG10 - a * log_p - (b + c * log_p / LOG10) * log_e - np.log(data[:, 3])


def _quadratic_jacobian(params: np.ndarray, data: np.ndarray) -> np.ndarray:
    log_p, log_e = np.log(data[:, 0]), np.log(data[:, 2])
    return np.column_stack(
        [-log_p, -log_e, -log_p / LOG10 * log_e, np.full(len(data), LOG10)]
    )


def _dense_starts(data: np.ndarray, with_gamma: bool) -> List[np.ndarray]:
    """Start grid seeded from the spread of the observed losses."""
    losses = data[:, 3]
    median_scale = float(np.exp(np.median(np.log(data[:, 0]))))
    median_tokens = float(np.exp(np.median(np.log(data[:, 1]))))
    median_experts = float(np.exp(np.median(np.log(data[:, 2]))))
    median_loss = float(np.median(losses))
    floor = float(losses.min())

    starts = []
    gammas = EXPERT_EXPONENT_STARTS if with_gamma else (0.0,)
    for fraction in FLOOR_FRACTIONS:
        sigma = fraction * floor
        share = max(median_loss - sigma, 1e-3 * median_loss) / 2.0
        for alpha in EXPONENT_STARTS:
            for beta in EXPONENT_STARTS:
                for gamma in gammas:
                    a_seed = share * median_scale ** alpha * median_experts ** gamma
                    b_seed = share * median_tokens ** beta
                    for a_factor, b_factor in start_grid([START_FACTORS, START_FACTORS]):
                        start = [a_seed * a_factor, b_seed * b_factor, alpha, beta]
                        if with_gamma:
                            start.append(gamma)
                        start.append(sigma)
                        starts.append(np.array(start))
    return starts


def _log_law_starts(data: np.ndarray, quadratic: bool) -> List[np.ndarray]:
    log10_p = np.log10(data[:, 0])
    log10_e = np.log10(data[:, 2])
    log10_l = np.log10(data[:, 3])
    starts = []
    for a in EXPONENT_STARTS:
        for b in EXPERT_EXPONENT_STARTS:
            d = float(np.mean(log10_l + a * log10_p + b * log10_e))
            if quadratic:
                for c in (-0.01, 0.0, 0.01):
                    starts.append(np.array([a, b, c, d + c * float(np.mean(log10_p * log10_e))]))
            else:
                starts.append(np.array([a, b, d]))
    return starts


def build_problem(law: LawName, data: np.ndarray, huber_delta: float) -> FitProblem:
    """Assemble the fit problem for a law and its data rows."""
    log, ident = Transform.LOG_POSITIVE, Transform.IDENTITY
    if law is LawName.DENSE:
        return FitProblem(
            residual_fn=_dense_residuals,
            param_count=5,
            transforms=(log, log, ident, ident, log),
            starts=_dense_starts(data, with_gamma=False),
            huber_delta=huber_delta,
            jacobian_fn=_dense_jacobian,
            param_names=DenseLawCoefficients.names,
        )
    if law is LawName.MOE:
        return FitProblem(
            residual_fn=_moe_residuals,
            param_count=6,
            transforms=(log, log, ident, ident, ident, log),
            starts=_dense_starts(data, with_gamma=True),
            huber_delta=huber_delta,
            jacobian_fn=_moe_jacobian,
            param_names=MoeLawCoefficients.names,
        )
    if law is LawName.CLARK:
        return FitProblem(
            residual_fn=_clark_residuals,
            param_count=3,
            transforms=(ident, ident, ident),
            starts=_log_law_starts(data, quadratic=False),
            huber_delta=huber_delta,
            jacobian_fn=_clark_jacobian,
            param_names=ClarkSeparableCoefficients.names,
        )
    return FitProblem(
        residual_fn=_quadratic_residuals,
        param_count=4,
        transforms=(ident, ident, ident, ident),
        starts=_log_law_starts(data, quadratic=True),
        huber_delta=huber_delta,
        jacobian_fn=_quadratic_jacobian,
        param_names=QuadraticInteractionCoefficients.names,
    )


def fit_loss_law(
    runs: RunSet,
    law: Union[LawName, str],
    options: Optional[LossFitOptions] = None,
) -> LossLawFit:
    """
    Fit one of the four loss laws to a RunSet.

    The dense and expert-aware laws use every training record; the separable
    and quadratic laws use the final record of each run. Residuals are
    log(predicted) - log(observed) under a Huber loss.

    Args:
        runs: The runs to fit.
        law: Which law to fit.
        options: Scale field, Huber delta, optimizer and bootstrap settings.

    Returns:
        A LossLawFit with coefficients and diagnostics.

    Raises:
        MissingField: If records lack the scale field.
        InsufficientDiversity: If scales, tokens or experts do not vary.
        NotConverged: If bootstrap intervals were requested for a fit that
            did not converge.
    """
    law = LawName(law) if isinstance(law, str) else law
    options = options or LossFitOptions()
    scale_field = options.scale_field
    if scale_field is None:
        scale_field = (
            ScaleField.PARAMS if law in (LawName.CLARK, LawName.QUADRATIC) else ScaleField.MODEL_SCALE
        )

    data, warnings = _law_rows(runs, law, scale_field, options.include_test)
    logger.info("fitting the %s law to %d rows", law.value, len(data))

    problem = build_problem(law, data, options.huber_delta)
    result = fit(problem, data, options.fit_options)
    if not result.converged:
        message = f"the {law.value} fit did not converge within {options.fit_options.max_iter} iterations"
        logger.warning(message)
        warnings.append(message)

    if options.bootstrap:
        if not result.converged:
            raise NotConverged(message)
        result = bootstrap_ci(
            problem,
            data,
            result,
            resamples=options.bootstrap,
            level=options.ci_level,
            seed=options.seed,
            options=options.fit_options,
            progress=options.progress,
        )

    cls = COEFFICIENT_TYPES[law]
    try:
        coefficients = cls(*[float(v) for v in result.params])
    except InvalidCoefficients as e:
        raise ValidationError(f"the {law.value} fit produced unusable coefficients: {e}")

    return LossLawFit(
        law=law,
        coefficients=coefficients,
        result=result,
        scale_field=scale_field,
        input_digest=runs.provenance.digest,
        warnings=warnings,
    )
