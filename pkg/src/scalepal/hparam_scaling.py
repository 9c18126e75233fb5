"""Gradient noise scale, batch-size and learning-rate scaling relations."""

import io
import logging
import math
from collections import OrderedDict, defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from scalepal.constants import GRADIENT_NORM_COLUMNS, HEATMAP_COLUMNS, MIN_KNOB_VALUES, MIN_POWER_LAW_POINTS
from scalepal.exceptions import (
    EqualBatchSizes,
    InvalidGrid,
    NonPositiveArgument,
    NonPositiveCoordinate,
    SchemaError,
    StepsAtOrBelowMinimum,
    TooFewKnobValues,
    TooFewPoints,
    UnbracketedMinima,
    ValidationError,
)
from scalepal.file_utils import PathLike, atomic_write_text
from scalepal.fit_engine import PowerLawFit, fit_power_law
from scalepal.models import FileFormat, Knob
from scalepal.run_data import read_table
from scalepal.series_utils import IsoTokenGroups
from scalepal.validators import parse_real

logger = logging.getLogger(__name__)

Heatmap = Dict[float, List[Tuple[float, float]]]

NOISE_SCALE_LABEL = "simple noise scale"


class Optimizer(Enum):
    """Optimizer family of a learning-rate relation."""

    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class NoiseScaleEstimate:
    """Estimated |G|^2, tr(Sigma) and their ratio B_noise."""

    grad_norm_sq_G: float
    trace_sigma: float
    b_noise: float
    sample_count: int
    clamped: bool = False

    def as_dict(self) -> Dict[str, object]:
        """Return a JSON-ready description."""
        return {
            "label": NOISE_SCALE_LABEL,
            "grad_norm_sq_G": self.grad_norm_sq_G,
            "trace_sigma": self.trace_sigma,
            "b_noise": self.b_noise,
            "sample_count": self.sample_count,
            "clamped": self.clamped,
        }


@dataclass(frozen=True)
class TradeoffCurve:
    """(S / s_min - 1) * (E / e_min - 1) = 1 between steps S and examples E."""

    s_min: float
    e_min: float

    def __post_init__(self):
        """Check positivity."""
        if not self.s_min > 0 or not self.e_min > 0:
            raise ValidationError("s_min and e_min must be positive")


@dataclass(frozen=True)
class LrBatchRelation:
    """Optimal learning rate as a function of batch size."""

    eps_max: float
    b_noise: float
    optimizer: Optimizer = Optimizer.SGD

    def __post_init__(self):
        """Check positivity."""
        if not self.eps_max > 0:
            raise NonPositiveArgument("eps_max")
        if not self.b_noise > 0 or math.isinf(self.b_noise):
            raise NonPositiveArgument("b_noise")


@dataclass(frozen=True)
class ContourMinimum:
    """Vertex of the loss-vs-log-knob parabola on one iso-token contour."""

    loss: float
    knob_opt: float
    token_level: float
    knob: Knob
    at_boundary: bool = False

    def as_dict(self) -> Dict[str, object]:
        """Return a flat description, for CSV output."""
        return {
            "token_level": self.token_level,
            "knob": self.knob.value,
            "knob_opt": self.knob_opt,
            "loss": self.loss,
            "at_boundary": self.at_boundary,
        }


# Noise scale


def estimate_noise_scale(
    small_batch: Tuple[float, float],
    big_batch: Tuple[float, float],
    sample_count: int = 2,
) -> NoiseScaleEstimate:
    """
    Estimate the simple noise scale from two batch sizes.

    Uses E|G_B|^2 = |G|^2 + tr(Sigma) / B measured at two batch sizes.
    Negative estimates are clamped to zero and flagged.

    Args:
        small_batch: (B_s, mean squared gradient norm at B_s).
        big_batch: (B_b, mean squared gradient norm at B_b).
        sample_count: Number of measurements behind the two means.

    Returns:
        The estimate; b_noise is inf when |G|^2 clamps to zero while
        tr(Sigma) stays positive.

    Raises:
        EqualBatchSizes: If both batch sizes are equal.
    """
    (b_small, g_small), (b_big, g_big) = sorted([tuple(small_batch), tuple(big_batch)])
    if b_small == b_big:
        raise EqualBatchSizes(f"both measurements use batch size {b_small:g}")
    if b_small < 1:
        raise ValidationError(f"batch sizes must be at least 1, got {b_small:g}")
    if g_small < 0 or g_big < 0:
        raise ValidationError("mean squared gradient norms must be non-negative")

    span = b_big - b_small
    grad_norm_sq = (b_big * g_big - b_small * g_small) / span
    trace_sigma = (g_small - g_big) * b_small * b_big / span

    clamped = False
    if grad_norm_sq < 0:
        logger.warning("noise scale: |G|^2 estimate %.3g is negative, clamped to 0", grad_norm_sq)
        grad_norm_sq, clamped = 0.0, True
    if trace_sigma < 0:
        logger.warning("noise scale: tr(Sigma) estimate %.3g is negative, clamped to 0", trace_sigma)
        trace_sigma, clamped = 0.0, True

    if grad_norm_sq > 0:
        b_noise = trace_sigma / grad_norm_sq
    else:
        b_noise = math.inf if trace_sigma > 0 else 0.0

    return NoiseScaleEstimate(
        grad_norm_sq_G=float(grad_norm_sq),
        trace_sigma=float(trace_sigma),
        b_noise=float(b_noise),
        sample_count=int(sample_count),
        clamped=clamped,
    )


def estimate_noise_scale_from_rows(rows: Sequence[Tuple[float, float]]) -> NoiseScaleEstimate:
    """
    Estimate the noise scale from repeated measurements.

    Measurements are averaged per batch size; the smallest and largest batch
    sizes feed the two-batch estimator.

    Args:
        rows: (batch size, squared gradient norm) measurements.

    Raises:
        EqualBatchSizes: If fewer than two distinct batch sizes are present.
    """
    grouped: Dict[float, List[float]] = defaultdict(list)
    for batch, norm_sq in rows:
        grouped[float(batch)].append(float(norm_sq))
    if len(grouped) < 2:
        raise EqualBatchSizes("noise scale needs measurements at two distinct batch sizes")
    sizes = sorted(grouped)
    small, big = sizes[0], sizes[-1]
    logger.info("noise scale from batch sizes %g and %g (%d rows)", small, big, len(rows))
    return estimate_noise_scale(
        (small, float(np.mean(grouped[small]))),
        (big, float(np.mean(grouped[big]))),
        sample_count=len(grouped[small]) + len(grouped[big]),
    )


def read_gradient_norms(path: PathLike) -> List[Tuple[float, float]]:
    """
    Read a batch_size,grad_norm_sq CSV.

    Raises:
        SchemaError: If a column is missing or a value does not parse.
    """
    frame = read_table(path, FileFormat.CSV)
    for column in GRADIENT_NORM_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(0, column, "missing column")
    rows, diagnostics = [], []
    for index, raw in enumerate(frame.to_dict(orient="records"), start=1):
        try:
            rows.append((parse_real(raw["batch_size"]), parse_real(raw["grad_norm_sq"])))
        except ValueError as e:
            diagnostics.append((index, str(e)))
    if diagnostics:
        row, reason = diagnostics[0]
        raise SchemaError(row, "grad_norm_sq", reason, [f"row {r}: {m}" for r, m in diagnostics])
    return rows


# Speed / efficiency trade-off


def loss_improvement(delta_L_max: float, b_noise: float, batch_B: float) -> float:
    """Optimal one-step loss improvement delta_L_max / (1 + b_noise / B)."""
    if not delta_L_max > 0:
        raise NonPositiveArgument("delta_L_max")
    if not batch_B > 0:
        raise NonPositiveArgument("batch_B")
    if b_noise < 0:
        raise ValidationError("b_noise must be non-negative")
    return delta_L_max / (1.0 + b_noise / batch_B)


def tradeoff(curve: TradeoffCurve, steps_S: float) -> float:
    """
    Training examples needed when training for S steps.

    Raises:
        StepsAtOrBelowMinimum: If S does not exceed s_min.
    """
    if not steps_S > curve.s_min:
        raise StepsAtOrBelowMinimum(
            f"steps {steps_S:g} must exceed the minimum steps {curve.s_min:g}"
        )
    return curve.e_min * (1.0 + 1.0 / (steps_S / curve.s_min - 1.0))


def steps_for_examples(curve: TradeoffCurve, examples: float) -> float:
    """Steps needed when training on a given number of examples (inverse of tradeoff)."""
    if not examples > curve.e_min:
        raise ValidationError(
            f"examples {examples:g} must exceed the minimum examples {curve.e_min:g}"
        )
    return curve.s_min * (1.0 + 1.0 / (examples / curve.e_min - 1.0))


def critical_batch(curve: TradeoffCurve) -> float:
    """Batch size e_min / s_min at the knee of the trade-off curve."""
    return curve.e_min / curve.s_min


# Contour minima and power laws


def iso_token_heatmap(groups: IsoTokenGroups, knob: Union[Knob, str]) -> Heatmap:
    """Turn iso-token groups into (knob value, loss) contours."""
    knob = Knob(knob) if isinstance(knob, str) else knob
    return OrderedDict(
        (level, [(config.knob_value(knob), loss) for config, loss in members])
        for level, members in groups.items()
    )


def _contour_minimum(level: float, points: Sequence[Tuple[float, float]], knob: Knob) -> ContourMinimum:
    values = np.asarray(points, dtype=float)
    distinct = len(np.unique(values[:, 0])) if len(values) else 0
    if distinct < MIN_KNOB_VALUES:
        raise TooFewKnobValues(level, distinct)
    if np.any(values[:, 0] <= 0):
        raise NonPositiveCoordinate(f"contour at token level {level:g} has a non-positive knob value")

    log_knob, losses = np.log(values[:, 0]), values[:, 1]
    low, high = float(log_knob.min()), float(log_knob.max())
    curvature, slope, intercept = np.polyfit(log_knob, losses, 2)

    if curvature > 0:
        vertex = -slope / (2.0 * curvature)
    else:
        vertex = low if np.polyval([curvature, slope, intercept], low) <= np.polyval(
            [curvature, slope, intercept], high
        ) else high
    at_boundary = not (low < vertex < high)
    vertex = min(max(vertex, low), high)
    if at_boundary:
        logger.warning(
            "contour at token level %g: minimum lies at the sweep boundary (%s = %g)",
            level, knob.value, math.exp(vertex),
        )
    return ContourMinimum(
        loss=float(np.polyval([curvature, slope, intercept], vertex)),
        knob_opt=float(math.exp(vertex)),
        token_level=float(level),
        knob=knob,
        at_boundary=at_boundary,
    )


def extract_contour_minima(heat: Mapping[float, Sequence[Tuple[float, float]]],
                           knob: Union[Knob, str]) -> List[ContourMinimum]:
    """
    Locate the loss-minimizing knob value on every contour.

    A parabola is fitted to loss against log(knob); its vertex is clipped to
    the observed knob range, with at_boundary set when clipping happens or
    the parabola has no interior minimum.

    Args:
        heat: Mapping from token level to (knob value, loss) pairs.
        knob: The swept hyperparameter.

    Returns:
        One ContourMinimum per contour, in input order.

    Raises:
        TooFewKnobValues: If a contour has fewer than three distinct knob values.
    """
    knob = Knob(knob) if isinstance(knob, str) else knob
    return [_contour_minimum(level, points, knob) for level, points in heat.items()]


def _fit_minima(minima: Sequence[ContourMinimum], knob: Knob, include_boundary: bool) -> PowerLawFit:
    for minimum in minima:
        if minimum.knob is not knob:
            raise ValidationError(
                f"expected {knob.value} minima, got a {minimum.knob.value} minimum"
            )
    if len(minima) < MIN_POWER_LAW_POINTS:
        raise TooFewPoints(
            f"power-law fit needs at least {MIN_POWER_LAW_POINTS} minima, got {len(minima)}"
        )
    kept = [m for m in minima if include_boundary or not m.at_boundary]
    excluded = len(minima) - len(kept)
    if excluded:
        logger.warning("excluded %d boundary minima from the %s fit", excluded, knob.value)
    if len(kept) < MIN_POWER_LAW_POINTS:
        raise UnbracketedMinima(
            f"only {len(kept)} of {len(minima)} {knob.value} minima lie inside the sweep; "
            f"need {MIN_POWER_LAW_POINTS}"
        )
    return fit_power_law([(m.loss, m.knob_opt) for m in kept])


def fit_bopt_law(minima: Sequence[ContourMinimum], include_boundary: bool = False) -> PowerLawFit:
    """
    Fit B_opt = lam / L**alpha to batch-size minima.

    Raises:
        TooFewPoints: If fewer than three minima are given.
        UnbracketedMinima: If fewer than three remain after dropping boundary minima.
    """
    return _fit_minima(minima, Knob.BATCH_SIZE, include_boundary)


def fit_epsopt_law(minima: Sequence[ContourMinimum], include_boundary: bool = False) -> PowerLawFit:
    """Fit eps_opt = lam / L**alpha to learning-rate minima."""
    return _fit_minima(minima, Knob.LEARNING_RATE, include_boundary)


# Learning-rate relations


def _check_batch(batch_B) -> np.ndarray:
    batch = np.asarray(batch_B, dtype=float)
    if not np.all(np.isfinite(batch)) or np.any(batch <= 0):
        raise NonPositiveArgument("batch_B")
    return batch


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def sgd_opt_lr(rel: LrBatchRelation, batch_B):
    """eps_max / (1 + b_noise / B): near-linear in B below b_noise."""
    if rel.optimizer is not Optimizer.SGD:
        raise ValidationError("sgd_opt_lr needs an sgd relation")
    batch = _check_batch(batch_B)
    return _scalar(rel.eps_max / (1.0 + rel.b_noise / batch))


def adam_opt_lr(rel: LrBatchRelation, batch_B):
    """2 eps_max / (sqrt(b_noise / B) + sqrt(B / b_noise)): peaks at B = b_noise."""
    if rel.optimizer is not Optimizer.ADAM:
        raise ValidationError("adam_opt_lr needs an adam relation")
    batch = _check_batch(batch_B)
    return _scalar(
        2.0 * rel.eps_max / (np.sqrt(rel.b_noise / batch) + np.sqrt(batch / rel.b_noise))
    )


def optimal_lr(rel: LrBatchRelation, batch_B):
    """Dispatch to the relation's optimizer family."""
    if rel.optimizer is Optimizer.ADAM:
        return adam_opt_lr(rel, batch_B)
    return sgd_opt_lr(rel, batch_B)


def lr_curve(rel: LrBatchRelation, batch_grid: Sequence[float]) -> List[Tuple[float, float]]:
    """Evaluate a relation over a batch grid."""
    grid = np.asarray(list(batch_grid), dtype=float)
    if grid.size == 0:
        raise InvalidGrid("batch grid is empty")
    rates = np.atleast_1d(optimal_lr(rel, grid))
    return [(float(b), float(e)) for b, e in zip(grid, rates)]


def log_grid(start: float, stop: float, count: int) -> np.ndarray:
    """Log-uniform grid of count points from start to stop."""
    if not start > 0 or not stop > start:
        raise InvalidGrid(f"grid needs 0 < start < stop, got {start:g}, {stop:g}")
    if count < 2:
        raise InvalidGrid(f"grid needs at least 2 points, got {count}")
    return np.logspace(math.log10(start), math.log10(stop), int(count))


# Comparing fitted laws


def _log_range(fit: PowerLawFit) -> Tuple[float, float]:
    low, high = fit.loss_range
    if not 0 < low < high:
        raise ValidationError(f"loss range must satisfy 0 < L_min < L_max, got {fit.loss_range}")
    return math.log(low), math.log(high)


def interval_overlap(fit_a: PowerLawFit, fit_b: PowerLawFit) -> float:
    """
    Intersection-over-union of the two fits' log-loss ranges.

    Returns:
        A fraction in [0, 1]; 1.0 for identical ranges.
    """
    low_a, high_a = _log_range(fit_a)
    low_b, high_b = _log_range(fit_b)
    intersection = min(high_a, high_b) - max(low_a, low_b)
    if intersection <= 0:
        return 0.0
    union = max(high_a, high_b) - min(low_a, low_b)
    return float(intersection / union)


def dominates(fit_a: PowerLawFit, fit_b: PowerLawFit, points: int = 100) -> bool:
    """
    Check that fit_a predicts strictly smaller values than fit_b.

    The check runs on a log grid over the overlap of the two loss ranges;
    fits without overlap never dominate.
    """
    low = max(_log_range(fit_a)[0], _log_range(fit_b)[0])
    high = min(_log_range(fit_a)[1], _log_range(fit_b)[1])
    if high <= low:
        return False
    losses = np.exp(np.linspace(low, high, max(points, 2)))
    return bool(np.all(fit_a.predict(losses) < fit_b.predict(losses)))


# Heatmap files


def load_heatmap(path: PathLike) -> Heatmap:
    """
    Read a token_level,knob_value,loss CSV into contours.

    Raises:
        SchemaError: If a column is missing or a value is not a positive number.
    """
    frame = read_table(path, FileFormat.CSV)
    for column in HEATMAP_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(0, column, "missing column")

    heat: Heatmap = OrderedDict()
    diagnostics: List[Tuple[int, str, str]] = []
    for index, raw in enumerate(frame.to_dict(orient="records"), start=1):
        values = []
        for column in HEATMAP_COLUMNS:
            try:
                value = parse_real(raw[column])
            except ValueError as e:
                diagnostics.append((index, column, str(e)))
                break
            if value <= 0:
                diagnostics.append((index, column, f"{column} must be positive"))
                break
            values.append(value)
        else:
            level, knob_value, loss = values
            heat.setdefault(level, []).append((knob_value, loss))

    if diagnostics:
        row, column, reason = diagnostics[0]
        raise SchemaError(
            row, column, reason, [f"row {r}, column '{c}': {m}" for r, c, m in diagnostics]
        )
    return heat


def heatmap_to_text(heat: Mapping[float, Sequence[Tuple[float, float]]]) -> str:
    """Serialize contours as heatmap CSV."""
    rows = [
        {"token_level": level, "knob_value": knob_value, "loss": loss}
        for level, points in heat.items()
        for knob_value, loss in points
    ]
    buffer = io.StringIO()
    pd.DataFrame(rows, columns=list(HEATMAP_COLUMNS)).to_csv(
        buffer, index=False, lineterminator="\n"
    )
    return buffer.getvalue()


def save_heatmap(heat: Mapping[float, Sequence[Tuple[float, float]]], path: PathLike):
    """Write contours as heatmap CSV atomically."""
    return atomic_write_text(path, heatmap_to_text(heat))


def is_heatmap_file(path: PathLike) -> bool:
    """Tell a heatmap CSV from a run file by its header."""
    frame = read_table(path, FileFormat.CSV)
    return set(HEATMAP_COLUMNS).issubset(frame.columns)
