"""Smoothing and iso-token grouping of run series."""

import logging
import math
from collections import OrderedDict
from dataclasses import replace
from typing import Dict, Iterable, List, Tuple

import numpy as np

from scalepal.constants import DEFAULT_REL_TOL, DEFAULT_SMOOTH_SIGMA, DEFAULT_SMOOTH_WINDOW
from scalepal.exceptions import (
    NoSeriesCoversLevel,
    NonPositiveArgument,
    TooFewRecords,
    ValidationError,
)
from scalepal.models import RunConfig, RunSeries, RunSet

logger = logging.getLogger(__name__)

IsoTokenGroups = Dict[float, List[Tuple[RunConfig, float]]]


def gaussian_weights(length: int, window: int, sigma: float) -> np.ndarray:
    """
    Build the per-point smoothing weights for a series.

    The kernel covers offsets -(window - 1) // 2 .. window // 2 around each
    point. An odd window is centred; an even window has one more point ahead
    than behind, so the default 10-record window reaches 4 back and 5 forward
    and its weighted centre sits half a record later. Offsets falling outside
    the series are dropped and the remaining weights renormalized, so every
    row sums to one.

    Args:
        length: Number of points in the series.
        window: Kernel width in points.
        sigma: Kernel standard deviation in points.

    Returns:
        Array of shape (length, window) of weights.
    """
    offsets = np.arange(-((window - 1) // 2), window // 2 + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    index = np.arange(length)[:, None] + offsets[None, :]
    weights = np.where((index >= 0) & (index < length), kernel[None, :], 0.0)
    return weights / weights.sum(axis=1, keepdims=True)


def smooth_series(
    series: RunSeries,
    window: int = DEFAULT_SMOOTH_WINDOW,
    sigma: float = DEFAULT_SMOOTH_SIGMA,
) -> RunSeries:
    """
    Replace each loss by a Gaussian-weighted average of its neighbours.

    Args:
        series: The series to smooth.
        window: Kernel width in records (at least 1).
        sigma: Kernel standard deviation in records.

    Returns:
        A new series of the same length; tokens are untouched.

    Raises:
        ValidationError: If window or sigma is not positive.
        TooFewRecords: If the series is shorter than the window.
    """
    if window < 1:
        raise ValidationError(f"smoothing window must be at least 1, got {window}")
    if not sigma > 0:
        raise ValidationError(f"smoothing sigma must be positive, got {sigma}")
    length = len(series)
    if length < window:
        raise TooFewRecords(
            f"run '{series.run_id}' has {length} records, smoothing window is {window}"
        )

    offsets = np.arange(-((window - 1) // 2), window // 2 + 1)
    index = np.clip(np.arange(length)[:, None] + offsets[None, :], 0, length - 1)
    weights = gaussian_weights(length, window, sigma)
    smoothed = (weights * series.losses[index]).sum(axis=1)

    records = tuple(
        replace(record, loss=float(value))
        for record, value in zip(series.records, smoothed)
    )
    return replace(series, records=records)


def smooth_runs(
    runs: RunSet,
    window: int = DEFAULT_SMOOTH_WINDOW,
    sigma: float = DEFAULT_SMOOTH_SIGMA,
) -> RunSet:
    """Smooth every series that is at least one window long."""
    smoothed = []
    for series in runs:
        if len(series) < window:
            logger.warning(
                "run '%s' has %d records, shorter than the smoothing window %d; "
                "left unsmoothed", series.run_id, len(series), window,
            )
            smoothed.append(series)
        else:
            smoothed.append(smooth_series(series, window, sigma))
    return runs.with_series(smoothed)


def loss_at_tokens(series: RunSeries, level: float, rel_tol: float = DEFAULT_REL_TOL):
    """
    Read a series' loss at a token level.

    Args:
        series: Series with at least two records.
        level: Token count to read the loss at.
        rel_tol: Relative tolerance for exact hits and range coverage.

    Returns:
        The loss at that level, or None when the series does not cover it.
    """
    tokens = series.tokens
    if level < tokens[0] * (1 - rel_tol) or level > tokens[-1] * (1 + rel_tol):
        return None
    for token, record in zip(tokens, series.records):
        if math.isclose(token, level, rel_tol=rel_tol):
            return record.loss
    return float(np.interp(math.log(level), np.log(tokens), series.losses))


def group_iso_token(
    runs: RunSet,
    token_levels: Iterable[float],
    rel_tol: float = DEFAULT_REL_TOL,
    include_test: bool = False,
) -> IsoTokenGroups:
    """
    Collect the loss of every run at each requested token level.

    Losses between records are interpolated linearly in log-tokens.

    Args:
        runs: The runs to group.
        token_levels: Positive token counts.
        rel_tol: Relative tolerance for exact hits and range coverage.
        include_test: Whether test-loss series take part.

    Returns:
        Mapping from token level to (config, loss) pairs, in input order.

    Raises:
        TooFewRecords: If a series has fewer than two records.
        NoSeriesCoversLevel: If no series spans a level.
    """
    selected = runs.select(include_test)
    for series in selected:
        if len(series) < 2:
            raise TooFewRecords(
                f"run '{series.run_id}' has {len(series)} record; iso-token "
                f"grouping needs at least 2"
            )

    groups: IsoTokenGroups = OrderedDict()
    for level in token_levels:
        level = float(level)
        if not level > 0:
            raise NonPositiveArgument("token level")
        members = []
        for series in selected:
            loss = loss_at_tokens(series, level, rel_tol)
            if loss is not None:
                members.append((series.config, loss))
        if not members:
            raise NoSeriesCoversLevel(level)
        groups[level] = members
        logger.debug("token level %g: %d series", level, len(members))
    return groups
