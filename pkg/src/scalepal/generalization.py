"""Test-loss versus compute trends for dense and expert models."""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from scalepal.constants import MIN_POWER_LAW_POINTS
from scalepal.exceptions import MissingField, TooFewPoints
from scalepal.fit_engine import PowerLawFit, fit_power_law
from scalepal.hparam_scaling import interval_overlap
from scalepal.models import LossKind, RunSet, TrainingRecord

logger = logging.getLogger(__name__)

COMPARISON_POINTS = 50


class Architecture(Enum):
    """Dense runs have one expert; expert runs have more."""

    DENSE = "dense"
    MOE = "moe"


@dataclass(frozen=True)
class GeneralizationReport:
    """Test-loss trends of both architectures and how they compare."""

    dense_fit: PowerLawFit
    moe_fit: PowerLawFit
    overlap: float
    moe_lower_fraction: Optional[float]
    dense_points: Tuple[Tuple[float, float], ...]
    moe_points: Tuple[Tuple[float, float], ...]

    def as_dict(self) -> Dict[str, object]:
        """Return a JSON-ready description."""
        return {
            "dense_fit": self.dense_fit.as_dict(),
            "moe_fit": self.moe_fit.as_dict(),
            "compute_overlap": self.overlap,
            "moe_lower_fraction": self.moe_lower_fraction,
        }

    def as_records(self) -> List[Dict[str, object]]:
        """Observed points of both architectures, for CSV output."""
        records = []
        for name, points, law in (
            ("dense", self.dense_points, self.dense_fit),
            ("moe", self.moe_points, self.moe_fit),
        ):
            for compute, loss in points:
                records.append(
                    {
                        "architecture": name,
                        "compute": compute,
                        "test_loss": loss,
                        "fitted_loss": float(law.predict(compute)),
                    }
                )
        return records


def _compute(record: TrainingRecord) -> float:
    if record.flops is not None:
        return record.flops
    if record.model_scale is not None:
        return record.model_scale * record.tokens
    raise MissingField("flops_C")


def heldout_loss_points(
    runs: RunSet, architecture: Union[Architecture, str]
) -> List[Tuple[float, float]]:
    """
    Gather (compute, test loss) pairs of one architecture.

    Args:
        runs: Runs holding test-loss records.
        architecture: dense (one expert) or moe (more than one).

    Returns:
        (C, L_test) pairs in record order.
    """
    architecture = Architecture(architecture) if isinstance(architecture, str) else architecture
    points = []
    for record in runs.records(include_test=True):
        if record.loss_kind is not LossKind.TEST:
            continue
        is_moe = record.experts > 1
        if is_moe == (architecture is Architecture.MOE):
            points.append((_compute(record), record.loss))
    return points


def _fit_architecture(runs: RunSet, architecture: Architecture):
    points = heldout_loss_points(runs, architecture)
    if len(points) < MIN_POWER_LAW_POINTS:
        raise TooFewPoints(
            f"{architecture.value} runs have {len(points)} test-loss records, "
            f"need at least {MIN_POWER_LAW_POINTS}"
        )
    return points, fit_power_law(points)


def fit_generalization(runs: RunSet) -> GeneralizationReport:
    """
    Fit L_test = lam / C**alpha per architecture and compare the trends.

    The comparison counts, over a log grid of the shared compute range, how
    often the expert trend predicts a lower test loss.

    Raises:
        TooFewPoints: If either architecture has fewer than three test points.
    """
    dense_points, dense_fit = _fit_architecture(runs, Architecture.DENSE)
    moe_points, moe_fit = _fit_architecture(runs, Architecture.MOE)

    low = max(dense_fit.loss_range[0], moe_fit.loss_range[0])
    high = min(dense_fit.loss_range[1], moe_fit.loss_range[1])
    fraction = None
    if high > low:
        grid = np.logspace(math.log10(low), math.log10(high), COMPARISON_POINTS)
        fraction = float(np.mean(moe_fit.predict(grid) < dense_fit.predict(grid)))
    else:
        logger.warning("dense and expert runs share no compute range")

    return GeneralizationReport(
        dense_fit=dense_fit,
        moe_fit=moe_fit,
        overlap=interval_overlap(dense_fit, moe_fit),
        moe_lower_fraction=fraction,
        dense_points=tuple(dense_points),
        moe_points=tuple(moe_points),
    )
