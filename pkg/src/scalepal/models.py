"""Data models for training-run logs."""

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from scalepal.exceptions import ValidationError


class LossKind(Enum):
    """Which split a logged loss was measured on."""

    TRAIN = "train"
    TEST = "test"


class FileFormat(Enum):
    """Supported run file formats."""

    CSV = "csv"
    JSONL = "jsonl"


class ScaleRule(Enum):
    """How model scale N is derived from a record."""

    SIX_PD = "six_pd"
    FLOPS_OVER_TOKENS = "flops_over_tokens"


class Knob(Enum):
    """Hyperparameter swept along an iso-token contour."""

    BATCH_SIZE = "batch_size"
    LEARNING_RATE = "learning_rate"


@dataclass(frozen=True)
class RunConfig:
    """The fixed configuration shared by every record of one run."""

    model_scale: Optional[float]
    experts: int
    batch_size: int
    learning_rate: float
    seq_len: int

    def knob_value(self, knob: Knob) -> float:
        """Return the value of a swept hyperparameter."""
        if knob is Knob.BATCH_SIZE:
            return float(self.batch_size)
        return float(self.learning_rate)

    def matches(self, other: "RunConfig", rel_tol: float = 1e-9) -> bool:
        """Compare configurations, allowing rounding noise in real fields."""
        if (self.model_scale is None) != (other.model_scale is None):
            return False
        if self.model_scale is not None and not math.isclose(
            self.model_scale, other.model_scale, rel_tol=rel_tol
        ):
            return False
        return (
            self.experts == other.experts
            and self.batch_size == other.batch_size
            and self.seq_len == other.seq_len
            and math.isclose(self.learning_rate, other.learning_rate, rel_tol=rel_tol)
        )


@dataclass(frozen=True)
class TrainingRecord:
    """One logged observation of a training run."""

    run_id: str
    step: int
    tokens: float
    loss: float
    experts: int
    batch_size: int
    seq_len: int
    learning_rate: float
    params: Optional[float] = None
    flops: Optional[float] = None
    model_scale: Optional[float] = None
    loss_kind: LossKind = LossKind.TRAIN

    @property
    def config(self) -> RunConfig:
        """The run configuration this record belongs to."""
        return RunConfig(
            model_scale=self.model_scale,
            experts=self.experts,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seq_len=self.seq_len,
        )

    def as_row(self) -> Dict[str, object]:
        """Return the record keyed by run file column names."""
        return {
            "run_id": self.run_id,
            "step": self.step,
            "tokens": self.tokens,
            "loss": self.loss,
            "params": self.params,
            "flops": self.flops,
            "model_scale": self.model_scale,
            "experts": self.experts,
            "batch_size": self.batch_size,
            "seq_len": self.seq_len,
            "learning_rate": self.learning_rate,
            "loss_kind": self.loss_kind.value,
        }


@dataclass(frozen=True)
class RunSeries:
    """Time-ordered records of a single run."""

    run_id: str
    config: RunConfig
    records: Tuple[TrainingRecord, ...]
    loss_kind: LossKind = LossKind.TRAIN

    def __post_init__(self):
        """Check ordering and configuration invariants."""
        previous = None
        for record in self.records:
            if not record.config.matches(self.config):
                raise ValidationError(
                    f"run '{self.run_id}': step {record.step} changes the run "
                    f"configuration"
                )
            if previous is not None and record.tokens <= previous:
                raise ValidationError(
                    f"run '{self.run_id}': tokens must strictly increase "
                    f"(step {record.step} has {record.tokens:g} after {previous:g})"
                )
            previous = record.tokens

    def __len__(self) -> int:
        return len(self.records)

    @property
    def tokens(self) -> np.ndarray:
        """Token counts of all records."""
        return np.array([r.tokens for r in self.records], dtype=float)

    @property
    def losses(self) -> np.ndarray:
        """Losses of all records."""
        return np.array([r.loss for r in self.records], dtype=float)


@dataclass(frozen=True)
class Provenance:
    """Where a RunSet came from."""

    digest: str
    source: str
    loaded_at: Optional[str] = field(default=None, compare=False)


@dataclass(frozen=True)
class RunSet:
    """An immutable collection of run series."""

    series: Tuple[RunSeries, ...]
    provenance: Provenance

    def __post_init__(self):
        """Check that series keys are unique."""
        seen = set()
        for series in self.series:
            key = (series.run_id, series.loss_kind)
            if key in seen:
                raise ValidationError(
                    f"duplicate run_id '{series.run_id}' ({series.loss_kind.value})"
                )
            seen.add(key)

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self) -> Iterator[RunSeries]:
        return iter(self.series)

    @classmethod
    def from_records(
        cls, records: Iterable[TrainingRecord], provenance: Provenance
    ) -> "RunSet":
        """
        Group records into series keyed by run id and loss kind.

        Args:
            records: Records in any order.
            provenance: Source description for the set.

        Returns:
            A RunSet whose series keep first-seen order and are sorted by step.
        """
        groups: "OrderedDict[Tuple[str, LossKind], List[TrainingRecord]]" = (
            OrderedDict()
        )
        for record in records:
            groups.setdefault((record.run_id, record.loss_kind), []).append(record)

        series = []
        for (run_id, kind), members in groups.items():
            members.sort(key=lambda r: (r.step, r.tokens))
            series.append(
                RunSeries(
                    run_id=run_id,
                    config=members[0].config,
                    records=tuple(members),
                    loss_kind=kind,
                )
            )
        return cls(series=tuple(series), provenance=provenance)

    def records(self, include_test: bool = False) -> Iterator[TrainingRecord]:
        """Iterate over records, skipping test losses unless requested."""
        for series in self.select(include_test):
            yield from series.records

    def select(self, include_test: bool = False) -> List[RunSeries]:
        """Return training series, plus test series when requested."""
        return [
            s
            for s in self.series
            if include_test or s.loss_kind is LossKind.TRAIN
        ]

    def with_series(self, series: Iterable[RunSeries]) -> "RunSet":
        """Return a copy holding different series and the same provenance."""
        return RunSet(series=tuple(series), provenance=self.provenance)

    @property
    def record_count(self) -> int:
        """Total number of records across all series."""
        return sum(len(s) for s in self.series)
