"""Tests for data models."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from scalepal.exceptions import ValidationError
from scalepal.models import (
    Knob,
    LossKind,
    Provenance,
    RunConfig,
    RunSeries,
    RunSet,
    TrainingRecord,
)

PROVENANCE = Provenance(digest="sha256:test", source="memory")


def make_record(run_id="run", step=0, tokens=1e9, loss=3.0, experts=1, kind=LossKind.TRAIN, **kwargs):
    """Build a record with sensible defaults."""
    fields = dict(
        run_id=run_id,
        step=step,
        tokens=tokens,
        loss=loss,
        experts=experts,
        batch_size=256,
        seq_len=2048,
        learning_rate=3e-4,
        model_scale=6e8,
        loss_kind=kind,
    )
    fields.update(kwargs)
    return TrainingRecord(**fields)


class TestRunConfig:
    """Tests for RunConfig."""

    def test_knob_value(self):
        """Test knob lookup."""
        config = RunConfig(model_scale=1e9, experts=8, batch_size=512, learning_rate=1e-3, seq_len=1024)
        assert config.knob_value(Knob.BATCH_SIZE) == 512.0
        assert config.knob_value(Knob.LEARNING_RATE) == 1e-3

    def test_matches_tolerates_rounding(self):
        """Test that real fields compare with a tolerance."""
        a = RunConfig(model_scale=1e9, experts=1, batch_size=1, learning_rate=1e-3, seq_len=1)
        b = RunConfig(model_scale=1e9 * (1 + 1e-12), experts=1, batch_size=1, learning_rate=1e-3, seq_len=1)
        assert a.matches(b)

    def test_matches_detects_changes(self):
        """Test that a different expert count does not match."""
        a = RunConfig(model_scale=1e9, experts=1, batch_size=1, learning_rate=1e-3, seq_len=1)
        b = RunConfig(model_scale=1e9, experts=2, batch_size=1, learning_rate=1e-3, seq_len=1)
        assert not a.matches(b)

    def test_missing_scale_only_matches_missing(self):
        """Test None model scale handling."""
        a = RunConfig(model_scale=None, experts=1, batch_size=1, learning_rate=1e-3, seq_len=1)
        b = RunConfig(model_scale=1e9, experts=1, batch_size=1, learning_rate=1e-3, seq_len=1)
        assert not a.matches(b)
        assert a.matches(a)


class TestTrainingRecord:
    """Tests for TrainingRecord."""

    def test_as_row_uses_column_names(self):
        """Test the row mapping."""
        row = make_record(params=1e8).as_row()
        assert row["params"] == 1e8
        assert row["flops"] is None
        assert row["loss_kind"] == "train"

    def test_config(self):
        """Test the derived configuration."""
        config = make_record(experts=8).config
        assert config.experts == 8
        assert config.model_scale == 6e8


class TestRunSeries:
    """Tests for RunSeries."""

    def test_tokens_and_losses(self):
        """Test array accessors."""
        records = (make_record(step=1, tokens=1e9, loss=3.0), make_record(step=2, tokens=2e9, loss=2.5))
        series = RunSeries("run", records[0].config, records)
        np.testing.assert_array_equal(series.tokens, [1e9, 2e9])
        np.testing.assert_array_equal(series.losses, [3.0, 2.5])
        assert len(series) == 2

    def test_tokens_must_increase(self):
        """Test that repeated token counts are rejected."""
        records = (make_record(step=1, tokens=1e9), make_record(step=2, tokens=1e9))
        with pytest.raises(ValidationError, match="strictly increase"):
            RunSeries("run", records[0].config, records)

    def test_config_must_not_change(self):
        """Test that a mid-run configuration change is rejected."""
        records = (make_record(step=1, tokens=1e9), make_record(step=2, tokens=2e9, batch_size=512))
        with pytest.raises(ValidationError, match="configuration"):
            RunSeries("run", records[0].config, records)


class TestRunSet:
    """Tests for RunSet."""

    def test_from_records_groups_and_sorts(self):
        """Test grouping by run id and sorting by step."""
        records = [
            make_record("a", step=2, tokens=2e9),
            make_record("b", step=1, tokens=1e9),
            make_record("a", step=1, tokens=1e9),
        ]
        runs = RunSet.from_records(records, PROVENANCE)
        assert [s.run_id for s in runs] == ["a", "b"]
        assert [r.step for r in runs.series[0].records] == [1, 2]
        assert runs.record_count == 3

    def test_test_series_are_separate(self):
        """Test that train and test losses of one run form two series."""
        records = [
            make_record("a", step=1, tokens=1e9),
            make_record("a", step=1, tokens=1e9, kind=LossKind.TEST),
        ]
        runs = RunSet.from_records(records, PROVENANCE)
        assert len(runs) == 2
        assert len(list(runs.records())) == 1
        assert len(list(runs.records(include_test=True))) == 2

    def test_duplicate_series_rejected(self):
        """Test the unique-key invariant."""
        series = RunSeries("a", make_record().config, (make_record(),))
        with pytest.raises(ValidationError, match="duplicate"):
            RunSet(series=(series, series), provenance=PROVENANCE)

    def test_with_series_keeps_provenance(self):
        """Test copying with different series."""
        runs = RunSet.from_records([make_record("a"), make_record("b")], PROVENANCE)
        subset = runs.with_series(runs.series[:1])
        assert len(subset) == 1
        assert subset.provenance == PROVENANCE

    def test_provenance_ignores_load_time(self):
        """Test that load time does not affect equality."""
        a = Provenance("sha256:x", "f.csv", loaded_at="2024-01-01")
        b = Provenance("sha256:x", "f.csv", loaded_at="2025-01-01")
        assert a == b
