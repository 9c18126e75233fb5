"""Tests for validation functions."""

import sys
from pathlib import Path

import pytest

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from scalepal.constants import RUN_COLUMNS
from scalepal.exceptions import ValidationError
from scalepal.models import LossKind, TrainingRecord
from scalepal.validators import (
    check_columns,
    is_blank,
    parse_integer,
    parse_real,
    parse_row,
    validate_record,
)


def raw_row(**overrides):
    """A valid raw CSV row as strings."""
    row = {
        "run_id": "r1",
        "step": "10",
        "tokens": "1e9",
        "loss": "3.25",
        "params": "",
        "flops": "6e17",
        "model_scale": "6e8",
        "experts": "8",
        "batch_size": "256",
        "seq_len": "2048",
        "learning_rate": "3e-4",
        "loss_kind": "",
    }
    row.update(overrides)
    return row


class TestParsing:
    """Tests for cell parsers."""

    def test_is_blank(self):
        """Test blank detection."""
        assert is_blank(None)
        assert is_blank("  ")
        assert is_blank(float("nan"))
        assert not is_blank("0")

    def test_parse_real_scientific(self):
        """Test scientific notation."""
        assert parse_real("1.5e9") == 1.5e9
        assert parse_real(" 2 ") == 2.0

    @pytest.mark.parametrize("value", ["abc", "inf", "nan", True])
    def test_parse_real_rejects(self, value):
        """Test non-numbers and non-finite values."""
        with pytest.raises(ValueError):
            parse_real(value)

    def test_parse_integer(self):
        """Test integral floats are accepted."""
        assert parse_integer("8.0") == 8
        with pytest.raises(ValueError, match="not an integer"):
            parse_integer("8.5")


class TestCheckColumns:
    """Tests for check_columns."""

    def test_canonical_header(self):
        """Test the canonical header has no problems."""
        assert check_columns(list(RUN_COLUMNS)) == []

    def test_missing_required_column(self):
        """Test a missing experts column is reported."""
        columns = [c for c in RUN_COLUMNS if c != "experts"]
        assert ("experts", "missing column") in check_columns(columns)

    def test_optional_columns_may_be_absent(self):
        """Test optional columns may be left out of the header."""
        columns = [c for c in RUN_COLUMNS if c not in ("params", "loss_kind")]
        assert check_columns(columns) == []

    def test_unknown_column(self):
        """Test unknown columns are reported."""
        assert ("extra", "unknown column") in check_columns(list(RUN_COLUMNS) + ["extra"])


class TestParseRow:
    """Tests for parse_row."""

    def test_valid_row(self):
        """Test a valid row becomes a record."""
        record, problems = parse_row(raw_row())
        assert problems == []
        assert record.tokens == 1e9
        assert record.experts == 8
        assert record.params is None
        assert record.loss_kind is LossKind.TRAIN

    def test_test_loss_kind(self):
        """Test loss_kind parsing is case-insensitive."""
        record, _ = parse_row(raw_row(loss_kind="TEST"))
        assert record.loss_kind is LossKind.TEST

    def test_negative_loss(self):
        """Test a non-positive loss is rejected."""
        record, problems = parse_row(raw_row(loss="-1"))
        assert record is None
        assert ("loss", "loss_L must be positive") in problems

    def test_zero_experts(self):
        """Test the expert count lower bound."""
        _, problems = parse_row(raw_row(experts="0"))
        assert ("experts", "experts_E must be at least 1") in problems

    def test_missing_required(self):
        """Test a blank required field."""
        _, problems = parse_row(raw_row(tokens=""))
        assert ("tokens", "tokens_D is required") in problems

    def test_inconsistent_flops(self):
        """Test C = N * D is enforced when all three are present."""
        _, problems = parse_row(raw_row(flops="1e18"))
        assert problems and problems[0][0] == "flops"

    def test_all_problems_collected(self):
        """Test that every problem of a row is reported."""
        _, problems = parse_row(raw_row(loss="x", batch_size="0"))
        columns = {column for column, _ in problems}
        assert {"loss", "batch_size"} <= columns

    def test_bad_loss_kind(self):
        """Test an unknown loss kind."""
        _, problems = parse_row(raw_row(loss_kind="valid"))
        assert problems[0][0] == "loss_kind"


class TestValidateRecord:
    """Tests for validate_record."""

    def test_valid_record(self):
        """Test a valid record passes."""
        record = TrainingRecord("r", 0, 1e9, 3.0, 1, 256, 2048, 3e-4)
        validate_record(record)

    def test_invalid_record(self):
        """Test an invalid record raises."""
        record = TrainingRecord("r", 0, 1e9, -3.0, 1, 256, 2048, 3e-4)
        with pytest.raises(ValidationError, match="loss"):
            validate_record(record)
