"""Tests for timestamp utilities."""

import sys
from datetime import datetime
from pathlib import Path

import pytz

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from scalepal.time_utils import format_timestamp, now


class TestNow:
    """Tests for now."""

    def test_utc(self):
        """Test the current time is aware and in UTC."""
        current = now()
        assert current.tzinfo is pytz.UTC
        assert current.utcoffset().total_seconds() == 0

    def test_formats_without_offset_change(self):
        """Test a load timestamp ends in the UTC offset."""
        assert format_timestamp(now()).endswith("+00:00")


class TestFormatTimestamp:
    """Tests for format_timestamp."""

    def test_naive_is_utc(self):
        """Test naive datetimes are read as UTC."""
        assert format_timestamp(datetime(2024, 5, 1, 12, 0, 30, 999)) == "2024-05-01T12:00:30+00:00"

    def test_converted_to_utc(self):
        """Test aware datetimes are converted."""
        london = pytz.timezone("Europe/London").localize(datetime(2024, 7, 1, 13, 0))
        assert format_timestamp(london) == "2024-07-01T12:00:00+00:00"
