"""UTC timestamps for run-file provenance."""

from datetime import datetime

import pytz


def now() -> datetime:
    """The current time as an aware UTC datetime."""
    return datetime.now(pytz.UTC)


def format_timestamp(dt: datetime) -> str:
    """
    Format a datetime as ISO 8601 in UTC, to the second.

    Args:
        dt: The datetime to format. Naive values are taken to be UTC.

    Returns:
        A string like '2024-05-01T12:00:00+00:00'.
    """
    if dt.tzinfo is None:
        dt = pytz.UTC.localize(dt)
    return dt.astimezone(pytz.UTC).isoformat(timespec="seconds")
