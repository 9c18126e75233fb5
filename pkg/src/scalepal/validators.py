"""Validation functions for run file rows and records."""

import math
from typing import List, Mapping, Optional, Tuple

from scalepal.constants import OPTIONAL_RUN_COLUMNS, RUN_COLUMNS, SCALE_CONSISTENCY_TOL
from scalepal.exceptions import ValidationError
from scalepal.models import LossKind, TrainingRecord

# Symbols used in diagnostics, keyed by column name
FIELD_SYMBOLS = {
    "tokens": "tokens_D",
    "loss": "loss_L",
    "params": "params_P",
    "flops": "flops_C",
    "model_scale": "model_scale_N",
    "experts": "experts_E",
    "batch_size": "batch_size_B",
    "seq_len": "seq_len",
    "learning_rate": "learning_rate_eps",
    "step": "step",
}

Problem = Tuple[str, str]


def is_blank(value: object) -> bool:
    """Check whether a raw cell is empty."""
    if value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return isinstance(value, str) and not value.strip()


def parse_real(value: object) -> float:
    """
    Parse a raw cell as a finite real number.

    Args:
        value: A string in decimal or scientific notation, or a number.

    Returns:
        The parsed float.

    Raises:
        ValueError: If the value is not a finite number.
    """
    if isinstance(value, bool):
        raise ValueError("not a number")
    if isinstance(value, str):
        value = value.strip()
    try:
        number = float(value)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise ValueError(f"not a number: {value!r}")
    if not math.isfinite(number):
        raise ValueError(f"not finite: {value!r}")
    return number


def parse_integer(value: object) -> int:
    """Parse a raw cell as an integer, accepting integral floats like '8.0'."""
    number = parse_real(value)
    if not number.is_integer():
        raise ValueError(f"not an integer: {value!r}")
    return int(number)


def check_columns(columns: List[str]) -> List[Problem]:
    """
    Compare a header against the canonical run schema.

    Args:
        columns: Column names found in the file.

    Returns:
        List of (column, reason) problems; empty if the header is valid.
    """
    problems: List[Problem] = []
    present = set(columns)
    for name in RUN_COLUMNS:
        if name not in present and name not in OPTIONAL_RUN_COLUMNS:
            problems.append((name, "missing column"))
    for name in columns:
        if name not in RUN_COLUMNS:
            problems.append((name, "unknown column"))
    return problems


def _positive(raw: Mapping[str, object], name: str, problems: List[Problem],
              integer: bool = False) -> Optional[float]:
    """Parse a required or optional positive field, recording problems."""
    value = raw.get(name)
    if is_blank(value):
        if name not in OPTIONAL_RUN_COLUMNS:
            problems.append((name, f"{FIELD_SYMBOLS[name]} is required"))
        return None
    try:
        number = parse_integer(value) if integer else parse_real(value)
    except ValueError as e:
        problems.append((name, str(e)))
        return None
    if number <= 0:
        problems.append((name, f"{FIELD_SYMBOLS[name]} must be positive"))
        return None
    return number


def parse_row(raw: Mapping[str, object]) -> Tuple[Optional[TrainingRecord], List[Problem]]:
    """
    Convert one raw row into a TrainingRecord.

    Args:
        raw: Mapping from column name to raw cell value.

    Returns:
        Tuple of (record or None, problems). The record is None whenever
        any problem was found.
    """
    problems: List[Problem] = []

    run_id = raw.get("run_id")
    if is_blank(run_id):
        problems.append(("run_id", "run_id is required"))
    else:
        run_id = str(run_id).strip()

    step: Optional[int] = None
    if is_blank(raw.get("step")):
        problems.append(("step", "step is required"))
    else:
        try:
            step = parse_integer(raw.get("step"))
            if step < 0:
                problems.append(("step", "step must be non-negative"))
        except ValueError as e:
            problems.append(("step", str(e)))

    tokens = _positive(raw, "tokens", problems)
    loss = _positive(raw, "loss", problems)
    params = _positive(raw, "params", problems)
    flops = _positive(raw, "flops", problems)
    model_scale = _positive(raw, "model_scale", problems)
    batch_size = _positive(raw, "batch_size", problems, integer=True)
    seq_len = _positive(raw, "seq_len", problems, integer=True)
    learning_rate = _positive(raw, "learning_rate", problems)

    experts: Optional[int] = None
    if is_blank(raw.get("experts")):
        problems.append(("experts", "experts_E is required"))
    else:
        try:
            experts = parse_integer(raw.get("experts"))
            if experts < 1:
                problems.append(("experts", "experts_E must be at least 1"))
        except ValueError as e:
            problems.append(("experts", str(e)))

    kind = LossKind.TRAIN
    if not is_blank(raw.get("loss_kind")):
        text = str(raw.get("loss_kind")).strip().lower()
        try:
            kind = LossKind(text)
        except ValueError:
            problems.append(("loss_kind", f"loss_kind must be 'train' or 'test', got {text!r}"))

    if flops is not None and model_scale is not None and tokens is not None:
        problems.extend(_scale_consistency(flops, model_scale, tokens))

    if problems:
        return None, problems

    record = TrainingRecord(
        run_id=run_id,  # type: ignore[arg-type]
        step=step,  # type: ignore[arg-type]
        tokens=tokens,  # type: ignore[arg-type]
        loss=loss,  # type: ignore[arg-type]
        experts=experts,  # type: ignore[arg-type]
        batch_size=int(batch_size),  # type: ignore[arg-type]
        seq_len=int(seq_len),  # type: ignore[arg-type]
        learning_rate=learning_rate,  # type: ignore[arg-type]
        params=params,
        flops=flops,
        model_scale=model_scale,
        loss_kind=kind,
    )
    return record, []


def _scale_consistency(flops: float, model_scale: float, tokens: float) -> List[Problem]:
    """Check C = N * D within the relative tolerance."""
    expected = model_scale * tokens
    if abs(flops - expected) / flops > SCALE_CONSISTENCY_TOL:
        return [(
            "flops",
            f"flops_C = {flops:g} disagrees with model_scale_N * tokens_D = "
            f"{expected:g} beyond tolerance {SCALE_CONSISTENCY_TOL:g}",
        )]
    return []


def validate_record(record: TrainingRecord) -> None:
    """
    Check the invariants of a record built in code.

    Args:
        record: The record to check.

    Raises:
        ValidationError: If any invariant fails.
    """
    _, problems = parse_row(record.as_row())
    if problems:
        column, reason = problems[0]
        raise ValidationError(
            f"run '{record.run_id}' step {record.step}: {column}: {reason}"
        )
