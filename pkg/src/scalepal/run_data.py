"""Loading, saving and scale derivation for training-run logs."""

import io
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Union

import pandas as pd

from scalepal.constants import RUN_COLUMNS, RUN_UNITS, SIX_PD_FACTOR, UNITS_COMMENT, UNITS_KEY
from scalepal.exceptions import EmptyInput, InputFileNotFound, MissingField, ParseError, SchemaError
from scalepal.file_utils import PathLike, atomic_write_text, file_digest
from scalepal.models import FileFormat, Provenance, RunSet, ScaleRule, TrainingRecord
from scalepal.time_utils import format_timestamp, now
from scalepal.validators import check_columns, parse_row

logger = logging.getLogger(__name__)


def detect_format(path: PathLike) -> FileFormat:
    """Guess the run file format from the file suffix."""
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".json", ".ndjson"):
        return FileFormat.JSONL
    return FileFormat.CSV


def read_table(path: PathLike, fmt: FileFormat) -> pd.DataFrame:
    """
    Read a CSV or JSONL file into a DataFrame of raw cells.

    CSV cells stay strings so that numbers are parsed exactly once, by the
    validators. Comment lines starting with '#' are skipped, as is a JSONL
    object carrying the units key.

    Args:
        path: File to read.
        fmt: Declared format.

    Returns:
        DataFrame with one row per record.

    Raises:
        InputFileNotFound: If the file does not exist.
        EmptyInput: If the file holds no rows.
        ParseError: If the file is malformed.
    """
    path = Path(path)
    if not path.is_file():
        raise InputFileNotFound(str(path))
    if path.stat().st_size == 0:
        raise EmptyInput(f"'{path}' is empty")

    try:
        if fmt is FileFormat.CSV:
            frame = pd.read_csv(
                path,
                dtype=str,
                keep_default_na=False,
                comment="#",
                skipinitialspace=True,
            )
        else:
            frame = pd.read_json(
                path,
                lines=True,
                dtype=False,
                precise_float=True,
                convert_dates=False,
                keep_default_dates=False,
            )
    except pd.errors.EmptyDataError:
        raise EmptyInput(f"'{path}' has no header or rows")
    except (pd.errors.ParserError, ValueError) as e:
        raise ParseError(f"cannot parse '{path}' as {fmt.value}: {e}")

    if UNITS_KEY in frame.columns:
        frame = frame[frame[UNITS_KEY].isna()].drop(columns=[UNITS_KEY])
        frame = frame.reset_index(drop=True)
    return frame


def load_runs(path: PathLike, fmt: Optional[Union[FileFormat, str]] = None) -> RunSet:
    """
    Load and validate a run file.

    Args:
        path: CSV or JSONL file in the canonical run schema.
        fmt: File format; guessed from the suffix when omitted.

    Returns:
        A validated RunSet.

    Raises:
        InputFileNotFound: If the file does not exist.
        EmptyInput: If the file holds no records.
        SchemaError: If the header or any row violates the schema; the error
            carries every row-level diagnostic.
    """
    if fmt is None:
        fmt = detect_format(path)
    elif isinstance(fmt, str):
        fmt = FileFormat(fmt)

    frame = read_table(path, fmt)

    header_problems = check_columns([str(c) for c in frame.columns])
    if header_problems:
        column, reason = header_problems[0]
        raise SchemaError(
            0, column, reason,
            [f"header, column '{c}': {r}" for c, r in header_problems],
        )
    if frame.empty:
        raise EmptyInput(f"'{path}' has a header but no records")

    records: List[TrainingRecord] = []
    diagnostics: List[str] = []
    first = None
    for index, raw in enumerate(frame.to_dict(orient="records"), start=1):
        record, problems = parse_row(raw)
        if problems:
            if first is None:
                first = (index, problems[0][0], problems[0][1])
            diagnostics.extend(f"row {index}, column '{c}': {r}" for c, r in problems)
            continue
        records.append(record)

    if first is not None:
        raise SchemaError(first[0], first[1], first[2], diagnostics)

    provenance = Provenance(
        digest=file_digest(path),
        source=str(path),
        loaded_at=format_timestamp(now()),
    )
    runs = RunSet.from_records(records, provenance)
    logger.info(
        "loaded %d records in %d series from %s", len(records), len(runs), path
    )
    return runs


def runs_to_text(runs: RunSet, fmt: Union[FileFormat, str]) -> str:
    """
    Serialize a RunSet in the canonical schema.

    Args:
        runs: Runs to serialize (test series included).
        fmt: Output format.

    Returns:
        File content with a units header.
    """
    fmt = FileFormat(fmt) if isinstance(fmt, str) else fmt
    rows = [record.as_row() for record in runs.records(include_test=True)]

    if fmt is FileFormat.JSONL:
        lines = [json.dumps({UNITS_KEY: RUN_UNITS}, sort_keys=True)]
        lines.extend(json.dumps(row) for row in rows)
        return "\n".join(lines) + "\n"

    frame = pd.DataFrame(rows, columns=list(RUN_COLUMNS))
    buffer = io.StringIO()
    buffer.write(UNITS_COMMENT + "\n")
    frame.to_csv(buffer, index=False, na_rep="", lineterminator="\n")
    return buffer.getvalue()


def save_runs(runs: RunSet, path: PathLike, fmt: Optional[Union[FileFormat, str]] = None) -> Path:
    """Write a RunSet atomically in the canonical schema."""
    if fmt is None:
        fmt = detect_format(path)
    return atomic_write_text(path, runs_to_text(runs, fmt))


def derive_scale(record: TrainingRecord, rule: Union[ScaleRule, str]) -> TrainingRecord:
    """
    Fill in model scale N and compute C for a record.

    Args:
        record: The record to complete.
        rule: six_pd (N = 6 * params) or flops_over_tokens (N = flops / tokens).

    Returns:
        A new record with model_scale and flops set. Applying the same rule
        twice gives the same record.

    Raises:
        MissingField: If the rule's input field is absent.
    """
    rule = ScaleRule(rule) if isinstance(rule, str) else rule

    if rule is ScaleRule.SIX_PD:
        if record.params is None:
            raise MissingField("params_P")
        model_scale = SIX_PD_FACTOR * record.params
        return replace(record, model_scale=model_scale, flops=model_scale * record.tokens)

    if record.flops is None:
        raise MissingField("flops_C")
    return replace(record, model_scale=record.flops / record.tokens)


def derive_runs_scale(runs: RunSet, rule: Union[ScaleRule, str]) -> RunSet:
    """Apply derive_scale to every record of a RunSet."""
    records = [derive_scale(r, rule) for r in runs.records(include_test=True)]
    return RunSet.from_records(records, runs.provenance)
