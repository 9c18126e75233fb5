"""File helpers: digests, atomic writes and output locations."""

import hashlib
import os
import tempfile
from pathlib import Path
from typing import Optional, Union

from scalepal.constants import OUTPUT_DIR_ENV

PathLike = Union[str, Path]


def file_digest(path: PathLike) -> str:
    """
    Compute the sha256 digest of a file.

    Args:
        path: File to hash.

    Returns:
        Hex digest prefixed with 'sha256:'.
    """
    sha = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            sha.update(chunk)
    return f"sha256:{sha.hexdigest()}"


def text_digest(text: str) -> str:
    """Compute the sha256 digest of a string."""
    return f"sha256:{hashlib.sha256(text.encode('utf-8')).hexdigest()}"


def atomic_write_text(path: PathLike, text: str) -> Path:
    """
    Write text to a file through a temporary sibling and a rename.

    Args:
        path: Destination path; parent directories are created.
        text: Content to write.

    Returns:
        The destination path.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(
        prefix=f".{target.name}.", suffix=".tmp", dir=str(target.parent)
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def resolve_output_path(output: Optional[PathLike], default_name: str) -> Path:
    """
    Decide where a command writes its main output.

    A missing output or a bare file name is placed in the directory named by
    the SCALEPAL_OUTPUT_DIR environment variable, or the working directory.

    Args:
        output: The --output value, if any.
        default_name: File name used when no output was given.

    Returns:
        The resolved output path.
    """
    base = os.environ.get(OUTPUT_DIR_ENV)
    if output is None:
        return Path(base or ".") / default_name
    path = Path(output)
    if base and not path.is_absolute() and path.parent == Path("."):
        return Path(base) / path
    return path
