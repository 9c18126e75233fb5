"""Per-command JSON configuration merged under command-line flags."""

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from scalepal.constants import (
    DEFAULT_CI_LEVEL,
    DEFAULT_GRAD_TOL,
    DEFAULT_GRID_POINTS,
    DEFAULT_HUBER_DELTA,
    DEFAULT_MAX_ITER,
    DEFAULT_REL_TOL,
    DEFAULT_SMOOTH_SIGMA,
    DEFAULT_STEP_TOL,
)
from scalepal.exceptions import ConfigError, InputFileNotFound
from scalepal.file_utils import PathLike

logger = logging.getLogger(__name__)

# Keys every command accepts
COMMON_DEFAULTS: Dict[str, Any] = {
    "input": None,
    "output": None,
    "seed": 0,
    "format": None,
}

# Built-in defaults; a key here may be set in the command's config file
COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "fit-loss": {
        "law": "moe",
        "scale": None,
        "derive_scale": None,
        "smooth_window": None,
        "smooth_sigma": DEFAULT_SMOOTH_SIGMA,
        "include_test": False,
        "huber_delta": DEFAULT_HUBER_DELTA,
        "bootstrap": 0,
        "ci_level": DEFAULT_CI_LEVEL,
        "workers": 1,
        "extrapolate_scale": None,
        "extrapolate_experts": 1,
        "token_grid": None,
        "max_iter": DEFAULT_MAX_ITER,
        "grad_tol": DEFAULT_GRAD_TOL,
        "step_tol": DEFAULT_STEP_TOL,
    },
    "allocate": {
        "experts": 1,
        "budget": None,
        "budget_grid": None,
        "verify": False,
        "grid_points": DEFAULT_GRID_POINTS,
        "efficiency": False,
    },
    "hparams": {
        "knob": "batch_size",
        "token_levels": None,
        "rel_tol": DEFAULT_REL_TOL,
        "include_boundary": False,
    },
    "noise": {
        "eps_max": 1.0,
        "optimizer": "both",
        "batch_grid": None,
    },
    "synth": {
        "heatmap": None,
    },
    "generalize": {},
}


def load_config(path: PathLike) -> Dict[str, Any]:
    """
    Read a JSON config document.

    Raises:
        InputFileNotFound: If the file does not exist.
        ConfigError: If it is not a JSON object.
    """
    path = Path(path)
    if not path.is_file():
        raise InputFileNotFound(str(path))
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except json.JSONDecodeError as e:
        raise ConfigError(f"cannot parse config '{path}': {e}")
    if not isinstance(document, dict):
        raise ConfigError(f"config '{path}' must hold a JSON object")
    return document


def _check_type(key: str, value: Any, default: Any) -> Any:
    """Coerce a config value to the type of its built-in default."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def resolve_options(command: str, args: argparse.Namespace,
                    config: Optional[Mapping[str, Any]] = None) -> argparse.Namespace:
    """
    Merge flags, config values and built-in defaults for one command.

    Flags left unset on the command line are None; for those the config
    value is used if present, else the built-in default.

    Args:
        command: Subcommand name.
        args: Parsed arguments.
        config: Config document for the command, if any.

    Returns:
        A new namespace with every option of the command filled in.

    Raises:
        ConfigError: If the config names an unknown key or a value has the
            wrong type.
    """
    defaults = dict(COMMON_DEFAULTS)
    defaults.update(COMMAND_DEFAULTS[command])
    config = dict(config or {})

    unknown = sorted(set(config) - set(defaults))
    if unknown:
        raise ConfigError(
            f"unknown config key{'s' if len(unknown) > 1 else ''} for {command}: "
            + ", ".join(unknown)
        )

    merged = argparse.Namespace(**vars(args))
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            if key in config:
                value = _check_type(key, config[key], default)
                logger.debug("%s: %s=%r from config", command, key, value)
            else:
                value = default
        setattr(merged, key, value)
    return merged
