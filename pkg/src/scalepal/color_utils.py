"""Terminal colors for reports, log records and error messages."""

import os
import sys
from enum import Enum
from typing import Dict, Optional

import colorama
from colorama import Fore, Style

colorama.init(autoreset=True)


class ColorScheme(Enum):
    """Roles a piece of output can play."""

    SUCCESS = "success"
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"
    DEBUG = "debug"
    HEADER = "header"
    FIELD = "field"
    VALUE = "value"
    SEPARATOR = "separator"


SCHEME_COLORS: Dict[ColorScheme, str] = {
    ColorScheme.SUCCESS: Fore.GREEN,
    ColorScheme.ERROR: Fore.RED,
    ColorScheme.WARNING: Fore.YELLOW,
    ColorScheme.INFO: Fore.CYAN,
    ColorScheme.DEBUG: Fore.LIGHTBLACK_EX,
    ColorScheme.HEADER: Fore.BLUE + Style.BRIGHT,
    ColorScheme.FIELD: Fore.MAGENTA,
    ColorScheme.VALUE: Fore.GREEN,
    ColorScheme.SEPARATOR: Fore.LIGHTBLACK_EX,
}


class ColorConfig:
    """Whether and how to color output."""

    def __init__(self, use_colors: Optional[bool] = None, stream=None):
        """
        Decide on colors.

        Args:
            use_colors: Force colors on or off. If None, colors are used only
                when NO_COLOR is unset and the stream is a terminal.
            stream: Stream checked when auto-detecting (default: stdout).
        """
        if use_colors is None:
            stream = stream if stream is not None else sys.stdout
            isatty = getattr(stream, "isatty", None)
            use_colors = not os.environ.get("NO_COLOR") and bool(isatty and isatty())
        self.use_colors = bool(use_colors)

    def get_color(self, scheme: ColorScheme) -> str:
        """ANSI prefix for a scheme, or "" when colors are off."""
        return SCHEME_COLORS.get(scheme, "") if self.use_colors else ""

    def colorize(self, text: str, scheme: ColorScheme) -> str:
        color = self.get_color(scheme)
        return f"{color}{text}{Style.RESET_ALL}" if color else text

    def success(self, text: str) -> str:
        return self.colorize(text, ColorScheme.SUCCESS)

    def error(self, text: str) -> str:
        return self.colorize(text, ColorScheme.ERROR)

    def warning(self, text: str) -> str:
        return self.colorize(text, ColorScheme.WARNING)

    def info(self, text: str) -> str:
        return self.colorize(text, ColorScheme.INFO)

    def debug(self, text: str) -> str:
        return self.colorize(text, ColorScheme.DEBUG)

    def header(self, text: str) -> str:
        return self.colorize(text, ColorScheme.HEADER)

    def field(self, text: str) -> str:
        return self.colorize(text, ColorScheme.FIELD)

    def value(self, text: str) -> str:
        return self.colorize(text, ColorScheme.VALUE)

    def separator(self, text: str) -> str:
        return self.colorize(text, ColorScheme.SEPARATOR)


_color_config: Optional[ColorConfig] = None


def get_color_config() -> ColorConfig:
    """The process-wide color configuration, auto-detected on first use."""
    global _color_config
    if _color_config is None:
        _color_config = ColorConfig()
    return _color_config


def set_color_config(config: ColorConfig) -> None:
    global _color_config
    _color_config = config


def format_field(name: str, value: object) -> str:
    """An indented `name: value` line, as printed under a result."""
    config = get_color_config()
    return f"  {config.field(name)}: {config.value(str(value))}"


def format_written(message: str, details: Optional[str] = None) -> str:
    """
    A `✓` line announcing written output.

    Args:
        message: What was written and where.
        details: Optional second line, such as the sibling table files.

    Returns:
        The formatted message.
    """
    config = get_color_config()
    result = config.success(f"✓ {message}")
    if details:
        result += f"\n  {config.info(details)}"
    return result


def format_failure(message: str, suggestion: Optional[str] = None) -> str:
    """
    An error line, with a suggestion line when one is known.

    Args:
        message: The `✗ ...` message from the error handler.
        suggestion: How the user might fix the input.

    Returns:
        The formatted message.
    """
    config = get_color_config()
    result = config.error(message)
    if suggestion:
        result += f"\n  {config.warning('💡 Suggestion:')} {suggestion}"
    return result
