"""Pretty printer for analysis reports."""

from typing import Any, List, Mapping, Tuple

from scalepal.color_utils import ColorConfig
from scalepal.report import AnalysisReport, ReportSection

TABLE_WIDTH = 78
SECTION_WIDTH = 20
OPERATION_WIDTH = 22
RESULT_WIDTH = TABLE_WIDTH - SECTION_WIDTH - OPERATION_WIDTH - 2
MAX_RESULTS = 4

# Scalars worth showing first, in this order
PREFERRED_KEYS = (
    "alpha", "beta", "gamma", "sigma", "A", "B", "a", "b", "c", "d",
    "alpha_D", "alpha_N", "b_noise", "lambda", "overlap", "compute_overlap",
    "summary", "flagged", "agree", "objective", "converged",
)


def _format_value(value: Any) -> str:
    if isinstance(value, bool) or value is None:
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def _scalars(data: Mapping[str, Any], prefix: str = "") -> List[Tuple[str, Any]]:
    """Flatten scalar entries one level deep."""
    found = []
    for key, value in data.items():
        if isinstance(value, Mapping) and not prefix:
            found.extend(_scalars(value, prefix=f"{key}."))
        elif isinstance(value, (int, float, str, bool)) or value is None:
            found.append((f"{prefix}{key}", value))
    return found


def _clip(text: str, width: int) -> str:
    return text if len(text) <= width else text[: width - 1] + "…"


class PrettyPrinter:
    """Pretty printer for analysis reports."""

    def __init__(self, report: AnalysisReport, use_colors: bool = True):
        """
        Initialize the pretty printer.

        Args:
            report: The report to render.
            use_colors: Whether to use colored output.
        """
        self.report = report
        self.color_config = ColorConfig(use_colors=use_colors)

    def headline(self, section: ReportSection) -> str:
        """A few key results of a section as k=v pairs."""
        scalars = _scalars(section.data)
        rank = {key: i for i, key in enumerate(PREFERRED_KEYS)}
        scalars.sort(key=lambda item: rank.get(item[0].rsplit(".", 1)[-1], len(rank)))
        shown = [
            f"{key.rsplit('.', 1)[-1]}={_format_value(value)}"
            for key, value in scalars[:MAX_RESULTS]
        ]
        return ", ".join(shown)

    def print_table(self) -> str:
        """
        Generate a formatted table of the report sections.

        Returns:
            A string containing the formatted table.
        """
        c = self.color_config
        lines = []

        title = f"ScalePal Report: {self.report.command}"
        lines.append(c.separator("┌" + "─" * TABLE_WIDTH + "┐"))
        lines.append(c.separator("│") + c.header(f" {title:^{TABLE_WIDTH - 2}} ") + c.separator("│"))
        lines.append(c.separator("├" + "─" * SECTION_WIDTH + "┬" + "─" * OPERATION_WIDTH + "┬"
                                 + "─" * RESULT_WIDTH + "┤"))
        lines.append(
            c.separator("│") + c.header(f" {'Section':<{SECTION_WIDTH - 1}}")
            + c.separator("│") + c.header(f" {'Operation':<{OPERATION_WIDTH - 1}}")
            + c.separator("│") + c.header(f" {'Key results':<{RESULT_WIDTH - 1}}")
            + c.separator("│")
        )
        lines.append(c.separator("├" + "─" * SECTION_WIDTH + "┼" + "─" * OPERATION_WIDTH + "┼"
                                 + "─" * RESULT_WIDTH + "┤"))

        for section in self.report.sections:
            name = _clip(section.name, SECTION_WIDTH - 2)
            operation = _clip(section.operation, OPERATION_WIDTH - 2)
            results = _clip(self.headline(section), RESULT_WIDTH - 2)
            lines.append(
                c.separator("│") + c.field(f" {name:<{SECTION_WIDTH - 1}}")
                + c.separator("│") + c.info(f" {operation:<{OPERATION_WIDTH - 1}}")
                + c.separator("│") + c.value(f" {results:<{RESULT_WIDTH - 1}}")
                + c.separator("│")
            )

        lines.append(c.separator("└" + "─" * SECTION_WIDTH + "┴" + "─" * OPERATION_WIDTH + "┴"
                                 + "─" * RESULT_WIDTH + "┘"))

        for warning in self.report.warnings:
            lines.append(c.warning(f"! {warning}"))

        return "\n".join(lines)

    def get_summary(self) -> str:
        """
        One-line description of the report.

        Returns:
            A string such as 'fit-loss: 2 sections, 1 table, no warnings'.
        """
        sections = len(self.report.sections)
        tables = len(self.report.tables)
        warnings = len(self.report.warnings)
        parts = [
            f"{sections} section{'s' if sections != 1 else ''}",
            f"{tables} table{'s' if tables != 1 else ''}",
            f"{warnings} warning{'s' if warnings != 1 else ''}" if warnings else "no warnings",
        ]
        return f"{self.report.command}: " + ", ".join(parts)
