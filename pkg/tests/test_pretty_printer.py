"""Tests for pretty printer functionality."""

import sys
from pathlib import Path

import pytest

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from scalepal.pretty_printer import PrettyPrinter
from scalepal.report import AnalysisReport


def create_report(warnings=()) -> AnalysisReport:
    """Helper to build a small fit report."""
    report = AnalysisReport(command="fit-loss")
    report.add_section(
        "loss_law",
        "fit_loss_law",
        {"law": "moe"},
        {
            "coefficients": {"A": 1000.0, "B": 2000.0, "alpha": 0.35, "beta": 0.3},
            "objective": 1e-5,
            "converged": True,
            "n_points": 40,
        },
    )
    report.add_section("extrapolation", "extrapolate", {"target_scale": 1e10}, {"final_loss": 2.1})
    report.add_table("fit", [{"run_id": "r1", "loss": 3.0}])
    report.add_warnings(list(warnings))
    return report


class TestPrettyPrinterTable:
    """Tests for table printing functionality."""

    def test_print_table_basic(self):
        """Test basic table printing."""
        printer = PrettyPrinter(create_report(), use_colors=False)

        result = printer.print_table()

        assert "ScalePal Report: fit-loss" in result
        assert "Section" in result
        assert "Operation" in result
        assert "Key results" in result
        assert "loss_law" in result
        assert "fit_loss_law" in result
        assert "extrapolation" in result

    def test_table_borders(self):
        """Test the table is boxed and rows share one width."""
        printer = PrettyPrinter(create_report(), use_colors=False)
        lines = printer.print_table().splitlines()

        assert lines[0].startswith("┌")
        assert lines[-1].startswith("└")
        assert len({len(line) for line in lines}) == 1

    def test_warnings_listed(self):
        """Test warnings follow the table."""
        report = create_report(["dropped 2 records with experts_E >= 100"])
        result = PrettyPrinter(report, use_colors=False).print_table()

        assert result.splitlines()[-1] == "! dropped 2 records with experts_E >= 100"

    def test_long_names_clipped(self):
        """Test long section names are shortened."""
        report = AnalysisReport(command="hparams")
        report.add_section("law.a_very_long_dataset_name", "fit_bopt_law", {}, {"alpha": 1.0})
        result = PrettyPrinter(report, use_colors=False).print_table()

        assert "law.a_very_long_d…" in result

    def test_colors_disabled(self):
        """Test that no ANSI codes appear when colors are disabled."""
        result = PrettyPrinter(create_report(), use_colors=False).print_table()
        assert "\033[" not in result


class TestHeadline:
    """Tests for section headlines."""

    def test_preferred_keys_first(self):
        """Test exponents come before fit diagnostics."""
        report = create_report()
        printer = PrettyPrinter(report, use_colors=False)

        headline = printer.headline(report.section("loss_law"))

        assert headline == "alpha=0.35, beta=0.3, A=1000, B=2000"

    def test_booleans_and_none(self):
        """Test lower-case rendering of flags and missing values."""
        report = AnalysisReport(command="allocate")
        section = report.add_section("comparison", "compare_architectures", {}, {"flagged": None, "tie": False})
        printer = PrettyPrinter(report, use_colors=False)

        assert printer.headline(section) == "flagged=none, tie=false"

    def test_lists_skipped(self):
        """Test non-scalar values are left out."""
        report = AnalysisReport(command="allocate")
        section = report.add_section("policies", "derive_policy", {}, {"policies": [1, 2], "count": 2})

        assert PrettyPrinter(report, use_colors=False).headline(section) == "count=2"


class TestPrettyPrinterSummary:
    """Tests for summary functionality."""

    def test_get_summary(self):
        """Test the summary counts sections, tables and warnings."""
        printer = PrettyPrinter(create_report(), use_colors=False)
        assert printer.get_summary() == "fit-loss: 2 sections, 1 table, no warnings"

    @pytest.mark.parametrize(
        "warnings, expected",
        [
            (["a"], "1 warning"),
            (["a", "b"], "2 warnings"),
        ],
    )
    def test_warning_counts(self, warnings, expected):
        """Test warning pluralization."""
        printer = PrettyPrinter(create_report(warnings), use_colors=False)
        assert printer.get_summary().endswith(expected)

    def test_empty_report(self):
        """Test a report without sections."""
        printer = PrettyPrinter(AnalysisReport(command="noise"), use_colors=False)
        assert printer.get_summary() == "noise: 0 sections, 0 tables, no warnings"
