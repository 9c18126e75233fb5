"""Tests for the CLI module."""

import json
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from scalepal.cli import main
from scalepal.constants import RUN_COLUMNS
from scalepal.loss_laws import (
    DenseLawCoefficients,
    MoeLawCoefficients,
    coefficients_to_dict,
    load_coefficients,
    predict,
)

DENSE = DenseLawCoefficients(A=1000.0, B=2000.0, alpha=0.35, beta=0.35, sigma=1.7)
MOE = MoeLawCoefficients(A=1000.0, B=2000.0, alpha=0.35, beta=0.35, gamma=0.3, sigma=1.7)

RUN_SPEC = {
    "law": "moe",
    "coefficients": {"A": 1000, "B": 2000, "alpha": 0.35, "beta": 0.35, "gamma": 0.3, "sigma": 1.7},
    "scales": [1e8, 1e10],
    "tokens": {"start": 1e9, "stop": 1e12, "count": 20},
    "experts": [1, 8],
}

DENSE_SPEC = {
    "law": "dense",
    "coefficients": {"A": 1000, "B": 2000, "alpha": 0.35, "beta": 0.35, "sigma": 1.7},
    "scales": [1e8, 1e9, 1e10],
    "tokens": {"start": 1e9, "stop": 1e12, "count": 20},
}

HEATMAP_SPEC = {
    "law": "dense",
    "coefficients": {"A": 1000, "B": 2000, "alpha": 0.35, "beta": 0.35, "sigma": 1.7},
    "scales": [1e8],
    "tokens": {"start": 1e7, "stop": 1e12, "count": 30},
    "noise": {"model": "lognormal", "sigma_log": 0.02},
    "hparams": {
        "bopt_law": {"lambda": 5e4, "alpha": 1.5},
        "batch_grid": {"start": 64, "stop": 131072, "count": 25},
        "curvature": 2.0,
    },
}


@pytest.fixture(autouse=True)
def no_output_dir(monkeypatch):
    """Keep outputs where each test puts them."""
    monkeypatch.delenv("SCALEPAL_OUTPUT_DIR", raising=False)


def write_json(path, document):
    path.write_text(json.dumps(document))
    return path


def run(*argv):
    return main(["--no-color", *[str(a) for a in argv]])


def synth_runs(tmp_path, spec=RUN_SPEC):
    """Generate a run file through the synth command."""
    spec_path = write_json(tmp_path / "sweep.json", spec)
    runs_path = tmp_path / "runs.csv"
    assert run("synth", "-c", spec_path, "-o", runs_path) == 0
    return runs_path


def section(report_path, name):
    document = json.loads(Path(report_path).read_text())
    for entry in document["sections"]:
        if entry["name"] == name:
            return entry
    raise AssertionError(f"no section {name}")


class TestBasics:
    """Tests for help, version and entry points."""

    def test_main_function(self, capsys):
        """Test that no command prints help and succeeds."""
        assert main([]) == 0
        assert "usage:" in capsys.readouterr().out

    def test_version_flag(self, capsys):
        """Test the --version flag."""
        assert main(["--no-color", "--version"]) == 0
        assert "scalepal 0.1.0" in capsys.readouterr().out

    def test_version_flag_short(self):
        """Test the -v flag."""
        assert main(["-v"]) == 0

    def test_cli_execution(self):
        """Test that the CLI can be executed as a module."""
        result = subprocess.run(
            [sys.executable, "-m", "scalepal.cli", "--version"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).parent.parent / "src"
        )
        assert result.returncode == 0
        assert "scalepal" in result.stdout.lower()


class TestSynth:
    """Tests for the synth command."""

    def test_writes_runs(self, tmp_path, capsys):
        """Test a synthetic run file in the canonical schema."""
        runs_path = synth_runs(tmp_path)
        assert "Wrote 80 records in 4 runs" in capsys.readouterr().out
        frame = pd.read_csv(runs_path, comment="#")
        assert tuple(frame.columns) == RUN_COLUMNS
        assert len(frame) == 80

    def test_seed_flag_overrides_spec(self, tmp_path):
        """Test --seed replaces the spec seed."""
        spec = dict(RUN_SPEC, noise={"model": "lognormal", "sigma_log": 0.01})
        spec_path = write_json(tmp_path / "sweep.json", spec)
        assert run("synth", "-c", spec_path, "-o", tmp_path / "a.csv", "--seed", "1") == 0
        assert run("synth", "-c", spec_path, "-o", tmp_path / "b.csv", "--seed", "1") == 0
        assert run("synth", "-c", spec_path, "-o", tmp_path / "c.csv", "--seed", "2") == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()

    def test_needs_config(self, capsys):
        """Test synth without a spec."""
        assert run("synth") == 2
        assert "synth needs --config" in capsys.readouterr().err

    def test_invalid_spec(self, tmp_path, capsys):
        """Test an invalid spec is an input error."""
        spec_path = write_json(tmp_path / "sweep.json", dict(RUN_SPEC, law="cubic"))
        assert run("synth", "-c", spec_path, "-o", tmp_path / "runs.csv") == 2
        assert "law" in capsys.readouterr().err


class TestFitLoss:
    """Tests for the fit-loss command."""

    def test_fit_then_predict(self, tmp_path):
        """Test reloaded coefficients reproduce the fitted losses."""
        runs_path = synth_runs(tmp_path)
        report_path = tmp_path / "fit.json"
        assert run("fit-loss", "-i", runs_path, "--law", "moe", "-o", report_path) == 0

        coefficients = load_coefficients(report_path)
        assert coefficients.alpha == pytest.approx(0.35, rel=0.05)
        assert coefficients.gamma == pytest.approx(0.3, rel=0.05)

        table = pd.read_csv(tmp_path / "fit.fit.csv")
        assert len(table) == 80
        for row in table.itertuples():
            expected = predict(coefficients, row.model_scale, row.tokens, row.experts)
            assert row.fitted_loss == pytest.approx(expected, rel=1e-12)

    def test_reruns_are_identical(self, tmp_path):
        """Test the same inputs give byte-identical reports."""
        runs_path = synth_runs(tmp_path, DENSE_SPEC)
        for name in ("a", "b"):
            assert run(
                "fit-loss", "-i", runs_path, "--law", "dense",
                "--extrapolate-scale", "1e11", "-o", tmp_path / f"{name}.json",
            ) == 0
        for suffix in (".json", ".fit.csv", ".extrapolation.csv"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()

    def test_report_layout(self, tmp_path):
        """Test the report names its inputs and tables."""
        runs_path = synth_runs(tmp_path, DENSE_SPEC)
        report_path = tmp_path / "fit.json"
        assert run("fit-loss", "-i", runs_path, "--law", "dense", "-o", report_path) == 0
        document = json.loads(report_path.read_text())
        assert document["tool"] == "scalepal"
        assert document["command"] == "fit-loss"
        assert document["input_digests"][str(runs_path)].startswith("sha256:")
        assert document["tables"] == ["fit"]
        law = section(report_path, "loss_law")
        assert law["operation"] == "fit_loss_law"
        assert law["data"]["law"] == "dense"

    def test_missing_input_file(self, tmp_path, capsys):
        """Test a missing run file exits with an input error."""
        assert run("fit-loss", "-i", tmp_path / "absent.csv", "-o", tmp_path / "fit.json") == 2
        assert "✗ Invalid input: Input file not found" in capsys.readouterr().err

    def test_missing_input_flag(self, capsys):
        """Test --input is required."""
        assert run("fit-loss") == 2
        assert "--input is required" in capsys.readouterr().err

    def test_schema_error_suggestion(self, tmp_path, capsys):
        """Test a run file without a loss column."""
        bad = tmp_path / "runs.csv"
        bad.write_text("run_id,step,tokens\na,1,1e9\n")
        assert run("fit-loss", "-i", bad, "-o", tmp_path / "fit.json") == 2
        err = capsys.readouterr().err
        assert "✗ Schema error" in err
        assert "💡 Suggestion:" in err

    def test_config_file(self, tmp_path):
        """Test config values fill unset flags."""
        runs_path = synth_runs(tmp_path, DENSE_SPEC)
        config = write_json(tmp_path / "fit_config.json", {"law": "dense", "huber_delta": 0.01})
        report_path = tmp_path / "fit.json"
        assert run("fit-loss", "-i", runs_path, "-c", config, "-o", report_path) == 0
        inputs = section(report_path, "loss_law")["inputs"]
        assert inputs["law"] == "dense"
        assert inputs["huber_delta"] == 0.01

    def test_unknown_config_key(self, tmp_path, capsys):
        """Test unknown config keys are rejected."""
        config = write_json(tmp_path / "fit_config.json", {"lawz": "dense"})
        assert run("fit-loss", "-i", "runs.csv", "-c", config) == 2
        assert "unknown config key for fit-loss: lawz" in capsys.readouterr().err


class TestAllocate:
    """Tests for the allocate command."""

    @pytest.fixture
    def coefficient_files(self, tmp_path):
        return (
            write_json(tmp_path / "dense.json", coefficients_to_dict(DENSE)),
            write_json(tmp_path / "moe.json", coefficients_to_dict(MOE)),
        )

    def test_budget_and_verify(self, tmp_path, coefficient_files):
        """Test closed-form points agree with the grid search."""
        dense, moe = coefficient_files
        report_path = tmp_path / "allocation.json"
        assert run(
            "allocate", "-i", dense, moe, "--experts", "8",
            "--budget", "1e20", "--verify", "-o", report_path,
        ) == 0

        assert section(report_path, "verification")["data"]["agree"] is True
        points = pd.read_csv(tmp_path / "allocation.optimal_points.csv")
        assert list(points["label"]) == ["dense", "moe"]
        products = points["tokens_D"] * points["model_scale_N"]
        assert products.tolist() == pytest.approx([1e20, 1e20], rel=1e-12)

    def test_comparison_flags_expert_law(self, tmp_path, coefficient_files):
        """Test the expert-aware policy leans toward model scale."""
        report_path = tmp_path / "allocation.json"
        assert run("allocate", "-i", *coefficient_files, "--experts", "8", "-o", report_path) == 0
        comparison = pd.read_csv(tmp_path / "allocation.comparison.csv")
        assert "OpenAI (OpenWebText2)" in set(comparison["label"])
        published = comparison[comparison["label"].isin(["Dense Model", "MoE Model"])]
        assert set(published["provenance"]) == {"Table 1"}
        assert published[["alpha_D", "alpha_N"]].values.tolist() == [[0.493, 0.507], [0.410, 0.590]]
        policies = section(report_path, "policies")["data"]["policies"]
        assert [p["label"] for p in policies] == ["dense", "moe"]

    def test_efficiency(self, tmp_path, coefficient_files):
        """Test data efficiency over a budget grid."""
        report_path = tmp_path / "allocation.json"
        assert run(
            "allocate", "-i", *coefficient_files, "--experts", "8",
            "--budget-grid", "1e18", "1e22", "5", "--efficiency", "-o", report_path,
        ) == 0
        data = section(report_path, "data_efficiency")["data"]
        assert 0 < data["summary"] <= 1
        assert data["no_reach"] == []

    def test_verify_needs_budget(self, tmp_path, coefficient_files, capsys):
        """Test --verify without budgets."""
        assert run("allocate", "-i", *coefficient_files, "--verify", "-o", tmp_path / "a.json") == 2
        assert "--verify needs --budget" in capsys.readouterr().err

    def test_non_positive_budget(self, tmp_path, coefficient_files):
        """Test a zero budget is an input error."""
        assert run("allocate", "-i", *coefficient_files, "--budget", "0", "-o", tmp_path / "a.json") == 2


class TestNoise:
    """Tests for the noise command."""

    @pytest.fixture
    def gradients(self, tmp_path):
        path = tmp_path / "grad_norms.csv"
        path.write_text("batch_size,grad_norm_sq\n1,101\n100,2\n")
        return path

    def test_worked_example(self, tmp_path, gradients):
        """Test the two-batch estimate and the learning rates at it."""
        report_path = tmp_path / "noise.json"
        assert run("noise", "-i", gradients, "-o", report_path) == 0
        assert section(report_path, "noise_scale")["data"]["b_noise"] == pytest.approx(100.0)
        relations = section(report_path, "lr_relations")["data"]
        assert relations["sgd_lr_at_b_noise"] == pytest.approx(0.5)
        assert relations["adam_lr_at_b_noise"] == pytest.approx(1.0)
        assert relations["adam_curve_peak_batch"] == pytest.approx(100.0)

        curve = pd.read_csv(tmp_path / "noise.lr_curve.csv")
        assert set(curve["optimizer"]) == {"sgd", "adam"}
        assert len(curve) == 82

    def test_config_eps_max(self, tmp_path, gradients):
        """Test eps_max from a config file."""
        config = write_json(tmp_path / "noise_config.json", {"eps_max": 2.0, "optimizer": "sgd"})
        report_path = tmp_path / "noise.json"
        assert run("noise", "-i", gradients, "-c", config, "-o", report_path) == 0
        relations = section(report_path, "lr_relations")["data"]
        assert relations["sgd_lr_at_b_noise"] == pytest.approx(1.0)
        assert "adam_lr_at_b_noise" not in relations

    def test_equal_batch_sizes(self, tmp_path, capsys):
        """Test one batch size cannot give a noise scale."""
        path = tmp_path / "grad_norms.csv"
        path.write_text("batch_size,grad_norm_sq\n8,3\n8,4\n")
        assert run("noise", "-i", path, "-o", tmp_path / "noise.json") == 2
        assert "two different batch sizes" in capsys.readouterr().err

    def test_output_dir_env(self, tmp_path, gradients, monkeypatch):
        """Test the default report lands in SCALEPAL_OUTPUT_DIR."""
        out = tmp_path / "out"
        monkeypatch.setenv("SCALEPAL_OUTPUT_DIR", str(out))
        assert run("noise", "-i", gradients) == 0
        assert (out / "noise.json").is_file()
        assert (out / "noise.lr_curve.csv").is_file()

    def test_pretty(self, tmp_path, gradients, capsys):
        """Test --pretty prints the summary table."""
        assert run("--pretty", "noise", "-i", gradients, "-o", tmp_path / "noise.json") == 0
        out = capsys.readouterr().out
        assert "✓ Wrote noise report to" in out
        assert "ScalePal Report: noise" in out
        assert "Summary: noise: 2 sections, 1 table, no warnings" in out


class TestHparams:
    """Tests for the hparams command."""

    def make_heatmap(self, tmp_path, spec=HEATMAP_SPEC):
        spec_path = write_json(tmp_path / "heat_spec.json", spec)
        heat_path = tmp_path / "heat.csv"
        assert run("synth", "-c", spec_path, "--heatmap", "batch_size", "-o", heat_path) == 0
        return heat_path

    def test_recovers_batch_law(self, tmp_path):
        """Test the fitted optimal-batch exponent matches the planted one."""
        heat_path = self.make_heatmap(tmp_path)
        report_path = tmp_path / "hparams.json"
        assert run("hparams", "-i", heat_path, "--knob", "batch_size", "-o", report_path) == 0
        law = section(report_path, "law.heat")
        assert law["operation"] == "fit_bopt_law"
        assert law["inputs"]["source"] == "heatmap"
        assert law["data"]["alpha"] == pytest.approx(1.5, rel=0.10)
        minima = pd.read_csv(tmp_path / "hparams.minima.heat.csv")
        assert len(minima) == 30

    def test_two_datasets_compared(self, tmp_path):
        """Test an overlap section for two inputs."""
        heat_path = self.make_heatmap(tmp_path)
        report_path = tmp_path / "hparams.json"
        assert run("hparams", "-i", heat_path, heat_path, "-o", report_path) == 0
        overlap = section(report_path, "overlap")["data"]
        assert overlap["overlap"] == pytest.approx(1.0)

    def test_unbracketed_refused(self, tmp_path, capsys):
        """Test a sweep that misses every optimum exits 3."""
        hparams = dict(HEATMAP_SPEC["hparams"], batch_grid=[1, 2, 4, 8])
        heat_path = self.make_heatmap(tmp_path, dict(HEATMAP_SPEC, hparams=hparams))
        assert run("hparams", "-i", heat_path, "-o", tmp_path / "hparams.json") == 3
        err = capsys.readouterr().err
        assert "✗ Analysis refused" in err
        assert "--include-boundary" in err

    def test_run_file_needs_levels(self, tmp_path):
        """Test run files need --token-levels."""
        runs_path = synth_runs(tmp_path)
        assert run("hparams", "-i", runs_path, "-o", tmp_path / "hparams.json") == 2


class TestGeneralize:
    """Tests for the generalize command."""

    def test_trends(self, tmp_path):
        """Test dense and expert trends from a run file."""
        rows = [",".join(RUN_COLUMNS)]
        for i, scale in enumerate((1e8, 3e8, 1e9, 3e9)):
            for experts, lam in ((1, 20.0), (8, 15.0)):
                compute = scale * 1e10
                rows.append(
                    f"r{i}-e{experts},1,1e10,{lam / compute ** 0.05!r},,{compute!r},{scale!r},"
                    f"{experts},256,2048,0.0003,test"
                )
        path = tmp_path / "runs.csv"
        path.write_text("\n".join(rows) + "\n")

        report_path = tmp_path / "generalization.json"
        assert run("generalize", "-i", path, "-o", report_path) == 0
        data = section(report_path, "generalization")["data"]
        assert data["compute_overlap"] == pytest.approx(1.0)
        table = pd.read_csv(tmp_path / "generalization.test_loss.csv")
        assert len(table) == 8
