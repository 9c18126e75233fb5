"""Argument parser for the ScalePal CLI."""

import argparse
from textwrap import dedent

from scalepal import __version__
from scalepal.constants import OUTPUT_DIR_ENV


def _add_common(sub: argparse.ArgumentParser, input_nargs=None, input_help: str = "Input file") -> None:
    """Options shared by every command; unset flags stay None so config values can fill them."""
    sub.add_argument("-i", "--input", nargs=input_nargs, metavar="PATH", help=input_help)
    sub.add_argument(
        "-o", "--output",
        metavar="PATH",
        help=f"Report or output file (default directory: ${OUTPUT_DIR_ENV} or the working directory)"
    )
    sub.add_argument("-c", "--config", metavar="JSON", help="JSON config file for this command")
    sub.add_argument("--seed", type=int, metavar="N", help="Random seed (default: 0)")
    sub.add_argument(
        "--format",
        choices=["csv", "jsonl"],
        help="Run file format (default: guessed from the file suffix)"
    )


def _flag(sub: argparse.ArgumentParser, *names: str, help: str) -> None:
    sub.add_argument(*names, action="store_true", default=None, help=help)


def _grid(sub: argparse.ArgumentParser, name: str, help: str) -> None:
    sub.add_argument(name, nargs=3, type=float, metavar=("START", "STOP", "COUNT"), help=help)


def create_parser():
    """Create and configure the argument parser."""
    parser = argparse.ArgumentParser(
        prog="scalepal",
        description="Fit and apply scaling laws for Dense and Mixture-of-Experts language models",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=dedent("""
            Examples:
              scalepal synth --config sweep.json -o runs.csv        # Generate a synthetic sweep
              scalepal fit-loss -i runs.csv --law moe -o fit.json    # Fit the expert-aware loss law
              scalepal allocate -i dense.json moe.json --budget 1e21 # Compute-optimal allocation
              scalepal hparams -i bs.csv --knob batch_size           # Optimal batch size vs loss
              scalepal noise -i grad_norms.csv --eps-max 1e-3        # Gradient noise scale
              scalepal generalize -i runs.csv                        # Test loss vs compute

            Exit codes:
              0 success, 1 internal error, 2 invalid input, 3 analysis refused
        """)
    )

    parser.add_argument(
        "-v", "--version",
        action="store_true",
        help="Show version information"
    )

    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Enable verbose output and debug logging"
    )

    parser.add_argument(
        "--no-color",
        action="store_true",
        help="Disable colored output"
    )

    parser.add_argument(
        "--pretty",
        action="store_true",
        help="Print a summary table of the report"
    )

    commands = parser.add_subparsers(dest="command", metavar="<command>")

    # fit-loss
    fit = commands.add_parser("fit-loss", help="Fit a loss law to training runs")
    _add_common(fit, input_help="Run file (CSV or JSONL)")
    fit.add_argument("--law", choices=["dense", "moe", "clark", "quadratic"],
                     help="Loss law to fit (default: moe)")
    fit.add_argument("--scale", choices=["model_scale", "params"],
                     help="Scale column the law uses (default: params for clark/quadratic, else model_scale)")
    fit.add_argument("--derive-scale", choices=["six_pd", "flops_over_tokens"],
                     help="Derive model_scale and flops before fitting")
    fit.add_argument("--smooth-window", type=int, metavar="W",
                     help="Smooth each loss curve with a Gaussian window of W records")
    fit.add_argument("--smooth-sigma", type=float, metavar="S", help="Gaussian width in records (default: 2)")
    _flag(fit, "--include-test", help="Fit test-loss records as well")
    fit.add_argument("--huber-delta", type=float, metavar="D", help="Huber threshold on log residuals (default: 1e-3)")
    fit.add_argument("--bootstrap", type=int, metavar="N", help="Bootstrap resamples for confidence intervals")
    fit.add_argument("--ci-level", type=float, metavar="P", help="Confidence level (default: 0.95)")
    fit.add_argument("--workers", type=int, metavar="N", help="Threads for multi-start fitting (default: 1)")
    fit.add_argument("--extrapolate-scale", type=float, metavar="N", help="Predict a loss curve at this scale")
    fit.add_argument("--extrapolate-experts", type=int, metavar="E", help="Expert count of the prediction (default: 1)")
    _grid(fit, "--token-grid", "Log-spaced token grid of the prediction")

    # allocate
    allocate = commands.add_parser("allocate", help="Compute-optimal token/scale allocation")
    _add_common(allocate, input_nargs="+", input_help="Coefficient JSON files or fit-loss reports")
    allocate.add_argument("--experts", type=int, metavar="E", help="Expert count for expert-aware laws (default: 1)")
    allocate.add_argument("--budget", type=float, action="append", metavar="C", help="Compute budget (repeatable)")
    _grid(allocate, "--budget-grid", "Log-spaced budget grid")
    _flag(allocate, "--verify", help="Check the closed form against a brute-force grid search")
    allocate.add_argument("--grid-points", type=int, metavar="N", help="Brute-force grid size (default: 10000)")
    _flag(allocate, "--efficiency", help="Report data efficiency of the expert-aware law over the dense law")

    # hparams
    hparams = commands.add_parser("hparams", help="Optimal batch size or learning rate versus loss")
    _add_common(hparams, input_nargs="+", input_help="One or two heatmap CSVs or run files")
    hparams.add_argument("--knob", choices=["batch_size", "learning_rate"],
                         help="Swept hyperparameter (default: batch_size)")
    hparams.add_argument("--token-levels", type=float, nargs="+", metavar="D",
                         help="Token levels of the iso-token contours (run files only)")
    hparams.add_argument("--rel-tol", type=float, metavar="TOL", help="Relative tolerance for token levels")
    _flag(hparams, "--include-boundary", help="Fit minima that lie at the sweep boundary")

    # noise
    noise = commands.add_parser("noise", help="Gradient noise scale and optimal learning rates")
    _add_common(noise, input_help="CSV with batch_size,grad_norm_sq rows")
    noise.add_argument("--eps-max", type=float, metavar="LR", help="Largest useful learning rate (default: 1)")
    noise.add_argument("--optimizer", choices=["sgd", "adam", "both"], help="Relations to tabulate (default: both)")
    _grid(noise, "--batch-grid", "Log-spaced batch grid of the learning-rate curves")

    # synth
    synth = commands.add_parser("synth", help="Generate synthetic runs from a planted law")
    _add_common(synth)
    synth.add_argument("--heatmap", choices=["batch_size", "learning_rate"],
                       help="Write an iso-token heatmap for this knob instead of runs")

    # generalize
    generalize = commands.add_parser("generalize", help="Test loss versus compute per architecture")
    _add_common(generalize, input_help="Run file with test-loss records")

    return parser


def version_string() -> str:
    """Version banner."""
    return f"scalepal {__version__}"
