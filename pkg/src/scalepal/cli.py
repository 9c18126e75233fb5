#!/usr/bin/env python3
"""Main CLI entry point for ScalePal."""

import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from scalepal.allocation import (
    brute_force_allocate,
    compare_architectures,
    data_efficiency,
    derive_policy,
    grid_cell,
    optimal_point,
)
from scalepal.color_utils import (
    ColorConfig,
    format_failure,
    format_field,
    format_written,
    get_color_config,
    set_color_config,
)
from scalepal.config import load_config, resolve_options
from scalepal.constants import EXIT_OK, MAX_EXPERTS
from scalepal.error_handler import ErrorHandler, exit_code_for, suggest_fix
from scalepal.exceptions import ConfigError, InvalidGrid, ScalePalError, ValidationError
from scalepal.file_utils import file_digest, resolve_output_path
from scalepal.fit_engine import FitOptions
from scalepal.generalization import fit_generalization
from scalepal.hparam_scaling import (
    LrBatchRelation,
    Optimizer,
    adam_opt_lr,
    dominates,
    estimate_noise_scale_from_rows,
    extract_contour_minima,
    fit_bopt_law,
    fit_epsopt_law,
    interval_overlap,
    iso_token_heatmap,
    is_heatmap_file,
    load_heatmap,
    log_grid,
    lr_curve,
    read_gradient_norms,
    save_heatmap,
    sgd_opt_lr,
)
from scalepal.log_utils import collect_warnings, configure_logging
from scalepal.loss_laws import (
    ClarkSeparableCoefficients,
    DenseLawCoefficients,
    LawName,
    LossFitOptions,
    MoeLawCoefficients,
    QuadraticInteractionCoefficients,
    ScaleField,
    effective_expert_exponent,
    extrapolate,
    fit_loss_law,
    load_coefficients,
    predict,
)
from scalepal.models import FileFormat, Knob, RunSet
from scalepal.parser import create_parser, version_string
from scalepal.pretty_printer import PrettyPrinter
from scalepal.report import AnalysisReport, write_report
from scalepal.run_data import derive_runs_scale, detect_format, load_runs, save_runs
from scalepal.series_utils import group_iso_token, smooth_runs
from scalepal.synthgen import generate_heatmap, generate_runs, load_spec

logger = logging.getLogger(__name__)

EXTRAPOLATION_POINTS = 100
LR_CURVE_DECADES = 2
LR_CURVE_POINTS = 41


def main(args=None):
    """Main entry point for the scalepal CLI."""
    parser = create_parser()
    parsed_args = parser.parse_args(args)

    # Initialize color configuration
    color_config = ColorConfig(use_colors=False) if parsed_args.no_color else ColorConfig()
    set_color_config(color_config)
    configure_logging(
        parsed_args.verbose,
        ColorConfig(use_colors=False) if parsed_args.no_color else None,
    )

    # Handle version flag
    if parsed_args.version:
        print(color_config.info(version_string()))
        return EXIT_OK

    if not parsed_args.command:
        parser.print_help()
        return EXIT_OK

    error_handler = ErrorHandler(verbose=parsed_args.verbose)
    try:
        return COMMANDS[parsed_args.command](parsed_args)
    except Exception as e:
        if not isinstance(e, ScalePalError):
            logger.debug("unexpected failure in %s", parsed_args.command, exc_info=True)
        context = parsed_args.input if isinstance(parsed_args.input, str) else None
        print(format_failure(error_handler.handle_error(e, context), suggest_fix(e)), file=sys.stderr)
        return exit_code_for(e)


# Shared helpers


def _options(command: str, args):
    """Flags over config file over built-in defaults."""
    config = load_config(args.config) if args.config else None
    return resolve_options(command, args, config)


def _inputs(opts, count: Optional[Tuple[int, int]] = None) -> List[str]:
    """Normalize --input to a list, checking how many files were given."""
    value = opts.input
    if value is None:
        raise ConfigError("--input is required")
    paths = [value] if isinstance(value, str) else [str(v) for v in value]
    if count is not None:
        low, high = count
        if not low <= len(paths) <= high:
            expected = str(low) if low == high else f"{low} to {high}"
            raise ValidationError(f"expected {expected} input files, got {len(paths)}")
    return paths


def _grid(values: Optional[Sequence[float]], name: str) -> Optional[np.ndarray]:
    """Expand START STOP COUNT into a log grid."""
    if values is None:
        return None
    if len(values) != 3:
        raise InvalidGrid(f"{name} needs START STOP COUNT")
    start, stop, count = (float(v) for v in values)
    if not count.is_integer():
        raise InvalidGrid(f"{name} count must be an integer, got {count:g}")
    return log_grid(start, stop, int(count))


def _labels(paths: Sequence[str]) -> List[str]:
    """File stems, made unique by position when they collide."""
    stems = [Path(p).stem for p in paths]
    return [
        stem if stems.count(stem) == 1 else f"{stem}-{i + 1}"
        for i, stem in enumerate(stems)
    ]


def _finish(report: AnalysisReport, args, output: Optional[str], default_name: str) -> int:
    """Write the report, then print where it went and an optional summary table."""
    path = resolve_output_path(output, default_name)
    written = write_report(report, path)
    config = get_color_config()

    details = None
    if len(written) > 1:
        details = "tables: " + ", ".join(str(p) for p in written[1:])
    print(format_written(f"Wrote {report.command} report to {path}", details))

    if args.pretty:
        printer = PrettyPrinter(report, use_colors=config.use_colors)
        print()
        print(printer.print_table())
        print()
        print(config.header("Summary: ") + config.info(printer.get_summary()))
    return EXIT_OK


# fit-loss


def _fit_table(runs: RunSet, law: LawName, coefficients, scale_field: ScaleField,
               include_test: bool) -> List[Dict[str, Any]]:
    """Observed and fitted loss for every record the law describes."""
    if law in (LawName.CLARK, LawName.QUADRATIC):
        records = [s.records[-1] for s in runs.select(include_test) if len(s)]
    else:
        records = list(runs.records(include_test))
    rows = []
    for record in records:
        if law is LawName.MOE and record.experts >= MAX_EXPERTS:
            continue
        scale = getattr(record, scale_field.value)
        rows.append(
            {
                "run_id": record.run_id,
                "experts": record.experts,
                scale_field.value: scale,
                "tokens": record.tokens,
                "loss": record.loss,
                "fitted_loss": float(predict(coefficients, scale, record.tokens, record.experts)),
            }
        )
    return rows


def cmd_fit_loss(args) -> int:
    """Fit a loss law and optionally extrapolate it to a larger scale."""
    opts = _options("fit-loss", args)
    path = _inputs(opts, (1, 1))[0]
    law = LawName(opts.law)
    report = AnalysisReport(command="fit-loss")

    with collect_warnings() as collected:
        runs = load_runs(path, opts.format)
        report.input_digests[path] = runs.provenance.digest
        if opts.derive_scale:
            runs = derive_runs_scale(runs, opts.derive_scale)
        if opts.smooth_window:
            runs = smooth_runs(runs, opts.smooth_window, opts.smooth_sigma)

        fit_options = LossFitOptions(
            scale_field=ScaleField(opts.scale) if opts.scale else None,
            huber_delta=opts.huber_delta,
            fit_options=FitOptions(
                max_iter=opts.max_iter,
                grad_tol=opts.grad_tol,
                step_tol=opts.step_tol,
                workers=opts.workers,
            ),
            include_test=opts.include_test,
            bootstrap=opts.bootstrap,
            ci_level=opts.ci_level,
            seed=opts.seed,
            progress=args.verbose,
        )
        fitted = fit_loss_law(runs, law, fit_options)
        report.add_section(
            "loss_law",
            "fit_loss_law",
            {
                "input": path,
                "law": law.value,
                "scale_field": fitted.scale_field.value,
                "derive_scale": opts.derive_scale,
                "smooth_window": opts.smooth_window,
                "huber_delta": opts.huber_delta,
                "bootstrap": opts.bootstrap,
                "seed": opts.seed,
            },
            fitted.as_dict(),
        )
        report.add_table(
            "fit",
            _fit_table(runs, law, fitted.coefficients, fitted.scale_field, opts.include_test),
        )

        coefficients = fitted.coefficients
        if isinstance(coefficients, (ClarkSeparableCoefficients, QuadraticInteractionCoefficients)):
            sizes = sorted({row[fitted.scale_field.value] for row in report.tables["fit"]})
            report.add_section(
                "expert_exponent",
                "effective_expert_exponent",
                {"law": law.value},
                {"by_params": [
                    {"params": p, "exponent": effective_expert_exponent(coefficients, p)}
                    for p in sizes
                ]},
            )

        if opts.extrapolate_scale is not None:
            grid = _grid(opts.token_grid, "--token-grid")
            if grid is None:
                tokens = [r.tokens for r in runs.records(opts.include_test)]
                grid = log_grid(min(tokens), max(tokens), EXTRAPOLATION_POINTS)
            curve = extrapolate(coefficients, opts.extrapolate_scale, grid, opts.extrapolate_experts)
            report.add_section(
                "extrapolation",
                "extrapolate",
                {
                    "target_scale": opts.extrapolate_scale,
                    "experts": opts.extrapolate_experts,
                    "token_grid": [curve[0][0], curve[-1][0], len(curve)],
                },
                {"final_tokens": curve[-1][0], "final_loss": curve[-1][1]},
            )
            report.add_table(
                "extrapolation",
                [{"tokens": d, "predicted_loss": loss} for d, loss in curve],
            )

    report.add_warnings(fitted.warnings)
    report.add_warnings(collected.messages)
    return _finish(report, args, opts.output, "fit_loss.json")


# allocate


def cmd_allocate(args) -> int:
    """Derive allocation policies, evaluate budgets and compare architectures."""
    opts = _options("allocate", args)
    paths = _inputs(opts)
    labels = _labels(paths)
    report = AnalysisReport(command="allocate")

    budgets: List[float] = list(opts.budget or [])
    grid = _grid(opts.budget_grid, "--budget-grid")
    if grid is not None:
        budgets.extend(float(b) for b in grid)

    with collect_warnings() as collected:
        laws = []
        for path, label in zip(paths, labels):
            coefficients = load_coefficients(path)
            report.input_digests[path] = file_digest(path)
            experts = opts.experts if isinstance(coefficients, MoeLawCoefficients) else 1
            laws.append((label, coefficients, experts, derive_policy(coefficients, experts)))

        report.add_section(
            "policies",
            "derive_policy",
            {"inputs": paths, "experts": opts.experts},
            {"policies": [dict(label=label, **policy.as_dict()) for label, _, _, policy in laws]},
        )

        points = []
        for label, coefficients, experts, policy in laws:
            for budget in budgets:
                tokens, scale = optimal_point(policy, budget)
                points.append(
                    {
                        "label": label,
                        "budget": budget,
                        "tokens_D": tokens,
                        "model_scale_N": scale,
                        "loss": float(predict(coefficients, scale, tokens, experts)),
                    }
                )
        if budgets:
            report.add_section(
                "optimal_points", "optimal_point", {"budgets": budgets}, {"points": len(points)}
            )
            report.add_table("optimal_points", points)

        comparison = compare_architectures([(label, policy) for label, _, _, policy in laws])
        report.add_section("comparison", "compare_architectures", {"inputs": labels}, comparison.as_dict())
        report.add_table("comparison", comparison.as_records())

        if opts.verify:
            if not budgets:
                raise ValidationError("--verify needs --budget or --budget-grid")
            checks = [
                _verify(label, coefficients, experts, policy, budget, opts.grid_points)
                for label, coefficients, experts, policy in laws
                for budget in budgets
            ]
            agree = all(c["within_cell"] and c["loss_ok"] for c in checks)
            if not agree:
                logger.warning("closed-form allocation disagrees with the grid search")
            report.add_section(
                "verification",
                "brute_force_allocate",
                {"grid_points": opts.grid_points},
                {"agree": agree, "checks": len(checks)},
            )
            report.add_table("verification", checks)

        if opts.efficiency:
            dense = [(l, c) for l, c, _, _ in laws if isinstance(c, DenseLawCoefficients)]
            moe = [(l, c) for l, c, _, _ in laws if isinstance(c, MoeLawCoefficients)]
            if not dense or not moe:
                raise ValidationError("--efficiency needs one dense and one moe coefficient file")
            efficiency = data_efficiency(dense[0][1], moe[0][1], opts.experts, budgets)
            report.add_section(
                "data_efficiency",
                "data_efficiency",
                {"dense": dense[0][0], "moe": moe[0][0], "experts": opts.experts},
                {
                    "summary": efficiency.summary,
                    "summary_budget": efficiency.summary_budget,
                    "mean": efficiency.mean,
                    "no_reach": efficiency.no_reach,
                    "definition": efficiency.definition,
                },
            )
            report.add_table(
                "data_efficiency",
                [
                    {
                        "budget": row.budget,
                        "dense_tokens": row.dense_tokens,
                        "dense_scale": row.dense_scale,
                        "target_loss": row.target_loss,
                        "moe_scale": row.moe_scale,
                        "moe_tokens": row.moe_tokens,
                        "efficiency": row.efficiency,
                    }
                    for row in efficiency.per_budget
                ],
            )

    report.add_warnings(collected.messages)
    return _finish(report, args, opts.output, "allocation.json")


def _verify(label, coefficients, experts, policy, budget, grid_points) -> Dict[str, Any]:
    """Compare the closed form with the grid search at one budget."""
    tokens, scale = optimal_point(policy, budget)
    closed_loss = float(predict(coefficients, scale, tokens, experts))
    _, grid_scale, grid_loss = brute_force_allocate(coefficients, experts, budget, grid_points)
    cells = abs(math.log10(scale) - math.log10(grid_scale)) / grid_cell(budget, grid_points)
    return {
        "label": label,
        "budget": budget,
        "closed_form_N": scale,
        "grid_N": grid_scale,
        "cells_apart": cells,
        "closed_form_loss": closed_loss,
        "grid_loss": grid_loss,
        "within_cell": cells <= 1.0,
        "loss_ok": closed_loss <= grid_loss * (1.0 + 1e-6),
    }


# hparams


def cmd_hparams(args) -> int:
    """Fit optimal batch size or learning rate against loss and compare datasets."""
    opts = _options("hparams", args)
    paths = _inputs(opts, (1, 2))
    labels = _labels(paths)
    knob = Knob(opts.knob)
    fit_law = fit_bopt_law if knob is Knob.BATCH_SIZE else fit_epsopt_law
    report = AnalysisReport(command="hparams")

    with collect_warnings() as collected:
        fits = []
        for path, label in zip(paths, labels):
            fmt = FileFormat(opts.format) if opts.format else detect_format(path)
            if fmt is FileFormat.CSV and is_heatmap_file(path):
                heat = load_heatmap(path)
                source = "heatmap"
            else:
                if not opts.token_levels:
                    raise InvalidGrid("--token-levels is required for run files")
                runs = load_runs(path, fmt)
                groups = group_iso_token(runs, opts.token_levels, opts.rel_tol)
                heat = iso_token_heatmap(groups, knob)
                source = "runs"
            report.input_digests[path] = file_digest(path)

            minima = extract_contour_minima(heat, knob)
            report.add_table(f"minima.{label}", [m.as_dict() for m in minima])
            law = fit_law(minima, include_boundary=opts.include_boundary)
            fits.append(law)
            report.add_section(
                f"law.{label}",
                fit_law.__name__,
                {
                    "input": path,
                    "source": source,
                    "knob": knob.value,
                    "include_boundary": opts.include_boundary,
                },
                dict(
                    law.as_dict(),
                    contours=len(minima),
                    boundary_minima=sum(m.at_boundary for m in minima),
                ),
            )

        if len(fits) == 2:
            first, second = fits
            report.add_section(
                "overlap",
                "interval_overlap",
                {"inputs": labels},
                {
                    "overlap": interval_overlap(first, second),
                    f"{labels[0]}_dominates": dominates(first, second),
                    f"{labels[1]}_dominates": dominates(second, first),
                },
            )

    report.add_warnings(collected.messages)
    return _finish(report, args, opts.output, "hparams.json")


# noise


def cmd_noise(args) -> int:
    """Estimate the gradient noise scale and tabulate optimal learning rates."""
    opts = _options("noise", args)
    path = _inputs(opts, (1, 1))[0]
    report = AnalysisReport(command="noise")

    with collect_warnings() as collected:
        rows = read_gradient_norms(path)
        report.input_digests[path] = file_digest(path)
        estimate = estimate_noise_scale_from_rows(rows)
        report.add_section(
            "noise_scale", "estimate_noise_scale", {"input": path, "rows": len(rows)}, estimate.as_dict()
        )

        b_noise = estimate.b_noise
        if 0 < b_noise < math.inf:
            grid = _grid(opts.batch_grid, "--batch-grid")
            if grid is None:
                spread = 10.0 ** LR_CURVE_DECADES
                grid = log_grid(b_noise / spread, b_noise * spread, LR_CURVE_POINTS)
            optimizers = (
                [Optimizer.SGD, Optimizer.ADAM] if opts.optimizer == "both" else [Optimizer(opts.optimizer)]
            )
            curve_rows = []
            summary: Dict[str, Any] = {"eps_max": opts.eps_max, "b_noise": b_noise}
            for optimizer in optimizers:
                relation = LrBatchRelation(opts.eps_max, b_noise, optimizer)
                if optimizer is Optimizer.SGD:
                    summary["sgd_lr_at_b_noise"] = sgd_opt_lr(relation, b_noise)
                else:
                    summary["adam_lr_at_b_noise"] = adam_opt_lr(relation, b_noise)
                curve = lr_curve(relation, grid)
                curve_rows.extend(
                    {"optimizer": optimizer.value, "batch_size": b, "learning_rate": lr}
                    for b, lr in curve
                )
                if optimizer is Optimizer.ADAM:
                    peak = max(curve, key=lambda point: point[1])
                    summary["adam_curve_peak_batch"] = peak[0]
            report.add_section(
                "lr_relations",
                "optimal_lr",
                {"optimizers": [o.value for o in optimizers], "grid_points": len(grid)},
                summary,
            )
            report.add_table("lr_curve", curve_rows)
        else:
            logger.warning(
                "noise scale %g is not a positive finite batch size; learning-rate curves skipped",
                b_noise,
            )

    report.add_warnings(collected.messages)
    return _finish(report, args, opts.output, "noise.json")


# synth


def cmd_synth(args) -> int:
    """Generate synthetic runs or a heatmap from a sweep spec."""
    if not args.config:
        raise ConfigError("synth needs --config with a sweep spec")
    spec = load_spec(args.config)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)

    if args.heatmap:
        heat = generate_heatmap(spec, args.heatmap)
        path = resolve_output_path(args.output, f"heatmap_{args.heatmap}.csv")
        save_heatmap(heat, path)
        count = sum(len(points) for points in heat.values())
        print(format_written(f"Wrote {count} heatmap cells to {path}"))
    else:
        path = resolve_output_path(args.output, "synth_runs.csv")
        fmt = args.format or detect_format(path)
        runs = generate_runs(spec)
        save_runs(runs, path, fmt)
        print(format_written(
            f"Wrote {runs.record_count} records in {len(runs)} runs to {path}"
        ))

    if args.verbose:
        print(format_field("Law", spec.law.value))
        print(format_field("Seed", spec.seed))
    return EXIT_OK


# generalize


def cmd_generalize(args) -> int:
    """Fit test loss against compute for dense and expert runs."""
    opts = _options("generalize", args)
    path = _inputs(opts, (1, 1))[0]
    report = AnalysisReport(command="generalize")

    with collect_warnings() as collected:
        runs = load_runs(path, opts.format)
        report.input_digests[path] = runs.provenance.digest
        result = fit_generalization(runs)
        report.add_section("generalization", "fit_generalization", {"input": path}, result.as_dict())
        report.add_table("test_loss", result.as_records())

    report.add_warnings(collected.messages)
    return _finish(report, args, opts.output, "generalization.json")


COMMANDS = {
    "fit-loss": cmd_fit_loss,
    "allocate": cmd_allocate,
    "hparams": cmd_hparams,
    "noise": cmd_noise,
    "synth": cmd_synth,
    "generalize": cmd_generalize,
}


if __name__ == "__main__":
    sys.exit(main())
