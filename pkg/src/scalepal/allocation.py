"""Compute-optimal allocation of tokens and model scale under C = N * D."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from scalepal.constants import (
    BRUTE_FORCE_HIGH,
    BRUTE_FORCE_LOW,
    DEFAULT_GRID_POINTS,
    FITTED_PROVENANCE,
    MIN_GRID_POINTS,
    PUBLISHED_FIXTURE_ROWS,
    PUBLISHED_PROVENANCE,
    PUBLISHED_REFERENCE_ROWS,
)
from scalepal.exceptions import (
    EmptyBudgetGrid,
    InvalidCoefficients,
    InvalidGrid,
    NonPositiveBudget,
    ValidationError,
)
from scalepal.loss_laws import (
    DenseLawCoefficients,
    MoeLawCoefficients,
    check_experts,
    coefficients_to_dict,
    predict_dense,
    predict_moe,
    tokens_for_loss,
)

logger = logging.getLogger(__name__)

AllocatableCoefficients = Union[DenseLawCoefficients, MoeLawCoefficients]

EFFICIENCY_DEFINITION = (
    "(D_dense_opt - D_moe) / D_dense_opt, where D_moe is the tokens the "
    "expert-aware law needs at its compute-optimal scale to reach the dense "
    "law's compute-optimal loss under the same budget"
)


@dataclass(frozen=True)
class AllocationPolicy:
    """D_opt = k_D * C**alpha_D and N_opt = k_N * C**alpha_N."""

    k_D: float
    k_N: float
    alpha_D: float
    alpha_N: float
    source: Optional[AllocatableCoefficients] = None
    experts: float = 1.0
    provenance: str = FITTED_PROVENANCE

    def __post_init__(self):
        """Check the identities tying the two power laws together."""
        if abs(self.alpha_D + self.alpha_N - 1.0) > 1e-6:
            raise ValidationError(
                f"allocation exponents must sum to 1, got {self.alpha_D} + {self.alpha_N}"
            )
        if self.source is not None and abs(self.k_D * self.k_N - 1.0) > 1e-9:
            raise ValidationError(
                f"allocation constants must multiply to 1, got {self.k_D * self.k_N}"
            )

    @classmethod
    def from_exponents(
        cls,
        alpha_D: float,
        alpha_N: float,
        provenance: str = FITTED_PROVENANCE,
    ) -> "AllocationPolicy":
        """Build a policy from exponents alone, with unit constants."""
        return cls(k_D=1.0, k_N=1.0, alpha_D=alpha_D, alpha_N=alpha_N, provenance=provenance)

    def as_dict(self) -> Dict[str, object]:
        """Return a JSON-ready description."""
        document: Dict[str, object] = {
            "k_D": self.k_D,
            "k_N": self.k_N,
            "alpha_D": self.alpha_D,
            "alpha_N": self.alpha_N,
            "experts": self.experts,
            "provenance": self.provenance,
        }
        if self.source is not None:
            document["source"] = coefficients_to_dict(self.source)
        return document


def derive_policy(coeffs: AllocatableCoefficients, experts: float = 1) -> AllocationPolicy:
    """
    Derive the closed-form compute-optimal allocation of a loss law.

    Minimizing A' / N**alpha + B / D**beta under C = N * D, with
    A' = A / E**gamma, gives N_opt = k_N * C**(beta / (alpha + beta)) and
    D_opt = k_D * C**(alpha / (alpha + beta)), where
    k_N = (alpha A' / (beta B))**(1 / (alpha + beta)) and k_D = 1 / k_N.

    Args:
        coeffs: Dense or expert-aware coefficients.
        experts: Expert count (ignored by the dense law).

    Returns:
        The allocation policy.

    Raises:
        InvalidCoefficients: If alpha, beta, A or B is not positive, or the
            law has no token term.
        ExpertCountOutOfRange: If experts is outside [1, 100).
    """
    if not isinstance(coeffs, (DenseLawCoefficients, MoeLawCoefficients)):
        raise InvalidCoefficients(f"the {coeffs.law.value} law cannot be allocated")
    if not coeffs.alpha > 0 or not coeffs.beta > 0:
        raise InvalidCoefficients(
            f"alpha and beta must be positive, got alpha={coeffs.alpha}, beta={coeffs.beta}"
        )
    if not coeffs.A > 0 or not coeffs.B > 0:
        raise InvalidCoefficients(f"A and B must be positive, got A={coeffs.A}, B={coeffs.B}")

    expert_factor = 1.0
    if isinstance(coeffs, MoeLawCoefficients):
        check_experts(experts)
        expert_factor = experts ** coeffs.gamma
    else:
        experts = 1

    total = coeffs.alpha + coeffs.beta
    ratio = coeffs.alpha * coeffs.A / (coeffs.beta * coeffs.B * expert_factor)
    return AllocationPolicy(
        k_D=ratio ** (-1.0 / total),
        k_N=ratio ** (1.0 / total),
        alpha_D=coeffs.alpha / total,
        alpha_N=coeffs.beta / total,
        source=coeffs,
        experts=float(experts),
    )


def _check_budget(budget: float) -> float:
    budget = float(budget)
    if not math.isfinite(budget) or budget <= 0:
        raise NonPositiveBudget(f"compute budget must be positive, got {budget:g}")
    return budget


def optimal_point(policy: AllocationPolicy, budget: float) -> Tuple[float, float]:
    """
    Evaluate a policy at a compute budget.

    Returns:
        (D_opt, N_opt) with D_opt * N_opt = budget.

    Raises:
        NonPositiveBudget: If budget is not positive.
    """
    budget = _check_budget(budget)
    return policy.k_D * budget ** policy.alpha_D, policy.k_N * budget ** policy.alpha_N


def _law_loss(coeffs: AllocatableCoefficients, scale, tokens, experts: float):
    if isinstance(coeffs, MoeLawCoefficients):
        return predict_moe(coeffs, scale, tokens, experts)
    return predict_dense(coeffs, scale, tokens)


def brute_force_allocate(
    coeffs: AllocatableCoefficients,
    experts: float,
    budget: float,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> Tuple[float, float, float]:
    """
    Find the loss-minimizing allocation on a grid.

    N runs log-uniformly over [C**0.1, C**0.9] with D = C / N.

    Returns:
        (D_best, N_best, loss_best) at the grid minimizer.

    Raises:
        InvalidGrid: If grid_points is below 100.
        NonPositiveBudget: If budget is not positive.
    """
    if grid_points < MIN_GRID_POINTS:
        raise InvalidGrid(f"brute-force grid needs at least {MIN_GRID_POINTS} points")
    budget = _check_budget(budget)
    log_budget = math.log10(budget)
    scales = np.logspace(BRUTE_FORCE_LOW * log_budget, BRUTE_FORCE_HIGH * log_budget, grid_points)
    tokens = budget / scales
    losses = np.atleast_1d(_law_loss(coeffs, scales, tokens, experts))
    best = int(np.argmin(losses))
    return float(tokens[best]), float(scales[best]), float(losses[best])


def grid_cell(budget: float, grid_points: int = DEFAULT_GRID_POINTS) -> float:
    """Width of one brute-force grid cell in log10 N."""
    return (BRUTE_FORCE_HIGH - BRUTE_FORCE_LOW) * math.log10(budget) / (grid_points - 1)


@dataclass(frozen=True)
class ComparisonRow:
    """One row of an allocation comparison."""

    label: str
    alpha_D: float
    alpha_N: float
    provenance: str
    flagged: bool = False

    def __post_init__(self):
        """Check that the exponents sum to one."""
        if abs(self.alpha_D + self.alpha_N - 1.0) > 1e-6:
            raise ValidationError(
                f"row '{self.label}': exponents sum to {self.alpha_D + self.alpha_N}, not 1"
            )


@dataclass(frozen=True)
class AllocationComparison:
    """Allocation exponents side by side with published reference rows."""

    rows: Tuple[ComparisonRow, ...]
    flagged: Optional[str] = None
    tie: bool = False

    def as_records(self) -> List[Dict[str, object]]:
        """Rows as flat dicts, for CSV output."""
        return [
            {
                "label": row.label,
                "alpha_D": row.alpha_D,
                "alpha_N": row.alpha_N,
                "provenance": row.provenance,
                "larger_alpha_N": row.flagged,
            }
            for row in self.rows
        ]

    def as_dict(self) -> Dict[str, object]:
        """Return a JSON-ready description."""
        return {"rows": self.as_records(), "flagged": self.flagged, "tie": self.tie}


def published_rows() -> List[ComparisonRow]:
    """The published reference and fixture allocation exponents."""
    return [
        ComparisonRow(label, alpha_D, alpha_N, PUBLISHED_PROVENANCE)
        for label, alpha_D, alpha_N in PUBLISHED_REFERENCE_ROWS + PUBLISHED_FIXTURE_ROWS
    ]


def compare_architectures(
    policies: Sequence[Tuple[str, AllocationPolicy]],
) -> AllocationComparison:
    """
    Tabulate allocation exponents and flag the largest alpha_N.

    The published reference and fixture rows are always appended. Only the
    given policies compete for the flag; equal maxima are reported as a tie.

    Args:
        policies: (label, policy) pairs, at least one.

    Returns:
        The comparison table.
    """
    if not policies:
        raise ValidationError("compare_architectures needs at least one policy")

    flagged_index: Optional[int] = None
    tie = False
    if len(policies) > 1:
        best = max(policy.alpha_N for _, policy in policies)
        leaders = [
            i for i, (_, policy) in enumerate(policies)
            if math.isclose(policy.alpha_N, best, rel_tol=1e-12, abs_tol=1e-12)
        ]
        if len(leaders) == 1:
            flagged_index = leaders[0]
        else:
            tie = True

    rows = [
        ComparisonRow(label, policy.alpha_D, policy.alpha_N, policy.provenance, i == flagged_index)
        for i, (label, policy) in enumerate(policies)
    ]
    present = {(row.label, row.alpha_D, row.alpha_N) for row in rows}
    rows.extend(
        row for row in published_rows() if (row.label, row.alpha_D, row.alpha_N) not in present
    )
    flagged = policies[flagged_index][0] if flagged_index is not None else None
    if flagged:
        logger.info("'%s' has the larger model-scale exponent", flagged)
    elif tie:
        logger.info("allocation exponents tie")
    return AllocationComparison(rows=tuple(rows), flagged=flagged, tie=tie)


@dataclass(frozen=True)
class BudgetEfficiency:
    """Token savings of the expert-aware law at one compute budget."""

    budget: float
    dense_tokens: float
    dense_scale: float
    target_loss: float
    moe_scale: float
    moe_tokens: Optional[float]
    efficiency: Optional[float]

    @property
    def reached(self) -> bool:
        """Whether the expert-aware law can reach the dense loss."""
        return self.moe_tokens is not None


@dataclass(frozen=True)
class EfficiencyReport:
    """Per-budget token savings and their summary."""

    per_budget: Tuple[BudgetEfficiency, ...]
    summary: Optional[float]
    summary_budget: Optional[float]
    mean: Optional[float]
    definition: str = field(default=EFFICIENCY_DEFINITION)

    @property
    def no_reach(self) -> List[float]:
        """Budgets where the expert-aware law cannot reach the dense loss."""
        return [row.budget for row in self.per_budget if not row.reached]


def _efficiency_at(
    dense_policy: AllocationPolicy,
    moe_policy: AllocationPolicy,
    dense: DenseLawCoefficients,
    moe: MoeLawCoefficients,
    experts: float,
    budget: float,
) -> BudgetEfficiency:
    dense_tokens, dense_scale = optimal_point(dense_policy, budget)
    target = predict_dense(dense, dense_scale, dense_tokens)
    _, moe_scale = optimal_point(moe_policy, budget)
    moe_tokens = tokens_for_loss(moe, target, moe_scale, experts)
    efficiency = None
    if moe_tokens is not None:
        efficiency = (dense_tokens - moe_tokens) / dense_tokens
    return BudgetEfficiency(
        budget=budget,
        dense_tokens=dense_tokens,
        dense_scale=dense_scale,
        target_loss=target,
        moe_scale=moe_scale,
        moe_tokens=moe_tokens,
        efficiency=efficiency,
    )


def data_efficiency(
    dense_coeffs: DenseLawCoefficients,
    moe_coeffs: MoeLawCoefficients,
    experts: float,
    budget_grid: Sequence[float],
) -> EfficiencyReport:
    """
    Measure how many fewer tokens the expert-aware law needs at matched loss.

    For each budget C the dense law's compute-optimal loss L* is the target;
    the expert-aware law, at its own compute-optimal scale for C, needs
    D_moe tokens to reach L*. Efficiency is (D_dense_opt - D_moe) / D_dense_opt.
    Budgets where L* lies below what the expert-aware law can reach are
    reported and excluded from the summary.

    Args:
        dense_coeffs: Dense law.
        moe_coeffs: Expert-aware law.
        experts: Expert count for the expert-aware law.
        budget_grid: Compute budgets.

    Returns:
        An EfficiencyReport. summary is the efficiency at the geometric mean
        of the reached budgets and mean the average over them, both clipped
        to [-1, 1].

    Raises:
        EmptyBudgetGrid: If no budgets are given.
        NonPositiveBudget: If any budget is not positive.
    """
    budgets = [_check_budget(b) for b in budget_grid]
    if not budgets:
        raise EmptyBudgetGrid("data efficiency needs at least one budget")

    dense_policy = derive_policy(dense_coeffs)
    moe_policy = derive_policy(moe_coeffs, experts)
    rows = tuple(
        _efficiency_at(dense_policy, moe_policy, dense_coeffs, moe_coeffs, experts, b)
        for b in budgets
    )

    reached = [row for row in rows if row.reached]
    for row in rows:
        if not row.reached:
            logger.warning(
                "budget %g: the expert-aware law cannot reach loss %.6g", row.budget, row.target_loss
            )

    summary = summary_budget = mean = None
    if reached:
        summary_budget = float(np.exp(np.mean(np.log([row.budget for row in reached]))))
        at_center = _efficiency_at(
            dense_policy, moe_policy, dense_coeffs, moe_coeffs, experts, summary_budget
        )
        if at_center.efficiency is not None:
            summary = float(np.clip(at_center.efficiency, -1.0, 1.0))
        mean = float(np.clip(np.mean([row.efficiency for row in reached]), -1.0, 1.0))

    return EfficiencyReport(per_budget=rows, summary=summary, summary_budget=summary_budget, mean=mean)
