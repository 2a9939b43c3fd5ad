"""Compute-savings accounting against an always-use-largest-tier baseline.

Costs are abstract units (1/10/100 by default, mirroring the price ratio of a
small/medium/large tier), not dollars or tokens. The classifier call itself is
excluded from cost by default; a flag adds it at the smallest tier's unit cost
for sensitivity analysis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .backends import TierSet
from .errors import TierRouteError
from .router import RouteRecord

FRACTION_TOLERANCE = 1e-9


class CostError(TierRouteError):
    pass


class EmptyPartitionError(CostError):
    """One verdict partition (correct or wrong) has no records, so its usage
    fractions are undefined."""


@dataclass(frozen=True)
class UsageDistribution:
    """Per-tier usage fractions split by answer correctness, plus the pieces
    needed to price them."""

    fractions_correct: tuple[float, ...]
    fractions_wrong: tuple[float, ...]
    accuracy: float
    unit_costs: tuple[float, ...]
    baseline_cost: float

    def __post_init__(self):
        sizes = {len(self.fractions_correct), len(self.fractions_wrong), len(self.unit_costs)}
        if len(sizes) != 1:
            raise CostError("fraction and cost vectors must have one length per tier")
        for name, fractions in (
            ("fractions_correct", self.fractions_correct),
            ("fractions_wrong", self.fractions_wrong),
        ):
            if any(f < 0 for f in fractions):
                raise CostError(f"{name} must be nonnegative")
            total = sum(fractions)
            if abs(total - 1.0) > FRACTION_TOLERANCE:
                raise CostError(f"{name} must sum to 1, got {total!r}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise CostError(f"accuracy must be in [0, 1], got {self.accuracy}")
        costs = self.unit_costs
        if any(a >= b for a, b in zip(costs, costs[1:])):
            raise CostError(f"unit_costs must strictly increase, got {costs}")
        if self.baseline_cost <= 0:
            raise CostError("baseline_cost must be positive")

    def to_dict(self) -> dict:
        return {
            "fractions_correct": list(self.fractions_correct),
            "fractions_wrong": list(self.fractions_wrong),
            "accuracy": self.accuracy,
            "unit_costs": list(self.unit_costs),
            "baseline_cost": self.baseline_cost,
        }


@dataclass(frozen=True)
class CostReport:
    """Average compute per correct/wrong answer and the savings fraction
    relative to always using the largest tier."""

    avg_cost_correct: float
    avg_cost_wrong: float
    savings: float
    distribution: UsageDistribution
    classifier_overhead_included: bool = False

    def to_dict(self) -> dict:
        return {
            "avg_cost_correct": self.avg_cost_correct,
            "avg_cost_wrong": self.avg_cost_wrong,
            "savings": self.savings,
            "classifier_overhead_included": self.classifier_overhead_included,
            "inputs": self.distribution.to_dict(),
        }

    def format_table(self) -> str:
        dist = self.distribution
        lines = ["tier  unit_cost  correct%  wrong%"]
        for pos, cost in enumerate(dist.unit_costs):
            lines.append(
                f"{pos + 1:>4}  {cost:>9g}  {100 * dist.fractions_correct[pos]:>7.1f}"
                f"  {100 * dist.fractions_wrong[pos]:>6.1f}"
            )
        lines.append(f"avg compute per correct answer: {self.avg_cost_correct:.4f}")
        lines.append(f"avg compute per wrong answer:   {self.avg_cost_wrong:.4f}")
        lines.append(f"classifier accuracy:            {dist.accuracy:.4f}")
        lines.append(
            f"compute savings vs baseline {dist.baseline_cost:g}: {100 * self.savings:.2f}%"
        )
        return "\n".join(lines)


def compute_report(
    distribution: UsageDistribution, *, include_classifier_overhead: bool = False
) -> CostReport:
    """Price the distribution: expected cost p*x + (1-p)*y against baseline.

    With ``include_classifier_overhead`` every task additionally pays the
    smallest tier's unit cost for its classification call.
    """
    x = _dot(distribution.fractions_correct, distribution.unit_costs)
    y = _dot(distribution.fractions_wrong, distribution.unit_costs)
    p = distribution.accuracy
    expected = p * x + (1.0 - p) * y
    if include_classifier_overhead:
        expected += distribution.unit_costs[0]
    savings = (distribution.baseline_cost - expected) / distribution.baseline_cost
    return CostReport(
        avg_cost_correct=x,
        avg_cost_wrong=y,
        savings=savings,
        distribution=distribution,
        classifier_overhead_included=include_classifier_overhead,
    )


def _dot(fractions: Sequence[float], costs: Sequence[float]) -> float:
    return sum(f * c for f, c in zip(fractions, costs))


def distribution_from_routes(records: Sequence[RouteRecord], tiers: TierSet) -> UsageDistribution:
    """Empirical usage distribution from a routed batch.

    Records are partitioned by verdict (pass vs anything else); both
    partitions must be non-empty for the fractions to be defined.
    """
    if not records:
        raise CostError("no route records")
    for record in records:
        if record.verdict is None:
            raise CostError(f"task {record.task_id}: route record carries no verdict")
    correct = [r for r in records if r.verdict is not None and r.verdict.passed]
    wrong = [r for r in records if r.verdict is not None and not r.verdict.passed]
    if not correct:
        raise EmptyPartitionError("no correct answers: fractions_correct undefined")
    if not wrong:
        raise EmptyPartitionError("no wrong answers: fractions_wrong undefined")
    tier_ids = tiers.ids
    for record in records:
        if record.tier_id not in tier_ids:
            raise CostError(f"task {record.task_id}: unknown tier {record.tier_id!r}")
    return UsageDistribution(
        fractions_correct=_fractions(correct, tier_ids),
        fractions_wrong=_fractions(wrong, tier_ids),
        accuracy=len(correct) / len(records),
        unit_costs=tuple(tier.unit_cost for tier in tiers),
        baseline_cost=tiers.largest.unit_cost,
    )


def _fractions(records: Sequence[RouteRecord], tier_ids: Sequence[str]) -> tuple[float, ...]:
    counts = {tier_id: 0 for tier_id in tier_ids}
    for record in records:
        counts[record.tier_id] += 1
    return tuple(counts[tier_id] / len(records) for tier_id in tier_ids)
