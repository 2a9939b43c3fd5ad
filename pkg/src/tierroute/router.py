"""Dispatch tasks to the cheapest tier predicted capable of solving them.

One classification, one completion, one optional verification per task; a
failed answer stands (no escalation to a bigger tier), which is exactly the
regime the cost accounting measures.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .backends import (
    Backend,
    CompletionRequest,
    DEFAULT_CONCURRENCY,
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    TierSet,
    extract_code,
    render_prompt,
)
from .classifier import ClassifierAdapter
from .corpus import Corpus, Task
from .errors import TierRouteError
from .labeling import FIVE_LEVEL_SCHEME, SINGLE_TRIAL_SCHEME
from .verifier import DEFAULT_TIMEOUT_MS, Verdict, Verifier, VerifyRequest


class RoutingError(TierRouteError):
    pass


class PolicyError(RoutingError):
    pass


@dataclass(frozen=True)
class RoutingPolicy:
    """Total map from predicted level to target tier id."""

    assignments: Mapping[int, str]

    def tier_for(self, level: int) -> str:
        try:
            return self.assignments[level]
        except KeyError:
            raise PolicyError(f"routing policy has no tier for level {level}") from None

    def validate(self, levels: Sequence[int], tiers: TierSet) -> None:
        """Check totality over a scheme's levels and that every target exists."""
        problems = []
        for level in levels:
            if level not in self.assignments:
                problems.append(f"no tier assigned for level {level}")
        for level, tier_id in sorted(self.assignments.items()):
            if tier_id not in tiers.ids:
                problems.append(f"level {level} targets unknown tier {tier_id!r}")
        if problems:
            raise PolicyError("; ".join(problems))

    @classmethod
    def from_config(cls, config: Mapping) -> "RoutingPolicy":
        assignments = {}
        for key, tier_id in config.items():
            try:
                level = int(key)
            except (TypeError, ValueError):
                raise PolicyError(f"policy level {key!r} is not an integer") from None
            assignments[level] = str(tier_id)
        return cls(assignments)

    def to_config(self) -> dict:
        return {str(level): tier_id for level, tier_id in sorted(self.assignments.items())}


def default_policy(tiers: TierSet, scheme_id: str = FIVE_LEVEL_SCHEME) -> RoutingPolicy:
    """The shipped assignment: two cheapest levels to tier 1, the middle to
    tier 2, the hardest to tier 3 (single-trial scheme maps its three classes
    straight through)."""
    if len(tiers) != 3:
        raise PolicyError(f"the default policy needs exactly 3 tiers, got {len(tiers)}")
    first, second, third = (tiers.by_index(k).tier_id for k in (1, 2, 3))
    if scheme_id == FIVE_LEVEL_SCHEME:
        return RoutingPolicy({1: first, 2: first, 3: second, 4: second, 5: third})
    if scheme_id == SINGLE_TRIAL_SCHEME:
        return RoutingPolicy({0: first, 1: second, 2: third})
    raise PolicyError(f"no default policy for scheme {scheme_id!r}")


@dataclass(frozen=True)
class RouteRecord:
    task_id: str
    predicted_level: int
    tier_id: str
    verdict: Verdict | None
    cost_units: float
    latency_ms: int

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "predicted_level": self.predicted_level,
            "tier_id": self.tier_id,
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
            "cost_units": self.cost_units,
            "latency_ms": self.latency_ms,
        }


def route(
    task: Task,
    policy: RoutingPolicy,
    classifier: ClassifierAdapter,
    backends: Mapping[str, Backend],
    tiers: TierSet,
    *,
    verifier: Verifier | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    verify_timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> RouteRecord:
    """Classify, dispatch to exactly one tier, optionally verify.

    Classification failures propagate; there is deliberately no fallback tier.
    """
    prediction = classifier.predict(task)
    tier = tiers.by_id(policy.tier_for(prediction.predicted_level))
    request = CompletionRequest(
        tier_id=tier.tier_id,
        prompt=render_prompt(task, tier.prompt_profile),
        temperature=temperature,
        max_tokens=max_tokens,
        task_id=task.task_id,
        trial_index=1,
    )
    response = backends[tier.tier_id].complete(request)
    verdict = None
    if verifier is not None and task.assertions:
        code = extract_code(response.text)
        verdict = verifier.verify(
            VerifyRequest(task.task_id, code, task.assertions, verify_timeout_ms)
        )
    return RouteRecord(
        task_id=task.task_id,
        predicted_level=prediction.predicted_level,
        tier_id=tier.tier_id,
        verdict=verdict,
        cost_units=tier.unit_cost,
        latency_ms=response.latency_ms,
    )


@dataclass
class RouteSummary:
    total: int = 0
    routed: int = 0
    correct: int = 0
    wrong: int = 0
    unverified: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)
    tier_fractions_correct: dict[str, float] = field(default_factory=dict)
    tier_fractions_wrong: dict[str, float] = field(default_factory=dict)

    @property
    def correct_rate(self) -> float | None:
        verified = self.correct + self.wrong
        return self.correct / verified if verified else None

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "routed": self.routed,
            "correct": self.correct,
            "wrong": self.wrong,
            "unverified": self.unverified,
            "correct_rate": self.correct_rate,
            "tier_fractions_correct": self.tier_fractions_correct,
            "tier_fractions_wrong": self.tier_fractions_wrong,
            "errors": [{"task_id": tid, "reason": reason} for tid, reason in self.errors],
        }


def route_batch(
    corpus: Corpus,
    policy: RoutingPolicy,
    classifier: ClassifierAdapter,
    backends: Mapping[str, Backend],
    tiers: TierSet,
    *,
    verifier: Verifier | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    verify_timeout_ms: int = DEFAULT_TIMEOUT_MS,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> tuple[list[RouteRecord], RouteSummary]:
    """Route every task in the corpus; per-task failures are aggregated into
    the summary instead of aborting the batch. Records come back in corpus
    order."""
    summary = RouteSummary(total=len(corpus))

    def run(task: Task) -> RouteRecord:
        return route(
            task,
            policy,
            classifier,
            backends,
            tiers,
            verifier=verifier,
            temperature=temperature,
            max_tokens=max_tokens,
            verify_timeout_ms=verify_timeout_ms,
        )

    records: list[RouteRecord] = []
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        futures = [(task.task_id, pool.submit(run, task)) for task in corpus]
        for task_id, future in futures:
            try:
                records.append(future.result())
            except TierRouteError as exc:
                summary.errors.append((task_id, str(exc)))

    summary.routed = len(records)
    correct = [r for r in records if r.verdict is not None and r.verdict.passed]
    wrong = [r for r in records if r.verdict is not None and not r.verdict.passed]
    summary.correct = len(correct)
    summary.wrong = len(wrong)
    summary.unverified = sum(1 for r in records if r.verdict is None)
    summary.tier_fractions_correct = _tier_fractions(correct, tiers)
    summary.tier_fractions_wrong = _tier_fractions(wrong, tiers)
    return records, summary


def _tier_fractions(records: Sequence[RouteRecord], tiers: TierSet) -> dict[str, float]:
    if not records:
        return {}
    counts = {tier.tier_id: 0 for tier in tiers}
    for record in records:
        counts[record.tier_id] += 1
    return {tier_id: count / len(records) for tier_id, count in counts.items()}
