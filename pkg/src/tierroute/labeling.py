"""Complexity labeling from multi-trial success profiles.

A task's complexity is the cheapest tier that reliably solves it. The
collector queries every tier M times per task and counts passing trials; an
ordered mapping table turns those counts into a level. Mapping tables are
plain config so richer mappings can ship without code changes: each entry is
a comparison expression over the per-tier pass counts x1..xK (and m, the
trial count), evaluated first-match with a mandatory catch-all last.
"""

from __future__ import annotations

import ast
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .backends import (
    Backend,
    BackendError,
    CompletionRequest,
    DEFAULT_CONCURRENCY,
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    ModelTier,
    TierSet,
    extract_code,
    render_prompt,
)
from .corpus import Corpus
from .errors import TierRouteError
from .verifier import DEFAULT_TIMEOUT_MS, Verdict, Verifier, VerifyRequest

FIVE_LEVEL_SCHEME = "five_level"
SINGLE_TRIAL_SCHEME = "single_trial"
SCHEME_LEVELS: dict[str, tuple[int, ...]] = {
    FIVE_LEVEL_SCHEME: (1, 2, 3, 4, 5),
    SINGLE_TRIAL_SCHEME: (0, 1, 2),
}
DEFAULT_TRIALS = 5


class LabelingError(TierRouteError):
    pass


class MappingRuleError(LabelingError):
    pass


@dataclass(frozen=True)
class SuccessProfile:
    """Per-task pass counts, one per tier, out of ``trials`` attempts each."""

    task_id: str
    counts: tuple[int, ...]
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise LabelingError(f"task {self.task_id}: trials must be >= 1")
        if not self.counts:
            raise LabelingError(f"task {self.task_id}: counts must be non-empty")
        for count in self.counts:
            if not 0 <= count <= self.trials:
                raise LabelingError(
                    f"task {self.task_id}: count {count} outside 0..{self.trials}"
                )

    def to_record(self) -> dict:
        return {"task_id": self.task_id, "counts": list(self.counts), "M": self.trials}

    @classmethod
    def from_record(cls, record: Mapping) -> "SuccessProfile":
        return cls(
            task_id=str(record["task_id"]),
            counts=tuple(int(c) for c in record["counts"]),
            trials=int(record["M"]),
        )


@dataclass(frozen=True)
class TrialOutcome:
    """Audit record for one completion + verification attempt."""

    task_id: str
    tier_id: str
    trial_index: int
    verdict: Verdict
    raw_output: str
    extracted_code: str
    completion_tokens: int = 0

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "tier_id": self.tier_id,
            "trial_index": self.trial_index,
            "verdict": self.verdict.to_dict(),
            "raw_output": self.raw_output,
            "extracted_code": self.extracted_code,
            "completion_tokens": self.completion_tokens,
        }


@dataclass(frozen=True)
class ComplexityLabel:
    level: int
    scheme_id: str

    def __post_init__(self):
        levels = SCHEME_LEVELS.get(self.scheme_id)
        if levels is not None and self.level not in levels:
            raise LabelingError(
                f"level {self.level} outside scheme {self.scheme_id!r} range {levels}"
            )


@dataclass(frozen=True)
class LabeledTask:
    """One line of the labeled dataset."""

    task_id: str
    prompt: str
    counts: tuple[int, ...]
    trials: int
    level: int
    scheme_id: str

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "prompt": self.prompt,
            "counts": list(self.counts),
            "M": self.trials,
            "level": self.level,
            "scheme_id": self.scheme_id,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "LabeledTask":
        missing = [key for key in ("task_id", "prompt", "counts", "M", "level", "scheme_id") if key not in record]
        if missing:
            raise LabelingError(f"labeled record missing fields: {', '.join(missing)}")
        return cls(
            task_id=str(record["task_id"]),
            prompt=str(record["prompt"]),
            counts=tuple(int(c) for c in record["counts"]),
            trials=int(record["M"]),
            level=int(record["level"]),
            scheme_id=str(record["scheme_id"]),
        )


_CATCH_ALL_SPELLINGS = {"otherwise", "else", "true"}
_ALLOWED_OPS = (ast.And, ast.Or, ast.Not, ast.USub, ast.UAdd,
                ast.Eq, ast.NotEq, ast.Lt, ast.LtE, ast.Gt, ast.GtE,
                ast.Add, ast.Sub, ast.Mult)


def compile_condition(text: str, tier_count: int) -> Callable[[Sequence[int], int], bool]:
    """Compile a mapping-table condition into a predicate over (counts, trials).

    The expression language allows integer literals, the names x1..xK and m
    (case-insensitive), arithmetic (+, -, *), comparisons (chained allowed),
    and/or/not. "otherwise" (or "true"/"else") always matches.
    """
    normalized = text.strip()
    if normalized.lower() in _CATCH_ALL_SPELLINGS:
        return lambda counts, trials: True
    try:
        tree = ast.parse(normalized, mode="eval")
    except SyntaxError as exc:
        raise MappingRuleError(f"invalid condition {text!r}: {exc.msg}") from exc
    names = _validate_condition_ast(tree, text, tier_count)
    code = compile(tree, "<mapping-condition>", "eval")

    def predicate(counts: Sequence[int], trials: int) -> bool:
        env = {f"x{k}": counts[k - 1] for k in range(1, len(counts) + 1)}
        env["m"] = trials
        missing = names - set(env)
        if missing:
            raise MappingRuleError(
                f"condition {text!r} references {sorted(missing)} but the profile has "
                f"only {len(counts)} tiers"
            )
        return bool(eval(code, {"__builtins__": {}}, env))

    return predicate


def _validate_condition_ast(tree: ast.Expression, text: str, tier_count: int) -> set[str]:
    names: set[str] = set()
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load, ast.Compare, ast.BoolOp, ast.BinOp, ast.UnaryOp)):
            if isinstance(node, (ast.BoolOp, ast.BinOp, ast.UnaryOp)):
                op = node.op
                if not isinstance(op, _ALLOWED_OPS):
                    raise MappingRuleError(f"condition {text!r}: operator {type(op).__name__} not allowed")
            if isinstance(node, ast.Compare):
                for op in node.ops:
                    if not isinstance(op, _ALLOWED_OPS):
                        raise MappingRuleError(
                            f"condition {text!r}: comparison {type(op).__name__} not allowed"
                        )
            continue
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, bool)):
                raise MappingRuleError(f"condition {text!r}: literal {node.value!r} not allowed")
            continue
        if isinstance(node, ast.Name):
            name = node.id.lower()
            if name == "m":
                names.add(name)
                continue
            if name.startswith("x") and name[1:].isdigit():
                index = int(name[1:])
                if not 1 <= index <= tier_count:
                    raise MappingRuleError(
                        f"condition {text!r}: {node.id} out of range for {tier_count} tiers"
                    )
                names.add(name)
                continue
            raise MappingRuleError(f"condition {text!r}: unknown name {node.id!r}")
        if isinstance(node, (ast.And, ast.Or, ast.Not, ast.USub, ast.UAdd, ast.Eq, ast.NotEq,
                             ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Add, ast.Sub, ast.Mult)):
            continue
        raise MappingRuleError(f"condition {text!r}: {type(node).__name__} not allowed")
    # Lowercase the names used inside the compiled code as well.
    _lowercase_names(tree)
    return names


def _lowercase_names(tree: ast.AST) -> None:
    for node in ast.walk(tree):
        if isinstance(node, ast.Name):
            node.id = node.id.lower()


@dataclass(frozen=True)
class MappingEntry:
    condition: str
    level: int


class MappingTable:
    """Ordered first-match rules from success profiles to complexity levels.

    The final entry must be a catch-all so every profile maps somewhere.
    """

    def __init__(
        self,
        entries: Sequence[MappingEntry],
        *,
        scheme_id: str = FIVE_LEVEL_SCHEME,
        tier_count: int = 3,
    ):
        if not entries:
            raise MappingRuleError("mapping table must have at least one entry")
        if entries[-1].condition.strip().lower() not in _CATCH_ALL_SPELLINGS:
            raise MappingRuleError(
                "the last mapping entry must be a catch-all "
                f"({'/'.join(sorted(_CATCH_ALL_SPELLINGS))}), got {entries[-1].condition!r}"
            )
        self.entries = tuple(entries)
        self.scheme_id = scheme_id
        self.tier_count = tier_count
        self._predicates = [
            (compile_condition(entry.condition, tier_count), entry.level) for entry in entries
        ]

    @classmethod
    def from_config(
        cls,
        config: Sequence[Mapping],
        *,
        scheme_id: str = FIVE_LEVEL_SCHEME,
        tier_count: int = 3,
    ) -> "MappingTable":
        entries = []
        for pos, item in enumerate(config):
            if "when" not in item or "level" not in item:
                raise MappingRuleError(f"mapping entry {pos}: needs 'when' and 'level'")
            entries.append(MappingEntry(str(item["when"]), int(item["level"])))
        return cls(entries, scheme_id=scheme_id, tier_count=tier_count)

    def to_config(self) -> list[dict]:
        return [{"when": e.condition, "level": e.level} for e in self.entries]

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted({e.level for e in self.entries}))

    def label(self, profile: SuccessProfile) -> ComplexityLabel:
        for predicate, level in self._predicates:
            if predicate(profile.counts, profile.trials):
                return ComplexityLabel(level, self.scheme_id)
        raise MappingRuleError("mapping table matched nothing; catch-all missing")  # unreachable


DEFAULT_FIVE_LEVEL_CONFIG = [
    {"when": "x1 == 5 or x1 + x2 >= 7", "level": 1},
    {"when": "x2 == 5", "level": 2},
    {"when": "x3 == 5", "level": 3},
    {"when": "x2 >= 2 or x3 >= 2", "level": 4},
    {"when": "otherwise", "level": 5},
]

DEFAULT_FIVE_LEVEL_TABLE = MappingTable.from_config(DEFAULT_FIVE_LEVEL_CONFIG)


def label(profile: SuccessProfile, table: MappingTable = DEFAULT_FIVE_LEVEL_TABLE) -> ComplexityLabel:
    """Map one success profile to its complexity level (first matching rule wins)."""
    return table.label(profile)


def label_single_trial(profile: SuccessProfile) -> ComplexityLabel | None:
    """Three-class labeling from one trial per tier.

    Class k means tier k+1 is the first that succeeded; None means every tier
    failed and the task is dropped from the dataset.
    """
    if profile.trials != 1:
        raise LabelingError(f"single-trial labeling needs M=1 profiles, got M={profile.trials}")
    if len(profile.counts) != 3:
        raise LabelingError(
            f"single-trial labeling is defined for 3 tiers, got {len(profile.counts)}"
        )
    first, second, third = profile.counts
    if first == 1:
        return ComplexityLabel(0, SINGLE_TRIAL_SCHEME)
    if second == 1:
        return ComplexityLabel(1, SINGLE_TRIAL_SCHEME)
    if third == 1:
        return ComplexityLabel(2, SINGLE_TRIAL_SCHEME)
    return None


@dataclass
class CollectionResult:
    profiles: dict[str, SuccessProfile]
    incomplete: dict[str, str]
    outcomes: list[TrialOutcome]

    def report(self) -> dict:
        return {
            "profiled": len(self.profiles),
            "incomplete": {task_id: reason for task_id, reason in sorted(self.incomplete.items())},
            "trials_recorded": len(self.outcomes),
        }


def collect_profiles(
    corpus: Corpus,
    tiers: TierSet,
    backends: Mapping[str, Backend],
    verifier: Verifier,
    *,
    trials: int = DEFAULT_TRIALS,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    concurrency: int = DEFAULT_CONCURRENCY,
    verify_timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> CollectionResult:
    """Query every tier ``trials`` times per task, verify each reply, count passes.

    Work is parallelized across (task, tier) pairs with at most ``concurrency``
    in-flight jobs per tier. A backend failure marks that task incomplete and
    excludes it from the returned profiles (reported, never imputed); outcomes
    that did complete are still returned for the audit log, sorted by corpus
    order, tier index, then trial.
    """
    if trials < 1:
        raise LabelingError("trials must be >= 1")
    for tier in tiers:
        if tier.tier_id not in backends:
            raise LabelingError(f"no backend configured for tier {tier.tier_id!r}")

    gates = {tier.tier_id: threading.BoundedSemaphore(concurrency) for tier in tiers}

    def run_pair(task, tier: ModelTier) -> tuple[list[TrialOutcome], str | None]:
        outcomes: list[TrialOutcome] = []
        prompt = render_prompt(task, tier.prompt_profile)
        with gates[tier.tier_id]:
            for trial_index in range(1, trials + 1):
                request = CompletionRequest(
                    tier_id=tier.tier_id,
                    prompt=prompt,
                    temperature=temperature,
                    max_tokens=max_tokens,
                    task_id=task.task_id,
                    trial_index=trial_index,
                )
                try:
                    response = backends[tier.tier_id].complete(request)
                except BackendError as exc:
                    return outcomes, f"{tier.tier_id}: trial {trial_index}: {exc}"
                code = extract_code(response.text)
                verdict = verifier.verify(
                    VerifyRequest(task.task_id, code, task.assertions, verify_timeout_ms)
                )
                outcomes.append(
                    TrialOutcome(
                        task_id=task.task_id,
                        tier_id=tier.tier_id,
                        trial_index=trial_index,
                        verdict=verdict,
                        raw_output=response.text,
                        extracted_code=code,
                        completion_tokens=response.completion_tokens,
                    )
                )
        return outcomes, None

    pairs = [(task, tier) for task in corpus for tier in tiers]
    results: dict[tuple[str, str], tuple[list[TrialOutcome], str | None]] = {}
    max_workers = max(1, concurrency * len(tiers))
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {(task.task_id, tier.tier_id): pool.submit(run_pair, task, tier) for task, tier in pairs}
        for key, future in futures.items():
            results[key] = future.result()

    profiles: dict[str, SuccessProfile] = {}
    incomplete: dict[str, str] = {}
    all_outcomes: list[TrialOutcome] = []
    for task in corpus:
        failure = None
        counts = []
        for tier in tiers:
            outcomes, reason = results[(task.task_id, tier.tier_id)]
            all_outcomes.extend(outcomes)
            if reason is not None and failure is None:
                failure = reason
            counts.append(sum(1 for o in outcomes if o.verdict.passed))
        if failure is not None:
            incomplete[task.task_id] = failure
        else:
            profiles[task.task_id] = SuccessProfile(task.task_id, tuple(counts), trials)

    order = {task.task_id: pos for pos, task in enumerate(corpus)}
    tier_order = {tier.tier_id: tier.tier_index for tier in tiers}
    all_outcomes.sort(key=lambda o: (order[o.task_id], tier_order[o.tier_id], o.trial_index))
    return CollectionResult(profiles=profiles, incomplete=incomplete, outcomes=all_outcomes)


def label_profiles(
    profiles: Iterable[SuccessProfile],
    corpus: Corpus,
    table: MappingTable = DEFAULT_FIVE_LEVEL_TABLE,
) -> list[LabeledTask]:
    """Join profiles with their task prompts and apply the mapping table."""
    labeled = []
    for profile in profiles:
        task = corpus.get(profile.task_id)
        result = table.label(profile)
        labeled.append(
            LabeledTask(
                task_id=profile.task_id,
                prompt=task.prompt,
                counts=profile.counts,
                trials=profile.trials,
                level=result.level,
                scheme_id=result.scheme_id,
            )
        )
    return labeled


def label_profiles_single_trial(
    profiles: Iterable[SuccessProfile], corpus: Corpus
) -> tuple[list[LabeledTask], list[str]]:
    """Three-class labeling over M=1 profiles; all-failure tasks are dropped
    and their ids returned alongside the labeled set."""
    labeled: list[LabeledTask] = []
    dropped: list[str] = []
    for profile in profiles:
        result = label_single_trial(profile)
        if result is None:
            dropped.append(profile.task_id)
            continue
        task = corpus.get(profile.task_id)
        labeled.append(
            LabeledTask(
                task_id=profile.task_id,
                prompt=task.prompt,
                counts=profile.counts,
                trials=profile.trials,
                level=result.level,
                scheme_id=result.scheme_id,
            )
        )
    return labeled, dropped
