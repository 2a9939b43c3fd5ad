"""Task corpora: ingest, validate, clean, split, persist.

The on-disk record format is MBPP-compatible line-delimited JSON: one object
per line with keys ``task_id``, ``text``, ``code``, ``test_list`` (and
``schema_version``, pinned at 1, which ingest tolerates being absent so the
public dataset loads with zero transformation).
"""

from __future__ import annotations

import ast
import json
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping

from .errors import TierRouteError
from .jsonio import dump_line, write_jsonl_atomic

if TYPE_CHECKING:
    from .labeling import SuccessProfile

SCHEMA_VERSION = 1


class CorpusError(TierRouteError):
    pass


class EmptyCorpusError(CorpusError):
    pass


class DuplicateTaskIdError(CorpusError):
    pass


class MissingProfileError(CorpusError):
    pass


@dataclass(frozen=True)
class Task:
    """One verifiable problem: prompt text plus the assertions that check a solution."""

    task_id: str
    prompt: str
    assertions: tuple[str, ...]
    reference_code: str | None = None
    signature_hint: str | None = None

    def __post_init__(self):
        if not self.task_id:
            raise CorpusError("task_id must be non-empty")
        if not self.prompt.strip():
            raise CorpusError(f"task {self.task_id}: prompt must be non-empty")
        if not self.assertions:
            raise CorpusError(f"task {self.task_id}: assertions must be non-empty")


@dataclass(frozen=True)
class Corpus:
    tasks: tuple[Task, ...]
    source_name: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        seen: dict[str, int] = {}
        for pos, task in enumerate(self.tasks):
            if task.task_id in seen:
                raise DuplicateTaskIdError(
                    f"duplicate task_id {task.task_id!r} at positions {seen[task.task_id]} and {pos}"
                )
            seen[task.task_id] = pos

    def __iter__(self):
        return iter(self.tasks)

    def __len__(self) -> int:
        return len(self.tasks)

    def get(self, task_id: str) -> Task:
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise KeyError(task_id)

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(task.task_id for task in self.tasks)


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/test split: fraction in (0, 1) plus a shuffle seed."""

    train_fraction: float
    seed: int

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise CorpusError(
                f"train_fraction must be strictly between 0 and 1, got {self.train_fraction}"
            )


@dataclass(frozen=True)
class IngestIssue:
    line_number: int
    reason: str


@dataclass(frozen=True)
class IngestResult:
    corpus: Corpus
    issues: tuple[IngestIssue, ...]

    def report(self) -> dict:
        return {
            "ingested": len(self.corpus),
            "rejected": len(self.issues),
            "issues": [{"line": i.line_number, "reason": i.reason} for i in self.issues],
        }


def extract_signature_hint(assertion: str) -> str | None:
    """Derive a call-shape hint from the first call expression in an assertion.

    ``assert similar_elements((3,4,5,6),(5,7,4,10)) == (4,5)`` yields
    ``"similar_elements(tuple, tuple)"``: callee name plus one inferred type
    name per argument. Returns None when nothing parseable is found rather
    than guessing.
    """
    try:
        tree = ast.parse(assertion)
    except SyntaxError:
        return None
    for node in ast.walk(tree):
        if isinstance(node, ast.Call):
            name = _callee_name(node.func)
            if name is None:
                return None
            parts = [_arg_type_name(arg) for arg in node.args]
            parts.extend(f"{kw.arg}={_arg_type_name(kw.value)}" for kw in node.keywords if kw.arg)
            return f"{name}({', '.join(parts)})"
    return None


def _callee_name(func: ast.expr) -> str | None:
    if isinstance(func, ast.Name):
        return func.id
    if isinstance(func, ast.Attribute):
        base = _callee_name(func.value)
        return None if base is None else f"{base}.{func.attr}"
    return None


def _arg_type_name(node: ast.expr) -> str:
    if isinstance(node, ast.Constant):
        return type(node.value).__name__
    if isinstance(node, ast.Tuple):
        return "tuple"
    if isinstance(node, ast.List):
        return "list"
    if isinstance(node, ast.Dict):
        return "dict"
    if isinstance(node, ast.Set):
        return "set"
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        return _arg_type_name(node.operand)
    return "_"


def ingest(lines: Iterable[str], source_name: str = "") -> IngestResult:
    """Parse a line-delimited record stream into a Corpus.

    Well-formed records are kept; malformed ones are reported with their line
    numbers. An entirely empty stream and a duplicated task_id are hard errors.
    """
    tasks: list[Task] = []
    issues: list[IngestIssue] = []
    first_line_of: dict[str, int] = {}
    saw_content = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        saw_content = True
        reason = None
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            issues.append(IngestIssue(lineno, f"malformed JSON: {exc.msg}"))
            continue
        if not isinstance(record, dict):
            issues.append(IngestIssue(lineno, "record is not a JSON object"))
            continue
        task, reason = _record_to_task(record)
        if task is None:
            issues.append(IngestIssue(lineno, reason or "invalid record"))
            continue
        if task.task_id in first_line_of:
            raise DuplicateTaskIdError(
                f"duplicate task_id {task.task_id!r} on line {lineno} "
                f"(first seen on line {first_line_of[task.task_id]})"
            )
        first_line_of[task.task_id] = lineno
        tasks.append(task)
    if not saw_content:
        raise EmptyCorpusError("input stream contains no records")
    return IngestResult(Corpus(tuple(tasks), source_name=source_name), tuple(issues))


def _record_to_task(record: dict) -> tuple[Task | None, str | None]:
    task_id = record.get("task_id")
    if task_id is None or isinstance(task_id, bool):
        return None, "missing or invalid task_id"
    task_id = str(task_id)
    version = record.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        return None, f"task {task_id}: unsupported schema_version {version!r}"
    prompt = record.get("text")
    if not isinstance(prompt, str) or not prompt.strip():
        return None, f"task {task_id}: missing or empty text"
    test_list = record.get("test_list")
    if not isinstance(test_list, list) or not test_list:
        return None, f"task {task_id}: empty or missing test_list"
    if not all(isinstance(item, str) and item.strip() for item in test_list):
        return None, f"task {task_id}: test_list entries must be non-empty strings"
    code = record.get("code")
    if code is not None and not isinstance(code, str):
        return None, f"task {task_id}: code must be a string or null"
    return (
        Task(
            task_id=task_id,
            prompt=prompt,
            assertions=tuple(test_list),
            reference_code=code,
            signature_hint=extract_signature_hint(test_list[0]),
        ),
        None,
    )


def ingest_file(path: str | Path, source_name: str | None = None) -> IngestResult:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return ingest(fh, source_name=source_name if source_name is not None else path.name)


def corpus_records(corpus: Corpus) -> list[dict]:
    return [
        {
            "task_id": task.task_id,
            "text": task.prompt,
            "code": task.reference_code,
            "test_list": list(task.assertions),
            "schema_version": corpus.schema_version,
        }
        for task in corpus
    ]


def save(corpus: Corpus, path: str | Path) -> None:
    write_jsonl_atomic(path, corpus_records(corpus))


def corpus_to_bytes(corpus: Corpus) -> bytes:
    return "".join(dump_line(r) + "\n" for r in corpus_records(corpus)).encode("utf-8")


def load(path: str | Path, source_name: str | None = None) -> Corpus:
    """Strict load of a previously saved corpus: any malformed line is an error."""
    result = ingest_file(path, source_name=source_name)
    if result.issues:
        details = "; ".join(f"line {i.line_number}: {i.reason}" for i in result.issues)
        raise CorpusError(f"{path}: invalid corpus file: {details}")
    return result.corpus


@dataclass(frozen=True)
class CleanReport:
    removed: tuple[str, ...]
    reason: str = "all_zero_profile"

    def to_dict(self) -> dict:
        return {"removed": list(self.removed), "reason": self.reason}


def clean(corpus: Corpus, profiles: Mapping[str, "SuccessProfile"]) -> tuple[Corpus, CleanReport]:
    """Drop every task whose success counts are zero across all tiers.

    Those rows indicate the task's assertions cannot be satisfied as written
    (typically a prompt/assertion signature mismatch), so they carry no
    labeling signal. Requires a profile for every task.
    """
    kept: list[Task] = []
    removed: list[str] = []
    for task in corpus:
        profile = profiles.get(task.task_id)
        if profile is None:
            raise MissingProfileError(f"no success profile for task {task.task_id!r}")
        if all(count == 0 for count in profile.counts):
            removed.append(task.task_id)
        else:
            kept.append(task)
    return replace(corpus, tasks=tuple(kept)), CleanReport(tuple(removed))


def split_indices(n: int, spec: SplitSpec) -> tuple[list[int], list[int]]:
    """Deterministically shuffle 0..n-1 and cut at round(train_fraction * n).

    Positions keep their original relative order within each side.
    """
    train_size = round(spec.train_fraction * n)
    order = list(range(n))
    random.Random(spec.seed).shuffle(order)
    train_set = set(order[:train_size])
    train = [i for i in range(n) if i in train_set]
    test = [i for i in range(n) if i not in train_set]
    return train, test


def split(corpus: Corpus, spec: SplitSpec) -> tuple[Corpus, Corpus]:
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot split an empty corpus")
    train_idx, test_idx = split_indices(len(corpus), spec)
    train = replace(corpus, tasks=tuple(corpus.tasks[i] for i in train_idx))
    test = replace(corpus, tasks=tuple(corpus.tasks[i] for i in test_idx))
    return train, test
