"""Pluggable complexity predictors and their evaluation.

The framework never fine-tunes anything itself: it exports a completion-style
{prompt, completion} dataset and consumes whatever model results through a
uniform adapter (prompt a backend, or replay predictions from a file).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .backends import Backend, CompletionRequest
from .errors import TierRouteError
from .jsonio import read_jsonl
from .labeling import LabeledTask
from .corpus import Task

FINETUNE_SEPARATOR = "\n\n###\n\n"


class ClassifierError(TierRouteError):
    pass


class UnparseablePredictionError(ClassifierError):
    pass


class MissingPredictionsError(ClassifierError):
    pass


@dataclass(frozen=True)
class Prediction:
    task_id: str
    predicted_level: int
    raw_model_output: str = ""
    source: str = ""


@dataclass(frozen=True)
class FineTuneExample:
    prompt: str
    completion: str

    def to_record(self) -> dict:
        return {"prompt": self.prompt, "completion": self.completion}

    @classmethod
    def from_record(cls, record: Mapping) -> "FineTuneExample":
        return cls(prompt=str(record["prompt"]), completion=str(record["completion"]))


def export_finetune(labeled: Iterable[LabeledTask]) -> list[FineTuneExample]:
    """One {prompt, completion} example per labeled task, in input order.

    The prompt is the task text plus a fixed separator suffix; the completion
    is a single level token (" 3" style) so a completion model can be tuned to
    answer with exactly one token.
    """
    examples = []
    for record in labeled:
        examples.append(
            FineTuneExample(
                prompt=record.prompt + FINETUNE_SEPARATOR,
                completion=f" {record.level}",
            )
        )
    return examples


class ClassifierAdapter(Protocol):
    source: str

    def predict(self, task: Task) -> Prediction: ...


class ReplayClassifier:
    """Reads predictions from a {task_id, level} JSONL file or mapping."""

    source = "replay"

    def __init__(self, levels: Mapping[str, int]):
        self._levels = dict(levels)

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayClassifier":
        levels: dict[str, int] = {}
        for record in read_jsonl(path):
            levels[str(record["task_id"])] = int(record["level"])
        return cls(levels)

    def predict(self, task: Task) -> Prediction:
        level = self._levels.get(task.task_id)
        if level is None:
            raise ClassifierError(f"no recorded prediction for task {task.task_id!r}")
        return Prediction(task.task_id, level, source=self.source)


class PromptClassifier:
    """Asks a backend for the level: same separator suffix as the fine-tune
    export, max_tokens=1, and the first in-range digit of the reply is the
    level. Unparseable output is an error, never a silent default."""

    source = "prompt"

    def __init__(
        self,
        backend: Backend,
        tier_id: str,
        *,
        levels: Sequence[int] = (1, 2, 3, 4, 5),
        temperature: float = 0.0,
    ):
        self._backend = backend
        self._tier_id = tier_id
        self._levels = set(levels)
        self._temperature = temperature

    def predict(self, task: Task) -> Prediction:
        request = CompletionRequest(
            tier_id=self._tier_id,
            prompt=task.prompt + FINETUNE_SEPARATOR,
            temperature=self._temperature,
            max_tokens=1,
            task_id=task.task_id,
            trial_index=1,
        )
        response = self._backend.complete(request)
        level = self._parse_level(response.text)
        if level is None:
            raise UnparseablePredictionError(
                f"task {task.task_id}: could not parse a level from {response.text!r}"
            )
        return Prediction(task.task_id, level, raw_model_output=response.text, source=self.source)

    def _parse_level(self, text: str) -> int | None:
        for char in text:
            if char.isdigit() and int(char) in self._levels:
                return int(char)
        return None


def predict(task: Task, adapter: ClassifierAdapter) -> Prediction:
    return adapter.predict(task)


@dataclass(frozen=True)
class ConfusionMatrix:
    """True level x predicted level counts with the derived rates.

    type_ii_rate counts under-predictions (predicted strictly below true),
    the direction that routes a task to a tier that cannot solve it.
    """

    levels: tuple[int, ...]
    matrix: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return sum(sum(row) for row in self.matrix)

    @property
    def accuracy(self) -> float:
        n = self.n
        return sum(self.matrix[i][i] for i in range(len(self.levels))) / n if n else 0.0

    @property
    def type_ii_rate(self) -> float:
        n = self.n
        if not n:
            return 0.0
        under = sum(
            self.matrix[i][j]
            for i in range(len(self.levels))
            for j in range(len(self.levels))
            if self.levels[j] < self.levels[i]
        )
        return under / n

    @property
    def per_level_recall(self) -> dict[int, float | None]:
        out: dict[int, float | None] = {}
        for i, level in enumerate(self.levels):
            total = sum(self.matrix[i])
            out[level] = self.matrix[i][i] / total if total else None
        return out

    @property
    def per_level_precision(self) -> dict[int, float | None]:
        out: dict[int, float | None] = {}
        for j, level in enumerate(self.levels):
            total = sum(self.matrix[i][j] for i in range(len(self.levels)))
            out[level] = self.matrix[j][j] / total if total else None
        return out

    def to_report(self) -> dict:
        return {
            "matrix": [list(row) for row in self.matrix],
            "accuracy": self.accuracy,
            "per_level_recall": {str(level): rate for level, rate in self.per_level_recall.items()},
            "type_ii_rate": self.type_ii_rate,
            "n": self.n,
        }


def evaluate(
    truth: Sequence[LabeledTask],
    predictions: Iterable[Prediction],
    *,
    levels: Sequence[int] | None = None,
) -> ConfusionMatrix:
    """Score predictions against a labeled test set.

    Every test task needs a prediction (missing ones are a hard error naming
    the ids); extra predictions for unknown tasks are ignored. The matrix is
    over ``levels`` when given, else the union of observed levels.
    """
    predicted_by_id: dict[str, int] = {}
    for prediction in predictions:
        predicted_by_id[prediction.task_id] = prediction.predicted_level
    missing = [t.task_id for t in truth if t.task_id not in predicted_by_id]
    if missing:
        raise MissingPredictionsError(
            f"missing predictions for {len(missing)} task(s): {', '.join(missing)}"
        )
    if levels is None:
        observed = {t.level for t in truth} | {predicted_by_id[t.task_id] for t in truth}
        level_list = tuple(sorted(observed))
    else:
        level_list = tuple(levels)
    index = {level: i for i, level in enumerate(level_list)}
    counts = [[0] * len(level_list) for _ in level_list]
    for t in truth:
        predicted = predicted_by_id[t.task_id]
        if t.level not in index:
            raise ClassifierError(f"task {t.task_id}: true level {t.level} outside {level_list}")
        if predicted not in index:
            raise ClassifierError(
                f"task {t.task_id}: predicted level {predicted} outside {level_list}"
            )
        counts[index[t.level]][index[predicted]] += 1
    return ConfusionMatrix(level_list, tuple(tuple(row) for row in counts))
