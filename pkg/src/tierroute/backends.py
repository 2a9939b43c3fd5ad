"""Model invocation across tiers: prompt rendering, HTTP/local/replay backends.

All backends expose a single ``complete(request) -> CompletionResponse``
surface and must tolerate concurrent calls; the collector issues
bounded-parallel requests against them.
"""

from __future__ import annotations

import re
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

from .corpus import Task
from .errors import TierRouteError

DEFAULT_SYSTEM_PROMPT = (
    "Respond with only the code implementing the described function, "
    "using the exact function name and arguments given. No explanations."
)
DEFAULT_TEMPERATURE = 1.0
DEFAULT_MAX_TOKENS = 1024
DEFAULT_CONCURRENCY = 4


class BackendError(TierRouteError):
    pass


class AuthenticationError(BackendError):
    """Credential rejection; never retried."""


class PermanentBackendError(BackendError):
    """Non-retryable failure: 4xx other than 429, or a malformed response body."""


class RetryBudgetExceededError(BackendError):
    pass


class UnrecordedInteractionError(BackendError):
    """The replay store has no entry for the requested (task, tier, trial)."""


class TierSetError(TierRouteError):
    pass


@dataclass(frozen=True)
class PromptProfile:
    """How a tier's prompt is assembled.

    ``reduced`` cuts the prompt down to the task description plus the function
    format, for small models that choke on the full instruction block.
    """

    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    include_signature: bool = True
    reduced: bool = False

    def __post_init__(self):
        if not self.reduced and not self.system_prompt.strip():
            raise TierSetError("non-reduced prompt profiles need a non-empty system prompt")


@dataclass(frozen=True)
class ModelTier:
    """One rung of the capability/cost ladder."""

    tier_id: str
    tier_index: int
    unit_cost: float
    prompt_profile: PromptProfile = PromptProfile()
    backend_config: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.unit_cost < 0:
            raise TierSetError(f"tier {self.tier_id}: unit_cost must be nonnegative")


class TierSet:
    """Tiers ordered by ascending capability; indices 1..K with no gaps and
    strictly increasing unit cost."""

    def __init__(self, tiers: Iterable[ModelTier]):
        ordered = sorted(tiers, key=lambda t: t.tier_index)
        if not ordered:
            raise TierSetError("tier set must not be empty")
        ids = [t.tier_id for t in ordered]
        if len(set(ids)) != len(ids):
            raise TierSetError(f"duplicate tier ids: {ids}")
        indices = [t.tier_index for t in ordered]
        if indices != list(range(1, len(ordered) + 1)):
            raise TierSetError(f"tier_index values must be 1..{len(ordered)} with no gaps, got {indices}")
        costs = [t.unit_cost for t in ordered]
        if any(a >= b for a, b in zip(costs, costs[1:])):
            raise TierSetError(f"unit_cost must strictly increase with tier_index, got {costs}")
        self._tiers = tuple(ordered)
        self._by_id = {t.tier_id: t for t in ordered}

    def __iter__(self):
        return iter(self._tiers)

    def __len__(self) -> int:
        return len(self._tiers)

    def by_id(self, tier_id: str) -> ModelTier:
        try:
            return self._by_id[tier_id]
        except KeyError:
            raise TierSetError(f"unknown tier id {tier_id!r}") from None

    def by_index(self, index: int) -> ModelTier:
        return self._tiers[index - 1]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(t.tier_id for t in self._tiers)

    @property
    def largest(self) -> ModelTier:
        return self._tiers[-1]


@dataclass(frozen=True)
class CompletionRequest:
    tier_id: str
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    # Replay keying; harmless for live backends.
    task_id: str | None = None
    trial_index: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise BackendError("temperature must be nonnegative")
        if self.max_tokens <= 0:
            raise BackendError("max_tokens must be positive")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0
    finish_reason: str = "stop"

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise BackendError("token counts must be nonnegative")


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def render_prompt(task: Task, profile: PromptProfile) -> str:
    """Assemble the prompt for one task under a tier's profile.

    Deterministic, and never embeds assertion bodies (the checks must not leak
    into the model input).
    """
    hint = task.signature_hint if profile.include_signature else None
    if profile.reduced:
        parts = [task.prompt]
        if hint:
            parts.append(f"Function format: {hint}")
    else:
        parts = [profile.system_prompt, task.prompt]
        if hint:
            parts.append(f"Use exactly this function signature: {hint}")
    return "\n\n".join(parts)


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)
_CODE_LINE_RE = re.compile(r"^(def |async def |import |from )")


def extract_code(raw: str) -> str:
    """Strip a model reply down to code.

    Fenced blocks win (all of them, concatenated blank-line separated, tags
    stripped); otherwise everything from the first function/import definition
    line onward; otherwise the input unchanged.
    """
    blocks = [m.group(1) for m in _FENCE_RE.finditer(raw)]
    if blocks:
        return "\n\n".join(block.strip("\n") for block in blocks)
    offset = 0
    for line in raw.splitlines(keepends=True):
        if _CODE_LINE_RE.match(line):
            return raw[offset:]
        offset += len(line)
    return raw


class BackendTelemetry:
    """Thread-safe counters for requests, retries, and terminal failures."""

    def __init__(self):
        self._lock = threading.Lock()
        self.requests = 0
        self.retries = 0
        self.failures = 0

    def record_request(self) -> None:
        with self._lock:
            self.requests += 1

    def record_retry(self) -> None:
        with self._lock:
            self.retries += 1

    def record_failure(self) -> None:
        with self._lock:
            self.failures += 1


def _requests_transport(url: str, headers: dict, payload: dict, timeout: float) -> tuple[int, Any]:
    import requests

    response = requests.post(url, headers=headers, json=payload, timeout=timeout)
    try:
        body = response.json()
    except ValueError:
        body = None
    return response.status_code, body


class TransientBackendFailure(Exception):
    """Internal marker for a retryable condition (HTTP 429/5xx, timeouts)."""


class HttpChatBackend:
    """OpenAI-style chat-completion client with exponential-backoff retries.

    Retries HTTP 429/5xx and transport-level failures up to ``max_retries``;
    auth failures and other 4xx are surfaced immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        max_retries: int = 4,
        backoff_base_s: float = 0.5,
        backoff_cap_s: float = 8.0,
        transport: Callable[[str, dict, dict, float], tuple[int, Any]] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        telemetry: BackendTelemetry | None = None,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self.backoff_cap_s = backoff_cap_s
        self.telemetry = telemetry if telemetry is not None else BackendTelemetry()
        self._transport = transport if transport is not None else _requests_transport
        self._sleep = sleep

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        self.telemetry.record_request()
        attempt = 0
        start = time.monotonic()
        while True:
            try:
                return self._attempt(headers, payload, start)
            except TransientBackendFailure as exc:
                if attempt >= self.max_retries:
                    self.telemetry.record_failure()
                    raise RetryBudgetExceededError(
                        f"gave up after {attempt} retries: {exc}"
                    ) from exc
                self._sleep(min(self.backoff_cap_s, self.backoff_base_s * 2**attempt))
                attempt += 1
                self.telemetry.record_retry()

    def _attempt(self, headers: dict, payload: dict, start: float) -> CompletionResponse:
        try:
            status, body = self._transport(self.url, headers, payload, self.timeout_s)
        except (OSError, IOError) as exc:
            raise TransientBackendFailure(f"transport failure: {exc}") from exc
        except Exception as exc:  # requests raises its own exception tree
            if type(exc).__module__.startswith("requests"):
                raise TransientBackendFailure(f"transport failure: {exc}") from exc
            raise
        if status in (401, 403):
            self.telemetry.record_failure()
            raise AuthenticationError(f"authentication failed (HTTP {status})")
        if status == 429 or status >= 500:
            raise TransientBackendFailure(f"HTTP {status}")
        if status >= 400:
            self.telemetry.record_failure()
            raise PermanentBackendError(f"HTTP {status}")
        latency_ms = int((time.monotonic() - start) * 1000)
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"]
            usage = body.get("usage", {})
            return CompletionResponse(
                text=text,
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                latency_ms=latency_ms,
                finish_reason=choice.get("finish_reason", "stop"),
            )
        except (KeyError, IndexError, TypeError) as exc:
            self.telemetry.record_failure()
            raise PermanentBackendError(f"malformed response body: {exc!r}") from exc


class LocalProcessBackend:
    """Adapter for a locally run model: a command template reading the prompt
    on stdin and writing the completion to stdout."""

    def __init__(self, command: list[str], *, timeout_s: float = 300.0):
        if not command:
            raise BackendError("local backend needs a non-empty command")
        self.command = list(command)
        self.timeout_s = timeout_s

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        argv = [
            part.format(temperature=request.temperature, max_tokens=request.max_tokens)
            for part in self.command
        ]
        start = time.monotonic()
        try:
            proc = subprocess.run(
                argv,
                input=request.prompt,
                capture_output=True,
                text=True,
                timeout=self.timeout_s,
            )
        except subprocess.TimeoutExpired as exc:
            raise BackendError(f"local model timed out after {self.timeout_s}s") from exc
        except OSError as exc:
            raise BackendError(f"failed to run {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise PermanentBackendError(
                f"local model exited with {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        return CompletionResponse(
            text=proc.stdout,
            latency_ms=int((time.monotonic() - start) * 1000),
        )


def replay_key(task_id: str, tier_id: str, trial_index: int) -> str:
    return f"{task_id}/{tier_id}/{trial_index}"


class ReplayBackend:
    """Deterministic stub keyed by (task_id, tier_id, trial_index).

    Identical runs produce identical responses regardless of interleaving;
    an unrecorded key is an error, never a silent default.
    """

    def __init__(self, store: Mapping[str, Mapping[str, Any]]):
        self._store = dict(store)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        import json

        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if request.task_id is None or request.trial_index is None:
            raise BackendError("replay backend needs task_id and trial_index on the request")
        key = replay_key(request.task_id, request.tier_id, request.trial_index)
        with self._lock:
            entry = self._store.get(key)
        if entry is None:
            raise UnrecordedInteractionError(f"unrecorded interaction: {key}")
        return CompletionResponse(
            text=entry["raw_text"],
            prompt_tokens=int(entry.get("prompt_tokens", 0)),
            completion_tokens=int(entry.get("completion_tokens", 0)),
            latency_ms=0,
        )
