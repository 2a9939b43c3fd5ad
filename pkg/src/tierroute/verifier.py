"""Verification contract: candidate code + assertions -> verdict.

Two implementations ship with the primary package: a table-driven stub so the
test suite runs without any execution sandbox, and a supervisor for external
runner processes speaking newline-delimited JSON frames over stdin/stdout.

Wire protocol (one UTF-8 frame per line):
  request:  {"id", "code", "assertions", "timeout_ms"}
  response: {"id", "kind", "detail", "duration_ms"}   (id echoes the request)
A freshly started runner announces itself with {"ready": true, "protocol": 1}.
"""

from __future__ import annotations

import hashlib
import json
import queue
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .errors import TierRouteError

VERDICT_KINDS = ("pass", "fail", "error", "timeout")
DEFAULT_TIMEOUT_MS = 10_000
SUPERVISION_GRACE_MS = 500
PROTOCOL_VERSION = 1
DEFAULT_POOL_SIZE = 4


class VerifierError(TierRouteError):
    pass


class RunnerSpawnError(VerifierError):
    pass


@dataclass(frozen=True)
class Verdict:
    kind: str
    detail: str = ""
    duration_ms: int = 0

    def __post_init__(self):
        if self.kind not in VERDICT_KINDS:
            raise VerifierError(f"verdict kind must be one of {VERDICT_KINDS}, got {self.kind!r}")

    @property
    def passed(self) -> bool:
        return self.kind == "pass"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail, "duration_ms": self.duration_ms}

    @classmethod
    def from_dict(cls, record: Mapping) -> "Verdict":
        return cls(
            kind=str(record["kind"]),
            detail=str(record.get("detail", "")),
            duration_ms=int(record.get("duration_ms", 0)),
        )


@dataclass(frozen=True)
class VerifyRequest:
    task_id: str
    candidate_code: str
    assertions: tuple[str, ...]
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def __post_init__(self):
        if not self.assertions:
            raise VerifierError(f"task {self.task_id}: assertions must be non-empty")
        if self.timeout_ms <= 0:
            raise VerifierError(f"task {self.task_id}: timeout_ms must be positive")


class Verifier(Protocol):
    def verify(self, request: VerifyRequest) -> Verdict: ...


def code_digest(code: str) -> str:
    return hashlib.sha256(code.encode("utf-8")).hexdigest()


class StubVerifier:
    """Table-driven verifier: (task_id, sha256(code)) -> scripted verdict.

    Unknown keys yield an error verdict marked "unscripted" so a fixture gap
    is visible instead of silently passing or failing.
    """

    def __init__(self, table: Mapping[tuple[str, str], Verdict] | None = None):
        self._table = dict(table or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "StubVerifier":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        table = {}
        for key, record in raw.items():
            task_id, _, digest = key.partition("/")
            table[(task_id, digest)] = Verdict.from_dict(record)
        return cls(table)

    def script(self, task_id: str, code: str, verdict: Verdict) -> None:
        self._table[(task_id, code_digest(code))] = verdict

    def to_file_dict(self) -> dict:
        return {f"{tid}/{digest}": v.to_dict() for (tid, digest), v in self._table.items()}

    def verify(self, request: VerifyRequest) -> Verdict:
        verdict = self._table.get((request.task_id, code_digest(request.candidate_code)))
        if verdict is None:
            return Verdict("error", "unscripted")
        return verdict


class _ReaderThread:
    """Drains a process's stdout into a queue so reads can time out."""

    def __init__(self, proc: subprocess.Popen):
        self.lines: queue.Queue[str | None] = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(proc,), daemon=True)
        self._thread.start()

    def _pump(self, proc: subprocess.Popen) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            self.lines.put(line)
        self.lines.put(None)

    def read(self, timeout_s: float) -> str | None:
        """Next line, or None on EOF; raises queue.Empty on timeout."""
        return self.lines.get(timeout=timeout_s)


class RunnerHandle:
    """Supervises one runner process; single-request-at-a-time.

    Kills and restarts the runner whenever it blows its deadline or corrupts
    the protocol, so one pathological request never poisons the next.
    """

    def __init__(
        self,
        command: Sequence[str],
        *,
        grace_ms: int = SUPERVISION_GRACE_MS,
        spawn_timeout_s: float = 15.0,
    ):
        self.command = list(command)
        self.grace_ms = grace_ms
        self.spawn_timeout_s = spawn_timeout_s
        self._lock = threading.Lock()
        self._proc: subprocess.Popen | None = None
        self._reader: _ReaderThread | None = None
        self._next_id = 0
        self._spawn()

    def _spawn(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise RunnerSpawnError(f"failed to start runner {self.command!r}: {exc}") from exc
        self._reader = _ReaderThread(self._proc)
        try:
            line = self._reader.read(self.spawn_timeout_s)
        except queue.Empty:
            self._kill()
            raise RunnerSpawnError("runner did not announce readiness in time")
        if line is None:
            self._kill()
            raise RunnerSpawnError("runner exited before announcing readiness")
        try:
            ready = json.loads(line)
        except json.JSONDecodeError:
            self._kill()
            raise RunnerSpawnError(f"runner sent a malformed ready frame: {line!r}")
        if not ready.get("ready") or ready.get("protocol") != PROTOCOL_VERSION:
            self._kill()
            raise RunnerSpawnError(f"unexpected ready frame: {ready!r}")

    def _kill(self) -> None:
        proc = self._proc
        if proc is None:
            return
        if proc.poll() is None:
            proc.kill()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass
        if proc.stdin:
            try:
                proc.stdin.close()
            except OSError:
                pass
        self._proc = None
        self._reader = None

    def _restart(self) -> None:
        self._kill()
        self._spawn()

    def verify(self, request: VerifyRequest) -> Verdict:
        with self._lock:
            return self._verify_locked(request)

    def _verify_locked(self, request: VerifyRequest) -> Verdict:
        if self._proc is None or self._proc.poll() is not None:
            self._restart()
        assert self._proc is not None and self._reader is not None
        self._next_id += 1
        request_id = self._next_id
        frame = {
            "id": request_id,
            "code": request.candidate_code,
            "assertions": list(request.assertions),
            "timeout_ms": request.timeout_ms,
        }
        started = time.monotonic()
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(json.dumps(frame) + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError):
            self._restart()
            return Verdict("error", "runner pipe broke while sending the request")
        budget_s = (request.timeout_ms + self.grace_ms) / 1000.0
        try:
            line = self._reader.read(budget_s)
        except queue.Empty:
            self._restart()
            return Verdict(
                "timeout",
                f"runner did not respond within {request.timeout_ms} ms plus {self.grace_ms} ms grace",
                duration_ms=int((time.monotonic() - started) * 1000),
            )
        if line is None:
            self._restart()
            return Verdict("error", "runner exited before answering")
        elapsed_ms = int((time.monotonic() - started) * 1000)
        try:
            response = json.loads(line)
            kind = response["kind"]
            if response.get("id") != request_id:
                raise ValueError(f"id mismatch: sent {request_id}, got {response.get('id')!r}")
            if kind not in VERDICT_KINDS:
                raise ValueError(f"unknown verdict kind {kind!r}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            self._restart()
            return Verdict("error", f"protocol violation: {exc}", duration_ms=elapsed_ms)
        return Verdict(
            kind,
            str(response.get("detail", "")),
            duration_ms=int(response.get("duration_ms", elapsed_ms)),
        )

    def close(self) -> None:
        with self._lock:
            self._kill()

    def __enter__(self) -> "RunnerHandle":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class RunnerPool:
    """Fixed pool of runner handles for parallel verification."""

    def __init__(self, command: Sequence[str], size: int = DEFAULT_POOL_SIZE):
        if size < 1:
            raise VerifierError("pool size must be at least 1")
        self._handles = [RunnerHandle(command) for _ in range(size)]
        self._free: queue.Queue[RunnerHandle] = queue.Queue()
        for handle in self._handles:
            self._free.put(handle)

    def verify(self, request: VerifyRequest) -> Verdict:
        handle = self._free.get()
        try:
            return handle.verify(request)
        finally:
            self._free.put(handle)

    def close(self) -> None:
        for handle in self._handles:
            handle.close()

    def __enter__(self) -> "RunnerPool":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def verify(request: VerifyRequest, runner: Verifier) -> Verdict:
    """Run one verification through a runner or stub."""
    return runner.verify(request)
