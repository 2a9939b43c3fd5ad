"""Assertion-execution runner.

Reads newline-delimited JSON request frames on stdin and answers one verdict
frame per request on stdout:

    request:  {"id", "code", "assertions", "timeout_ms"}
    response: {"id", "kind", "detail", "duration_ms"}

kind is pass/fail/error/timeout. Each request executes in a fresh worker
process (fresh namespace, hard kill at the deadline), so pathological
candidates cannot poison the next request and the runner itself never exits
on bad input. On startup it announces {"ready": true, "protocol": 1}.
"""

from __future__ import annotations

import json
import multiprocessing
import os
import sys
import time

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_MS = 10_000

try:
    _CTX = multiprocessing.get_context("fork")
except ValueError:  # platforms without fork; spawn re-imports this module
    _CTX = multiprocessing.get_context()


def _run_candidate(code: str, assertions: list[str], conn) -> None:
    """Worker body: load the candidate, then check each assertion in order.

    Runs in its own process. Anything the candidate writes must not leak into
    the protocol stream, so fds 1/2 are pointed at /dev/null first.
    """
    devnull = os.open(os.devnull, os.O_WRONLY)
    os.dup2(devnull, 1)
    os.dup2(devnull, 2)
    sys.stdout = os.fdopen(1, "w")
    sys.stderr = os.fdopen(2, "w")
    namespace: dict = {"__name__": "__candidate__"}
    try:
        exec(compile(code, "<candidate>", "exec"), namespace)
    except BaseException as exc:
        conn.send(("error", f"{type(exc).__name__}: {exc}"))
        return
    for assertion in assertions:
        try:
            exec(compile(assertion, "<assertion>", "exec"), namespace)
        except AssertionError:
            conn.send(("fail", assertion))
            return
        except BaseException as exc:
            conn.send(("error", f"{type(exc).__name__}: {exc}"))
            return
    conn.send(("pass", ""))


def execute(code: str, assertions: list[str], timeout_ms: int = DEFAULT_TIMEOUT_MS) -> dict:
    """Run one candidate under a wall-clock limit; never raises.

    pass: code loads and every assertion holds. fail: an assertion was
    violated (detail names it verbatim). error: any other exception, including
    syntax errors and worker death. timeout: hard-killed at the deadline.
    """
    started = time.monotonic()
    receiver, sender = _CTX.Pipe(duplex=False)
    worker = _CTX.Process(target=_run_candidate, args=(code, list(assertions), sender), daemon=True)
    worker.start()
    sender.close()
    deadline = started + timeout_ms / 1000.0
    kind, detail = _await_verdict(receiver, worker, deadline, timeout_ms)
    if worker.is_alive():
        worker.kill()
    worker.join(timeout=5.0)
    receiver.close()
    duration_ms = int((time.monotonic() - started) * 1000)
    return {"kind": kind, "detail": detail, "duration_ms": duration_ms}


def _await_verdict(receiver, worker, deadline: float, timeout_ms: int) -> tuple[str, str]:
    no_verdict = ("error", "worker exited without a verdict")
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return "timeout", f"execution exceeded {timeout_ms} ms"
        try:
            if receiver.poll(min(remaining, 0.05)):
                return receiver.recv()
        except (EOFError, OSError):
            return no_verdict
        if not worker.is_alive():
            # The verdict may have landed just before the worker exited.
            try:
                if receiver.poll(0.05):
                    return receiver.recv()
            except (EOFError, OSError):
                pass
            return no_verdict


def _emit(stream, frame: dict) -> None:
    stream.write(json.dumps(frame) + "\n")
    stream.flush()


def _parse_frame(line: str) -> tuple[dict | None, object, str | None]:
    """Returns (request, frame_id, problem). request is None when malformed."""
    frame_id = None
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as exc:
        return None, None, f"malformed frame: {exc.msg}"
    if not isinstance(frame, dict):
        return None, None, "malformed frame: not a JSON object"
    frame_id = frame.get("id")
    code = frame.get("code")
    if not isinstance(code, str):
        return None, frame_id, "malformed frame: code must be a string"
    assertions = frame.get("assertions")
    if (
        not isinstance(assertions, list)
        or not assertions
        or not all(isinstance(a, str) for a in assertions)
    ):
        return None, frame_id, "malformed frame: assertions must be a non-empty list of strings"
    timeout_ms = frame.get("timeout_ms", DEFAULT_TIMEOUT_MS)
    if not isinstance(timeout_ms, int) or isinstance(timeout_ms, bool) or timeout_ms <= 0:
        return None, frame_id, "malformed frame: timeout_ms must be a positive integer"
    return {"code": code, "assertions": assertions, "timeout_ms": timeout_ms}, frame_id, None


def serve(stdin=None, stdout=None) -> int:
    """Frame loop: strictly serial, one verdict per request, never crashes."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    _emit(stdout, {"ready": True, "protocol": PROTOCOL_VERSION})
    for line in stdin:
        if not line.strip():
            continue
        request, frame_id, problem = _parse_frame(line)
        if request is None:
            _emit(stdout, {"id": frame_id, "kind": "error", "detail": problem, "duration_ms": 0})
            continue
        verdict = execute(request["code"], request["assertions"], request["timeout_ms"])
        _emit(stdout, {"id": frame_id, **verdict})
    return 0


def main() -> int:
    return serve()


if __name__ == "__main__":
    raise SystemExit(main())
