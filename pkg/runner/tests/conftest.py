from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading

import pytest


class RunnerProcess:
    """Drives a live runner over the frame protocol, with read timeouts."""

    def __init__(self):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "assertion_runner"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue[str | None] = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()
        self.ready = self.read_frame(timeout=15)

    def _pump(self):
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def read_frame(self, timeout: float = 30.0) -> dict:
        line = self._lines.get(timeout=timeout)
        if line is None:
            raise AssertionError("runner exited unexpectedly")
        return json.loads(line)

    def send_raw(self, text: str) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(text)
        self.proc.stdin.flush()

    def request(self, frame: dict, timeout: float = 30.0) -> dict:
        self.send_raw(json.dumps(frame) + "\n")
        return self.read_frame(timeout=timeout)

    def close_stdin(self) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.close()

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait(timeout=10)


@pytest.fixture()
def runner():
    process = RunnerProcess()
    yield process
    process.close()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results: dict[str, str] = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(report, "when", "call") == "call":
                results[nodeid] = status
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for nodeid in sorted(results):
        verdict = "PASS" if results[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {nodeid.split('::')[-1]}")
