from __future__ import annotations

import random
import sys
import time
from collections import Counter
from pathlib import Path

import pytest

from tierroute.verifier import (
    RunnerHandle,
    RunnerPool,
    RunnerSpawnError,
    StubVerifier,
    VERDICT_KINDS,
    Verdict,
    VerifierError,
    VerifyRequest,
    code_digest,
    verify,
)

FAKE_RUNNER = [sys.executable, str(Path(__file__).parent / "fake_runner.py")]


def _request(code: str, timeout_ms: int = 5_000) -> VerifyRequest:
    return VerifyRequest("t1", code, ("assert f() == 1",), timeout_ms)


def test_verdict_kind_is_validated():
    with pytest.raises(VerifierError):
        Verdict("maybe")
    for kind in VERDICT_KINDS:
        Verdict(kind)


def test_verify_request_invariants():
    with pytest.raises(VerifierError):
        VerifyRequest("t", "code", ())
    with pytest.raises(VerifierError):
        VerifyRequest("t", "code", ("assert 1",), timeout_ms=0)


def test_stub_returns_scripted_verdict():
    stub = StubVerifier()
    stub.script("t1", "def f(): return 1", Verdict("pass"))
    verdict = stub.verify(_request("def f(): return 1"))
    assert verdict.kind == "pass"


def test_stub_unscripted_key_is_error_verdict():
    stub = StubVerifier()
    verdict = stub.verify(_request("def f(): return 2"))
    assert verdict.kind == "error"
    assert verdict.detail == "unscripted"


def test_stub_is_deterministic():
    stub = StubVerifier()
    stub.script("t1", "x", Verdict("fail", "assert f() == 1"))
    first = stub.verify(_request("x"))
    second = stub.verify(_request("x"))
    assert first == second


def test_stub_file_round_trip(tmp_path):
    stub = StubVerifier()
    stub.script("t1", "code-a", Verdict("pass"))
    stub.script("t2", "code-b", Verdict("fail", "assert 2"))
    path = tmp_path / "verdicts.json"
    import json

    path.write_text(json.dumps(stub.to_file_dict()), encoding="utf-8")
    loaded = StubVerifier.from_file(path)
    assert loaded.verify(VerifyRequest("t1", "code-a", ("a",))).kind == "pass"
    assert loaded.verify(VerifyRequest("t2", "code-b", ("a",))).detail == "assert 2"


def test_code_digest_is_stable_and_content_sensitive():
    assert code_digest("abc") == code_digest("abc")
    assert code_digest("abc") != code_digest("abd")
    assert len(code_digest("abc")) == 64


def test_verify_helper_delegates():
    stub = StubVerifier()
    stub.script("t1", "y", Verdict("pass"))
    assert verify(_request("y"), stub).kind == "pass"


class TestRunnerSupervision:
    def test_pass_and_fail_round_trip(self):
        with RunnerHandle(FAKE_RUNNER) as handle:
            assert handle.verify(_request("OK")).kind == "pass"
            failed = handle.verify(_request("FAIL"))
            assert failed.kind == "fail"
            assert failed.detail == "assert f() == 1"

    def test_deadline_kills_and_restarts_runner(self):
        with RunnerHandle(FAKE_RUNNER) as handle:
            started = time.monotonic()
            verdict = handle.verify(_request("SLEEP:5000", timeout_ms=300))
            elapsed = time.monotonic() - started
            assert verdict.kind == "timeout"
            assert elapsed < 3.0  # 300ms budget + 500ms grace + slack, not 5s
            # The replacement process answers normally.
            assert handle.verify(_request("OK")).kind == "pass"

    def test_protocol_corruption_is_error_then_recovers(self):
        with RunnerHandle(FAKE_RUNNER) as handle:
            verdict = handle.verify(_request("GARBAGE", timeout_ms=2_000))
            assert verdict.kind == "error"
            assert "protocol violation" in verdict.detail
            assert handle.verify(_request("OK")).kind == "pass"

    def test_id_mismatch_is_protocol_violation(self):
        with RunnerHandle(FAKE_RUNNER) as handle:
            verdict = handle.verify(_request("WRONG_ID"))
            assert verdict.kind == "error"
            assert "id mismatch" in verdict.detail
            assert handle.verify(_request("OK")).kind == "pass"

    def test_spawn_failure_raises(self):
        with pytest.raises(RunnerSpawnError):
            RunnerHandle(["/nonexistent/definitely-not-a-runner"])

    def test_every_request_yields_exactly_one_verdict_kind(self):
        with RunnerHandle(FAKE_RUNNER) as handle:
            for code in ("OK", "FAIL", "GARBAGE", "WRONG_ID", "anything else"):
                verdict = handle.verify(_request(code, timeout_ms=2_000))
                assert verdict.kind in VERDICT_KINDS


def test_pool_verifies_in_any_order_with_same_multiset():
    requests = [_request("OK")] * 4 + [_request("FAIL")] * 3 + [_request("nope")] * 2
    with RunnerPool(FAKE_RUNNER, size=2) as pool:
        ordered = [pool.verify(r) for r in requests]
        shuffled_requests = requests[:]
        random.Random(5).shuffle(shuffled_requests)
        shuffled = [pool.verify(r) for r in shuffled_requests]
    assert Counter(v.kind for v in ordered) == Counter(v.kind for v in shuffled)
    assert Counter(v.kind for v in ordered) == Counter({"pass": 4, "fail": 3, "error": 2})
