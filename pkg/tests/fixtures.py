"""Shared synthetic fixture: a 12-task corpus with scripted replay responses
and stub verdicts engineered to hit every complexity level plus one
all-zero-profile task that cleaning must drop.

Per-task plan (counts are passing trials out of 5 for the small/medium/large
tiers; levels are hand-derived from the shipped mapping table):

    t01 (5,0,0) -> 1    t05 (0,1,5) -> 3    t09 (1,1,1) -> 5
    t02 (3,4,0) -> 1    t06 (2,4,5) -> 3    t10 (0,1,0) -> 5
    t03 (0,5,1) -> 2    t07 (1,2,1) -> 4    t11 (0,0,0) -> cleaned
    t04 (1,5,3) -> 2    t08 (0,0,3) -> 4    t12 (5,5,5) -> 1
"""

from __future__ import annotations

import json
from pathlib import Path

from tierroute.backends import ModelTier, PromptProfile, TierSet, replay_key
from tierroute.corpus import Corpus, ingest
from tierroute.verifier import StubVerifier, Verdict

TRIALS = 5

PROFILE_PLAN: dict[str, tuple[int, int, int]] = {
    "t01": (5, 0, 0),
    "t02": (3, 4, 0),
    "t03": (0, 5, 1),
    "t04": (1, 5, 3),
    "t05": (0, 1, 5),
    "t06": (2, 4, 5),
    "t07": (1, 2, 1),
    "t08": (0, 0, 3),
    "t09": (1, 1, 1),
    "t10": (0, 1, 0),
    "t11": (0, 0, 0),
    "t12": (5, 5, 5),
}

EXPECTED_LEVELS: dict[str, int] = {
    "t01": 1,
    "t02": 1,
    "t03": 2,
    "t04": 2,
    "t05": 3,
    "t06": 3,
    "t07": 4,
    "t08": 4,
    "t09": 5,
    "t10": 5,
    "t12": 1,
}

CLEANED_TASK = "t11"

# Hand-computed route expectations for a perfect classifier under the default
# policy (1,2 -> small; 3,4 -> medium; 5 -> large), where the routed answer is
# replay trial 1 of the routed tier (passing iff that tier's count >= 1):
#   pass: t01,t02,t04,t12 (small)  t05,t06,t07 (medium)  t09 (large)
#   fail: t03 (small)  t08 (medium)  t10 (large)
ROUTED_TIER = {
    "t01": "small", "t02": "small", "t03": "small", "t04": "small",
    "t05": "medium", "t06": "medium", "t07": "medium", "t08": "medium",
    "t09": "large", "t10": "large", "t12": "small",
}
ROUTED_PASS = {"t01", "t02", "t04", "t05", "t06", "t07", "t09", "t12"}
ROUTE_FRACTIONS_CORRECT = (0.5, 0.375, 0.125)
ROUTE_FRACTIONS_WRONG = (1 / 3, 1 / 3, 1 / 3)
ROUTE_ACCURACY = 8 / 11
ROUTE_X = 16.75
ROUTE_Y = 37.0
ROUTE_SAVINGS = 855 / 1100


def make_tiers() -> TierSet:
    return TierSet(
        [
            ModelTier(
                "small", 1, 1.0,
                prompt_profile=PromptProfile(system_prompt="", reduced=True),
            ),
            ModelTier("medium", 2, 10.0),
            ModelTier("large", 3, 100.0),
        ]
    )


def task_number(task_id: str) -> int:
    return int(task_id[1:])


def good_code(task_id: str) -> str:
    return f"def solve_{task_id}(value):\n    return {task_number(task_id)}"


def bad_code(task_id: str) -> str:
    return f"def solve_{task_id}(value):\n    return -1"


def raw_records(task_ids=None) -> list[dict]:
    task_ids = list(PROFILE_PLAN) if task_ids is None else list(task_ids)
    return [
        {
            "task_id": tid,
            "text": f"Write a function to return the answer code {task_number(tid)} for any input.",
            "code": good_code(tid),
            "test_list": [f"assert solve_{tid}(0) == {task_number(tid)}"],
        }
        for tid in task_ids
    ]


def raw_lines(task_ids=None) -> list[str]:
    return [json.dumps(record) for record in raw_records(task_ids)]


def make_corpus(task_ids=None) -> Corpus:
    return ingest(raw_lines(task_ids), source_name="fixture").corpus


def build_replay_store(task_ids=None) -> dict:
    """Replay entries for every (task, tier, trial): the first `count` trials
    of each tier answer with the good solution, the rest with a wrong one."""
    store = {}
    tier_ids = ("small", "medium", "large")
    task_ids = list(PROFILE_PLAN) if task_ids is None else list(task_ids)
    for tid in task_ids:
        counts = PROFILE_PLAN[tid]
        for tier_pos, tier_id in enumerate(tier_ids):
            for trial in range(1, TRIALS + 1):
                code = good_code(tid) if trial <= counts[tier_pos] else bad_code(tid)
                store[replay_key(tid, tier_id, trial)] = {
                    "raw_text": f"Sure.\n```python\n{code}\n```",
                    "prompt_tokens": 40,
                    "completion_tokens": 12,
                }
    return store


def build_stub_verifier(task_ids=None) -> StubVerifier:
    task_ids = list(PROFILE_PLAN) if task_ids is None else list(task_ids)
    stub = StubVerifier()
    for tid in task_ids:
        assertion = f"assert solve_{tid}(0) == {task_number(tid)}"
        stub.script(tid, good_code(tid), Verdict("pass"))
        stub.script(tid, bad_code(tid), Verdict("fail", assertion))
    return stub


def prediction_records() -> list[dict]:
    return [{"task_id": tid, "level": level} for tid, level in EXPECTED_LEVELS.items()]


def run_config_dict(base: Path) -> dict:
    return {
        "defaults": {"trials": TRIALS, "temperature": 1.0, "max_tokens": 256, "concurrency": 4},
        "tiers": [
            {
                "tier_id": "small",
                "tier_index": 1,
                "unit_cost": 1,
                "prompt_profile": {"system_prompt": "", "reduced": True},
                "backend": {"kind": "replay", "store": "replay.json"},
            },
            {
                "tier_id": "medium",
                "tier_index": 2,
                "unit_cost": 10,
                "backend": {"kind": "replay", "store": "replay.json"},
            },
            {
                "tier_id": "large",
                "tier_index": 3,
                "unit_cost": 100,
                "backend": {"kind": "replay", "store": "replay.json"},
            },
        ],
        "verifier": {"kind": "stub", "table": "verdicts.json"},
        "classifier": {"kind": "replay", "path": "predictions.jsonl"},
    }


def write_fixture_files(base: Path) -> dict[str, Path]:
    """Materialize the whole fixture for CLI runs; returns the path map."""
    base.mkdir(parents=True, exist_ok=True)
    paths = {
        "raw": base / "raw_tasks.jsonl",
        "raw4": base / "raw_tasks_4.jsonl",
        "replay": base / "replay.json",
        "verdicts": base / "verdicts.json",
        "predictions": base / "predictions.jsonl",
        "config": base / "config.json",
    }
    paths["raw"].write_text("\n".join(raw_lines()) + "\n", encoding="utf-8")
    first_four = list(PROFILE_PLAN)[:4]
    paths["raw4"].write_text("\n".join(raw_lines(first_four)) + "\n", encoding="utf-8")
    paths["replay"].write_text(json.dumps(build_replay_store(), indent=1), encoding="utf-8")
    paths["verdicts"].write_text(
        json.dumps(build_stub_verifier().to_file_dict(), indent=1), encoding="utf-8"
    )
    paths["predictions"].write_text(
        "\n".join(json.dumps(r) for r in prediction_records()) + "\n", encoding="utf-8"
    )
    paths["config"].write_text(json.dumps(run_config_dict(base), indent=1), encoding="utf-8")
    return paths
