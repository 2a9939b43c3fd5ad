"""Run configuration: tiers, mapping table, routing policy, defaults, paths.

One JSON or TOML file drives a whole run; validation collects every problem it
finds so an operator fixes the config in one pass instead of one error at a
time. Credentials never live in the file, only the name of the environment
variable holding them.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .backends import (
    Backend,
    DEFAULT_CONCURRENCY,
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    HttpChatBackend,
    LocalProcessBackend,
    ModelTier,
    PromptProfile,
    ReplayBackend,
    TierSet,
    TierSetError,
)
from .classifier import ClassifierAdapter, PromptClassifier, ReplayClassifier
from .errors import ConfigError
from .labeling import (
    DEFAULT_FIVE_LEVEL_CONFIG,
    DEFAULT_FIVE_LEVEL_TABLE,
    DEFAULT_TRIALS,
    FIVE_LEVEL_SCHEME,
    MappingRuleError,
    MappingTable,
    SCHEME_LEVELS,
    SINGLE_TRIAL_SCHEME,
)
from .router import PolicyError, RoutingPolicy, default_policy
from .verifier import (
    DEFAULT_POOL_SIZE,
    DEFAULT_TIMEOUT_MS,
    RunnerPool,
    StubVerifier,
    Verifier,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class RunConfig:
    tiers: TierSet
    mapping: MappingTable
    policy: RoutingPolicy
    scheme_id: str = FIVE_LEVEL_SCHEME
    trials: int = DEFAULT_TRIALS
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    concurrency: int = DEFAULT_CONCURRENCY
    verify_timeout_ms: int = DEFAULT_TIMEOUT_MS
    verifier_config: dict = field(default_factory=dict)
    classifier_config: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def resolve_path(self, value: str | Path) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path


def _read_config_file(path: Path) -> dict:
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_config(path: str | Path) -> RunConfig:
    """Load and validate a run config, raising ConfigError with every problem."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    try:
        raw = _read_config_file(path)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError([f"config file {path} failed to parse: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"config file {path} must hold an object/table at top level"])

    problems: list[str] = []
    base_dir = path.parent

    tiers = _load_tiers(raw, problems)
    scheme_id = str(raw.get("scheme_id", FIVE_LEVEL_SCHEME))
    if scheme_id not in SCHEME_LEVELS:
        problems.append(f"unknown scheme_id {scheme_id!r}; expected one of {sorted(SCHEME_LEVELS)}")
        scheme_id = FIVE_LEVEL_SCHEME
    mapping = _load_mapping(raw, tiers, scheme_id, problems)
    policy = _load_policy(raw, tiers, scheme_id, problems)

    defaults = raw.get("defaults", {})
    trials = _positive_int(defaults, "trials", DEFAULT_TRIALS, problems)
    max_tokens = _positive_int(defaults, "max_tokens", DEFAULT_MAX_TOKENS, problems)
    concurrency = _positive_int(defaults, "concurrency", DEFAULT_CONCURRENCY, problems)
    verify_timeout_ms = _positive_int(defaults, "verify_timeout_ms", DEFAULT_TIMEOUT_MS, problems)
    temperature = defaults.get("temperature", DEFAULT_TEMPERATURE)
    if not isinstance(temperature, (int, float)) or temperature < 0:
        problems.append(f"defaults.temperature must be a nonnegative number, got {temperature!r}")
        temperature = DEFAULT_TEMPERATURE

    verifier_config = dict(raw.get("verifier", {}))
    classifier_config = dict(raw.get("classifier", {}))
    paths = dict(raw.get("paths", {}))

    _check_referenced_files(raw, verifier_config, classifier_config, paths, base_dir, problems)

    if problems:
        raise ConfigError(problems)
    assert tiers is not None and mapping is not None and policy is not None
    return RunConfig(
        tiers=tiers,
        mapping=mapping,
        policy=policy,
        scheme_id=scheme_id,
        trials=trials,
        temperature=float(temperature),
        max_tokens=max_tokens,
        concurrency=concurrency,
        verify_timeout_ms=verify_timeout_ms,
        verifier_config=verifier_config,
        classifier_config=classifier_config,
        paths=paths,
        base_dir=base_dir,
    )


def _positive_int(section: Mapping, key: str, default: int, problems: list[str]) -> int:
    value = section.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        problems.append(f"defaults.{key} must be a positive integer, got {value!r}")
        return default
    return value


def _load_tiers(raw: Mapping, problems: list[str]) -> TierSet | None:
    tier_items = raw.get("tiers")
    if not isinstance(tier_items, list) or not tier_items:
        problems.append("config needs a non-empty 'tiers' list")
        return None
    tiers = []
    for pos, item in enumerate(tier_items):
        try:
            profile_cfg = item.get("prompt_profile", {})
            profile_kwargs = {}
            if "system_prompt" in profile_cfg:
                profile_kwargs["system_prompt"] = str(profile_cfg["system_prompt"])
            if "include_signature" in profile_cfg:
                profile_kwargs["include_signature"] = bool(profile_cfg["include_signature"])
            if "reduced" in profile_cfg:
                profile_kwargs["reduced"] = bool(profile_cfg["reduced"])
            tiers.append(
                ModelTier(
                    tier_id=str(item["tier_id"]),
                    tier_index=int(item["tier_index"]),
                    unit_cost=float(item["unit_cost"]),
                    prompt_profile=PromptProfile(**profile_kwargs),
                    backend_config=dict(item.get("backend", {})),
                )
            )
        except (KeyError, TypeError, ValueError, TierSetError) as exc:
            problems.append(f"tiers[{pos}]: {exc}")
    if len(tiers) != len(tier_items):
        return None
    try:
        return TierSet(tiers)
    except TierSetError as exc:
        problems.append(str(exc))
        return None


def _load_mapping(
    raw: Mapping, tiers: TierSet | None, scheme_id: str, problems: list[str]
) -> MappingTable | None:
    config = raw.get("mapping")
    if config is None and scheme_id == SINGLE_TRIAL_SCHEME:
        # Single-trial labeling is rule-based, not table-based; the table is
        # loaded only so five-level helpers stay available.
        return DEFAULT_FIVE_LEVEL_TABLE
    if config is None:
        config = DEFAULT_FIVE_LEVEL_CONFIG
    tier_count = len(tiers) if tiers is not None else 3
    try:
        table = MappingTable.from_config(config, scheme_id=scheme_id, tier_count=tier_count)
    except (MappingRuleError, TypeError, ValueError) as exc:
        problems.append(f"mapping: {exc}")
        return None
    allowed = set(SCHEME_LEVELS[scheme_id])
    strays = sorted(set(table.levels) - allowed)
    if strays:
        problems.append(f"mapping: levels {strays} are outside scheme {scheme_id!r}")
        return None
    return table


def _load_policy(
    raw: Mapping, tiers: TierSet | None, scheme_id: str, problems: list[str]
) -> RoutingPolicy | None:
    config = raw.get("policy")
    if tiers is None:
        return None
    try:
        policy = RoutingPolicy.from_config(config) if config else default_policy(tiers, scheme_id)
        policy.validate(SCHEME_LEVELS[scheme_id], tiers)
        return policy
    except PolicyError as exc:
        problems.append(f"policy: {exc}")
        return None


def _check_referenced_files(
    raw: Mapping,
    verifier_config: Mapping,
    classifier_config: Mapping,
    paths: Mapping,
    base_dir: Path,
    problems: list[str],
) -> None:
    def check(label: str, value: Any) -> None:
        if value is None:
            return
        candidate = Path(str(value))
        if not candidate.is_absolute():
            candidate = base_dir / candidate
        if not candidate.exists():
            problems.append(f"{label}: referenced file does not exist: {candidate}")

    for key, value in paths.items():
        if key.endswith("_out") or key == "out_dir":
            continue
        check(f"paths.{key}", value)
    if verifier_config.get("kind") == "stub":
        check("verifier.table", verifier_config.get("table"))
    if classifier_config.get("kind") == "replay":
        check("classifier.path", classifier_config.get("path"))
    for pos, item in enumerate(raw.get("tiers") or []):
        backend = item.get("backend", {}) if isinstance(item, Mapping) else {}
        if backend.get("kind") == "replay":
            check(f"tiers[{pos}].backend.store", backend.get("store"))


def build_backends(config: RunConfig, *, replay_store: str | Path | None = None) -> dict[str, Backend]:
    """Instantiate one backend per tier; a replay_store override points every
    tier at the same recorded store.

    Paths inside the config resolve against the config file's directory;
    the override is a caller-supplied path and is used as given.
    """
    if replay_store is not None:
        shared = ReplayBackend.from_file(replay_store)
        return {tier.tier_id: shared for tier in config.tiers}
    backends: dict[str, Backend] = {}
    problems: list[str] = []
    for tier in config.tiers:
        backend_config = tier.backend_config
        kind = backend_config.get("kind")
        if kind == "replay":
            store = backend_config.get("store")
            if store is None:
                problems.append(f"tier {tier.tier_id}: replay backend needs 'store'")
                continue
            backends[tier.tier_id] = ReplayBackend.from_file(config.resolve_path(store))
        elif kind == "http":
            api_key = None
            key_env = backend_config.get("api_key_env")
            if key_env:
                api_key = os.environ.get(str(key_env))
                if api_key is None:
                    problems.append(
                        f"tier {tier.tier_id}: environment variable {key_env!r} is not set"
                    )
            backends[tier.tier_id] = HttpChatBackend(
                base_url=str(backend_config.get("base_url", "")),
                model=str(backend_config.get("model", "")),
                api_key=api_key,
            )
            if not backend_config.get("base_url"):
                problems.append(f"tier {tier.tier_id}: http backend needs 'base_url'")
        elif kind == "local":
            command = backend_config.get("command")
            if not isinstance(command, list) or not command:
                problems.append(f"tier {tier.tier_id}: local backend needs a 'command' list")
                continue
            backends[tier.tier_id] = LocalProcessBackend([str(part) for part in command])
        else:
            problems.append(
                f"tier {tier.tier_id}: backend kind must be replay/http/local, got {kind!r}"
            )
    if problems:
        raise ConfigError(problems)
    return backends


def build_verifier(config: RunConfig) -> Verifier:
    kind = config.verifier_config.get("kind", "stub")
    if kind == "stub":
        table = config.verifier_config.get("table")
        if table is None:
            raise ConfigError(["verifier: stub verifier needs a 'table' file"])
        return StubVerifier.from_file(config.resolve_path(table))
    if kind == "runner":
        command = config.verifier_config.get("command")
        if not isinstance(command, list) or not command:
            raise ConfigError(["verifier: runner verifier needs a 'command' list"])
        pool_size = int(config.verifier_config.get("pool_size", DEFAULT_POOL_SIZE))
        return RunnerPool([str(part) for part in command], size=pool_size)
    raise ConfigError([f"verifier: kind must be stub or runner, got {kind!r}"])


def build_classifier(
    config: RunConfig,
    backends: Mapping[str, Backend] | None = None,
    *,
    predictions_path: str | Path | None = None,
) -> ClassifierAdapter:
    if predictions_path is not None:
        return ReplayClassifier.from_file(predictions_path)
    kind = config.classifier_config.get("kind")
    if kind == "replay":
        path = config.classifier_config.get("path")
        if path is None:
            raise ConfigError(["classifier: replay classifier needs 'path'"])
        return ReplayClassifier.from_file(config.resolve_path(path))
    if kind == "prompt":
        tier_id = config.classifier_config.get("tier_id")
        if not tier_id or backends is None or str(tier_id) not in backends:
            raise ConfigError(["classifier: prompt classifier needs a 'tier_id' with a built backend"])
        return PromptClassifier(
            backends[str(tier_id)],
            str(tier_id),
            levels=SCHEME_LEVELS[config.scheme_id],
            temperature=float(config.classifier_config.get("temperature", 0.0)),
        )
    raise ConfigError([f"classifier: kind must be replay or prompt, got {kind!r}"])
