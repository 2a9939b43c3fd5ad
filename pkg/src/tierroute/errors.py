"""Shared exception types."""

from __future__ import annotations


class TierRouteError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TierRouteError):
    """Invalid run configuration. Carries every problem found, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))
