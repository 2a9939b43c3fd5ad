"""Stdin/stdout JSON-frame worker executing candidate code against assertions."""

from .runner import DEFAULT_TIMEOUT_MS, PROTOCOL_VERSION, execute, serve

__version__ = "0.1.0"
