"""Line-delimited JSON I/O with atomic writes.

Every artifact the pipeline emits goes through the atomic writers so an
interrupted run never leaves a truncated file for a downstream command.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import TierRouteError


class JsonLineError(TierRouteError):
    """A line in a JSONL file failed to parse."""


def dump_line(record: Any) -> str:
    return json.dumps(record, ensure_ascii=False)


def read_jsonl(path: str | Path) -> list[Any]:
    """Read a JSONL file strictly; any malformed line raises with its line number."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise JsonLineError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from exc
    return records


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, Any]]:
    """Yield (line_number, parsed_record) pairs, skipping blank lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield lineno, json.loads(line)


def _atomic_write(path: str | Path, write_body) -> None:
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            write_body(fh)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_jsonl_atomic(path: str | Path, records: Iterable[Any]) -> None:
    def body(fh):
        for record in records:
            fh.write(dump_line(record))
            fh.write("\n")

    _atomic_write(path, body)


def write_json_atomic(path: str | Path, obj: Any) -> None:
    def body(fh):
        fh.write(json.dumps(obj, ensure_ascii=False, indent=2))
        fh.write("\n")

    _atomic_write(path, body)


def write_text_atomic(path: str | Path, text: str) -> None:
    _atomic_write(path, lambda fh: fh.write(text))
