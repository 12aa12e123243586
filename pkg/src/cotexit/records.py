"""JSONL record streams: a header, data lines, a summary footer.

Every line is a JSON object with sorted keys and a ``record`` tag.  The only
wall-clock value anywhere is ``created_at`` in the header, so two runs with
the same resolved config and inputs differ in that field alone.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, TextIO

from . import __version__
from .controller import EpisodeResult

__all__ = [
    "dumps",
    "file_digest",
    "make_header",
    "JsonlWriter",
    "read_episodes",
    "read_jsonl",
    "strip_volatile",
]


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, allow_nan=False)


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def make_header(command: str, config: Mapping[str, Any], inputs: Iterable[str | Path], **extra: Any) -> dict[str, Any]:
    return {
        "record": "header",
        "tool": "cotexit",
        "version": __version__,
        "command": command,
        "config": dict(config),
        "inputs": [{"path": str(p), "sha256": file_digest(p)} for p in inputs],
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        **extra,
    }


def strip_volatile(line: str) -> str:
    """Drop ``created_at`` from a header line; other lines pass through."""
    obj = json.loads(line)
    if obj.get("record") == "header":
        obj.pop("created_at", None)
        return dumps(obj)
    return line.rstrip("\n")


class JsonlWriter:
    def __init__(self, fh: TextIO) -> None:
        self.fh = fh

    def write(self, record: str, body: Mapping[str, Any]) -> None:
        self.fh.write(dumps({"record": record, **body}) + "\n")

    def header(self, header: Mapping[str, Any]) -> None:
        self.fh.write(dumps(header) + "\n")


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict | Exception]]:
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("line is not a JSON object")
                yield no, obj
            except ValueError as exc:
                yield no, exc


def read_episodes(path: str | Path) -> Iterator[tuple[int, EpisodeResult | Exception]]:
    """Episode lines from a replay/run output; header, summary and partial lines are skipped."""
    for no, obj in read_jsonl(path):
        if isinstance(obj, Exception):
            yield no, obj
            continue
        if obj.get("record") in ("header", "summary", "partial"):
            continue
        try:
            yield no, EpisodeResult.from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            yield no, exc
