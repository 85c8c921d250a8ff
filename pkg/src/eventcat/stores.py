"""Append-only record-per-line stores shared by the pipeline stages.

Every stage artifact (raw events, clean events, predictions) is a UTF-8
JSONL file: one JSON object per line, ``\\n`` terminated. Appends never
rewrite existing lines, so two runs into the same file simply add up.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable, Iterable

log = logging.getLogger(__name__)


class StoreError(Exception):
    """The store file itself cannot be used (missing, unwritable)."""


def append_records(path: str | Path, records: Iterable[dict]) -> int:
    """Append records to a JSONL store, one write call per record.

    Returns the number of records written.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        written = 0
        with path.open("a", encoding="utf-8") as fh:
            for record in records:
                line = json.dumps(record, ensure_ascii=False, separators=(",", ":"))
                fh.write(line + "\n")
                written += 1
    except OSError as exc:
        raise StoreError(f"cannot append to store {path}: {exc}") from exc
    return written


def read_records(
    path: str | Path,
    on_corrupt: Callable[[int, str], None] | None = None,
) -> list[dict]:
    """Read a JSONL store in append order.

    Corrupt lines are skipped; each skip is reported through
    ``on_corrupt(line_number, message)``, defaulting to a log warning.
    Line numbers are 1-based.
    """
    path = Path(path)
    if on_corrupt is None:
        on_corrupt = lambda n, msg: log.warning("%s line %d skipped: %s", path, n, msg)
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StoreError(f"cannot read store {path}: {exc}") from exc

    records = []
    for number, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            on_corrupt(number, str(exc))
            continue
        if not isinstance(record, dict):
            on_corrupt(number, "record is not an object")
            continue
        records.append(record)
    return records
