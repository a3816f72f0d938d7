"""Read and write event streams as CSV or NDJSON.

Both formats use the fields ``i, timestamp, subject_id, group, y``.
Timestamps are RFC 3339; a missing offset is read as UTC.
"""

from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, TextIO

from seqmon.errors import DataError, SeqmonError
from seqmon.monitor import Event

FIELDS = ("i", "timestamp", "subject_id", "group", "y")


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _event(record: dict, lineno: int) -> Event:
    try:
        missing = [f for f in FIELDS if f not in record]
        if missing:
            raise DataError(f"missing fields {missing}")
        y = float(record["y"])
        if not math.isfinite(y):
            raise DataError(f"non-finite outcome {record['y']!r}")
        return Event(
            index=int(record["i"]),
            timestamp=parse_timestamp(str(record["timestamp"])),
            subject_id=str(record["subject_id"]),
            group=str(record["group"]).strip(),
            outcome=y,
        )
    except (SeqmonError, ValueError, TypeError) as exc:
        raise DataError(f"line {lineno}: {exc}") from exc


def read_events_csv(fh: TextIO) -> list[Event]:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        return []
    header = [h.strip() for h in reader.fieldnames]
    if tuple(header) != FIELDS:
        raise DataError(f"line 1: expected header {','.join(FIELDS)}, got {','.join(header)}")
    reader.fieldnames = header
    # header is line 1, so the first record is line 2
    return [_event(row, n) for n, row in enumerate(reader, 2)]


def read_events_ndjson(fh: TextIO) -> list[Event]:
    out = []
    for n, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {n}: invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise DataError(f"line {n}: expected a JSON object")
        out.append(_event(record, n))
    return out


def detect_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    return "ndjson" if suffix in (".ndjson", ".jsonl", ".json") else "csv"


def read_events(path: str | Path, fmt: str | None = None) -> list[Event]:
    fmt = fmt or detect_format(path)
    with open(path, newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            return read_events_csv(fh)
        if fmt == "ndjson":
            return read_events_ndjson(fh)
    raise DataError(f"unknown event format {fmt!r}")


def write_events_csv(events: Iterable[Event], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(FIELDS)
    for e in events:
        writer.writerow([e.index, format_timestamp(e.timestamp), e.subject_id, e.group, repr(e.outcome)])


def write_events_ndjson(events: Iterable[Event], fh: TextIO) -> None:
    for e in events:
        record = dict(zip(FIELDS, (e.index, format_timestamp(e.timestamp), e.subject_id, e.group, e.outcome)))
        fh.write(json.dumps(record) + "\n")


def events_to_csv(events: Iterable[Event]) -> str:
    buf = io.StringIO()
    write_events_csv(events, buf)
    return buf.getvalue()
