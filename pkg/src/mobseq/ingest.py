"""Parsing and validation of event logs and demographic profiles.

Events CSV schema: ``user_id,category,start,end`` with timestamps either
ISO-8601 (offset-aware or naive-as-UTC) or integer epoch milliseconds.
JSONL carries one object per event with the same keys. Profiles CSV schema:
``user_id,gender,age_group,education,occupation``.

Malformed rows never abort a parse; they are collected into the result's
error list and valid rows are retained.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable

from .categories import DEFAULT_CATALOG, CategoryCatalog
from .errors import DataValidationError
from .events import AppEvent, EventLog, UserProfile, ValidationReport

EVENT_COLUMNS = ("user_id", "category", "start", "end")
PROFILE_COLUMNS = ("user_id", "gender", "age_group", "education", "occupation")


@dataclass
class RowError:
    row: int
    message: str

    def as_dict(self) -> dict:
        return {"row": self.row, "message": self.message}


@dataclass
class ParseResult:
    """Valid rows plus row-level errors; rows_in = rows_valid + rows_rejected."""

    log: EventLog
    rows_in: int = 0
    rows_valid: int = 0
    errors: list[RowError] = field(default_factory=list)

    @property
    def rows_rejected(self) -> int:
        return len(self.errors)


@dataclass
class ProfileParseResult:
    profiles: dict[str, UserProfile]
    rows_in: int = 0
    errors: list[RowError] = field(default_factory=list)


def parse_timestamp(value: str) -> int:
    """Parse an ISO-8601 string or integer epoch-ms literal into epoch ms UTC.

    Naive ISO timestamps are taken as UTC. Fractional seconds are truncated
    to millisecond precision.
    """
    text = value.strip()
    if not text:
        raise DataValidationError("empty timestamp")
    try:
        return int(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise DataValidationError(f"unparseable timestamp {value!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def format_timestamp_ms(ms: int) -> str:
    """Epoch ms as the canonical serialized form (integer literal)."""
    return str(int(ms))


def _decode(stream: IO[bytes] | IO[str]) -> IO[str]:
    data = stream.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataValidationError(f"stream is not valid UTF-8: {exc}") from None
    return io.StringIO(data)


def _event_from_fields(row_no, fields, catalog) -> AppEvent | RowError:
    user_id = str(fields.get("user_id", "")).strip()
    if not user_id:
        return RowError(row_no, "missing user_id")
    category = str(fields.get("category", "")).strip()
    if category not in catalog:
        return RowError(row_no, f"unknown category {category!r}")
    try:
        start = parse_timestamp(str(fields["start"]))
        end = parse_timestamp(str(fields["end"]))
    except (KeyError, DataValidationError) as exc:
        return RowError(row_no, f"bad timestamp: {exc}")
    if end < start:
        return RowError(row_no, f"end < start ({end} < {start})")
    return AppEvent(user_id=user_id, category=category, start=start, end=end)


def parse_events(
    stream: IO[bytes] | IO[str],
    format: str = "csv",
    catalog: CategoryCatalog = DEFAULT_CATALOG,
) -> ParseResult:
    """Parse an events stream into a per-user sorted :class:`EventLog`.

    ``format`` is ``csv`` (header required) or ``jsonl``. Rows with unknown
    categories, unparseable timestamps, or end < start become row errors.
    """
    text = _decode(stream)
    events: list[AppEvent] = []
    errors: list[RowError] = []
    rows_in = 0

    if format == "csv":
        reader = csv.DictReader(text)
        if reader.fieldnames is None:
            raise DataValidationError("events CSV is empty")
        missing = set(EVENT_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise DataValidationError(f"events CSV missing columns: {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            rows_in += 1
            out = _event_from_fields(row_no, row, catalog)
            (events if isinstance(out, AppEvent) else errors).append(out)
    elif format == "jsonl":
        for row_no, line in enumerate(text, start=1):
            if not line.strip():
                continue
            rows_in += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(RowError(row_no, f"invalid JSON: {exc.msg}"))
                continue
            if not isinstance(obj, dict):
                errors.append(RowError(row_no, "JSONL line is not an object"))
                continue
            out = _event_from_fields(row_no, obj, catalog)
            (events if isinstance(out, AppEvent) else errors).append(out)
    else:
        raise DataValidationError(f"unknown event format {format!r} (expected csv or jsonl)")

    return ParseResult(
        log=EventLog.from_events(events),
        rows_in=rows_in,
        rows_valid=len(events),
        errors=errors,
    )


def validate_log(log: EventLog, overlap_policy: str = "reject") -> tuple[EventLog, ValidationReport]:
    """Resolve same-user temporal overlaps; returns the cleaned log plus a report.

    ``reject`` drops both members of every overlapping pair; ``clip``
    truncates the earlier event's end to the later event's start. Zero-duration
    events are retained and counted.
    """
    if overlap_policy not in ("reject", "clip"):
        raise DataValidationError(f"unknown overlap_policy {overlap_policy!r}")

    report = ValidationReport(events_in=log.n_events())
    cleaned: dict[str, list[AppEvent]] = {}

    for user_id in log.users():
        events = log.events_for(user_id)
        if overlap_policy == "clip":
            kept: list[AppEvent] = []
            for i, ev in enumerate(events):
                end = ev.end
                if i + 1 < len(events) and end > events[i + 1].start:
                    end = events[i + 1].start
                    report.overlaps += 1
                    report.clipped += 1
                    report.entries.append(
                        f"user {user_id}: clipped event at {ev.start} from end {ev.end} to {end}"
                    )
                kept.append(AppEvent(ev.user_id, ev.category, ev.start, max(end, ev.start)))
        else:
            # Sweep marking both parties of every overlap, including
            # containment that adjacency alone would miss.
            drop = [False] * len(events)
            max_end = -1
            max_end_idx = -1
            for i, ev in enumerate(events):
                if i > 0 and ev.start < max_end:
                    drop[i] = True
                    drop[max_end_idx] = True
                    report.overlaps += 1
                    report.entries.append(
                        f"user {user_id}: overlap between events starting at "
                        f"{events[max_end_idx].start} and {ev.start}; both dropped"
                    )
                if ev.end > max_end:
                    max_end = ev.end
                    max_end_idx = i
            kept = [ev for ev, d in zip(events, drop) if not d]
            report.dropped += sum(drop)

        report.zero_duration_retained += sum(1 for ev in kept if ev.duration_ms == 0)
        if kept:
            cleaned[user_id] = kept

    out = EventLog(cleaned)
    report.events_out = out.n_events()
    return out, report


def parse_profiles(stream: IO[bytes] | IO[str]) -> ProfileParseResult:
    """Parse a profiles CSV; duplicate user_id and unknown levels are row errors."""
    text = _decode(stream)
    reader = csv.DictReader(text)
    if reader.fieldnames is None:
        raise DataValidationError("profiles CSV is empty")
    missing = set(PROFILE_COLUMNS) - set(reader.fieldnames)
    if missing:
        raise DataValidationError(f"profiles CSV missing columns: {sorted(missing)}")

    profiles: dict[str, UserProfile] = {}
    errors: list[RowError] = []
    rows_in = 0
    for row_no, row in enumerate(reader, start=2):
        rows_in += 1
        user_id = str(row.get("user_id", "")).strip()
        if not user_id:
            errors.append(RowError(row_no, "missing user_id"))
            continue
        if user_id in profiles:
            errors.append(RowError(row_no, f"duplicate user_id {user_id!r}"))
            continue
        try:
            profiles[user_id] = UserProfile(
                user_id=user_id,
                gender=str(row.get("gender", "")).strip(),
                age_group=str(row.get("age_group", "")).strip(),
                education=str(row.get("education", "")).strip(),
                occupation=str(row.get("occupation", "")).strip(),
            )
        except DataValidationError as exc:
            errors.append(RowError(row_no, str(exc)))
    return ProfileParseResult(profiles=profiles, rows_in=rows_in, errors=errors)


def missing_profiles(log: EventLog, profiles: dict[str, UserProfile]) -> list[str]:
    """Users present in the log but absent from the profile table."""
    return [u for u in log.users() if u not in profiles]


def write_events_csv(log: EventLog, stream: IO[str]) -> None:
    """Serialize a log with epoch-ms timestamps; round-trips exactly."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EVENT_COLUMNS)
    for ev in log.all_events():
        writer.writerow([ev.user_id, ev.category, format_timestamp_ms(ev.start), format_timestamp_ms(ev.end)])


def write_profiles_csv(profiles: Iterable[UserProfile], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(PROFILE_COLUMNS)
    for p in sorted(profiles, key=lambda p: p.user_id):
        writer.writerow([p.user_id, p.gender, p.age_group, p.education, p.occupation])
