"""Canonical data model: app-use events, per-user event logs, user profiles.

Timestamps are stored as integer epoch milliseconds UTC; input offsets are
converted at parse time so gap and window arithmetic is unambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataValidationError

GENDERS = ("male", "female")
AGE_GROUPS = ("18-20", "21-30", "31-40", "41-50", "51-64")
EDUCATION_LEVELS = ("low", "medium", "high")
OCCUPATIONS = ("managers", "professionals", "clerks", "workers", "students", "unemployed")


@dataclass(frozen=True, slots=True)
class AppEvent:
    """One discrete app use: category plus start/end instants (epoch ms UTC)."""

    user_id: str
    category: str
    start: int
    end: int

    def __post_init__(self):
        if self.end < self.start:
            raise DataValidationError(
                f"event end < start ({self.end} < {self.start}) for user {self.user_id!r}"
            )

    @property
    def duration_ms(self) -> int:
        return self.end - self.start

    @property
    def duration_s(self) -> float:
        return (self.end - self.start) / 1000.0


class EventLog:
    """Per-user, start-sorted collections of :class:`AppEvent`.

    Construction sorts each user's events by (start, end, category); it does
    not enforce non-overlap — that is :func:`mobseq.ingest.validate_log`'s job.
    """

    def __init__(self, events: dict[str, list[AppEvent]] | None = None):
        self._events: dict[str, list[AppEvent]] = {}
        if events:
            for user_id in sorted(events):
                self._events[user_id] = sorted(
                    events[user_id], key=lambda e: (e.start, e.end, e.category)
                )

    @classmethod
    def from_events(cls, events: list[AppEvent]) -> "EventLog":
        by_user: dict[str, list[AppEvent]] = {}
        for ev in events:
            by_user.setdefault(ev.user_id, []).append(ev)
        return cls(by_user)

    def users(self) -> list[str]:
        return list(self._events)

    def events_for(self, user_id: str) -> list[AppEvent]:
        return self._events.get(user_id, [])

    def all_events(self) -> list[AppEvent]:
        out: list[AppEvent] = []
        for user_id in self._events:
            out.extend(self._events[user_id])
        return out

    def n_events(self) -> int:
        return sum(len(v) for v in self._events.values())

    def n_users(self) -> int:
        return len(self._events)

    def __eq__(self, other) -> bool:
        return isinstance(other, EventLog) and self._events == other._events

    def __repr__(self) -> str:
        return f"EventLog(users={self.n_users()}, events={self.n_events()})"


@dataclass(frozen=True, slots=True)
class UserProfile:
    """Demographic profile drawn from closed level sets."""

    user_id: str
    gender: str
    age_group: str
    education: str
    occupation: str

    def __post_init__(self):
        for value, levels, name in (
            (self.gender, GENDERS, "gender"),
            (self.age_group, AGE_GROUPS, "age_group"),
            (self.education, EDUCATION_LEVELS, "education"),
            (self.occupation, OCCUPATIONS, "occupation"),
        ):
            if value not in levels:
                raise DataValidationError(f"unknown level label {value!r} for {name}")


@dataclass
class ValidationReport:
    """Bookkeeping for a validation pass; counts obey rows_in = rows_out + dropped."""

    events_in: int = 0
    events_out: int = 0
    overlaps: int = 0
    dropped: int = 0
    clipped: int = 0
    zero_duration_retained: int = 0
    entries: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "events_in": self.events_in,
            "events_out": self.events_out,
            "overlaps": self.overlaps,
            "dropped": self.dropped,
            "clipped": self.clipped,
            "zero_duration_retained": self.zero_duration_retained,
            "entries": list(self.entries),
        }
