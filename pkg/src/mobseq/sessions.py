"""Session construction from per-user event streams.

A session is an uninterrupted run of app uses: every internal idle gap
(next start minus previous end) is strictly below the user's threshold,
which defaults to the median of that user's inter-event gaps. A gap equal
to the threshold splits.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from enum import Enum

from .errors import DataValidationError
from .events import AppEvent, EventLog

DEFAULT_THRESHOLD_S = 60.0


class SessionKind(Enum):
    SOLO_ONCE = "SoloOnce"
    SOLO_REPEATED = "SoloRepeated"
    MULTI = "Multi"


@dataclass(frozen=True, slots=True)
class Session:
    """A maximal run of events whose internal gaps are all below threshold.

    ``n_transitions`` counts spell boundaries, i.e. adjacent category
    changes; repeated uses of one category add events but no transitions.
    """

    user_id: str
    events: tuple[AppEvent, ...]

    @property
    def start(self) -> int:
        return self.events[0].start

    @property
    def end(self) -> int:
        return self.events[-1].end

    @property
    def duration_s(self) -> float:
        return (self.end - self.start) / 1000.0

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(ev.category for ev in self.events)

    @property
    def n_transitions(self) -> int:
        return sum(
            1 for a, b in zip(self.events, self.events[1:]) if a.category != b.category
        )

    @property
    def kind(self) -> SessionKind:
        return classify_session(self)


def inter_event_gaps(events: list[AppEvent]) -> list[float]:
    """Idle gaps in seconds between consecutive events of one user.

    Gap i = start of event i+1 minus end of event i. Fewer than two events
    yield an empty list.
    """
    if len(events) < 2:
        return []
    gaps = []
    for prev, nxt in zip(events, events[1:]):
        gap = (nxt.start - prev.end) / 1000.0
        if gap < 0:
            raise DataValidationError(
                f"negative gap for user {prev.user_id!r}: events overlap; validate the log first"
            )
        gaps.append(gap)
    return gaps


def median_threshold(gaps: list[float], default: float = DEFAULT_THRESHOLD_S) -> float:
    """Median gap; even counts take the midpoint of the central pair.

    An empty input falls back to ``default`` (users with fewer than two
    events have no gaps to summarize).
    """
    if not gaps:
        return float(default)
    return float(statistics.median(gaps))


def sessionize(events: list[AppEvent], threshold_s: float) -> list[Session]:
    """Split one user's sorted events into sessions at gaps >= threshold.

    Grouping rule is strict: a gap groups two events into one session iff
    gap < threshold. Concatenating the sessions reproduces the stream.
    """
    if threshold_s < 0:
        raise DataValidationError(f"threshold must be >= 0, got {threshold_s}")
    if not events:
        return []
    sessions: list[Session] = []
    current = [events[0]]
    for prev, nxt in zip(events, events[1:]):
        gap = (nxt.start - prev.end) / 1000.0
        if gap < threshold_s:
            current.append(nxt)
        else:
            sessions.append(Session(user_id=events[0].user_id, events=tuple(current)))
            current = [nxt]
    sessions.append(Session(user_id=events[0].user_id, events=tuple(current)))
    return sessions


def classify_session(session: Session) -> SessionKind:
    """SoloOnce (1 event), SoloRepeated (>=2 events, one category), else Multi."""
    if session.n_events == 1:
        return SessionKind.SOLO_ONCE
    if len(set(session.categories)) == 1:
        return SessionKind.SOLO_REPEATED
    return SessionKind.MULTI


def user_thresholds(log: EventLog, default: float = DEFAULT_THRESHOLD_S) -> dict[str, float]:
    """Per-user median thresholds over each user's full observation window."""
    return {
        user_id: median_threshold(inter_event_gaps(log.events_for(user_id)), default)
        for user_id in log.users()
    }


def sessionize_log(
    log: EventLog, default_threshold: float = DEFAULT_THRESHOLD_S
) -> tuple[dict[str, list[Session]], dict[str, float]]:
    """Sessionize every user with their own median threshold."""
    thresholds = user_thresholds(log, default_threshold)
    sessions = {
        user_id: sessionize(log.events_for(user_id), thresholds[user_id])
        for user_id in log.users()
    }
    return sessions, thresholds
