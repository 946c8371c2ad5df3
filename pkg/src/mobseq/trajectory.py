"""Mobile trajectories and the off-to-on re-engagement switch rate.

A trajectory discretizes one (user, date, timespan window) into fixed-width
slots over {OFF, ON}; a slot is ON when any session overlaps it. The switch
rate over a set of trajectories is

    rate = sum_t n_{t,t+1}(OFF, ON) / sum_t n_t(OFF),   t = 1..L-1,

where n_t(OFF) counts trajectories that have OFF at position t and do not
end there, and L is the maximal observed trajectory length.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta
from zoneinfo import ZoneInfo

import numpy as np

from .errors import DataValidationError
from .sessions import Session

OFF, ON = 0, 1

DAY_MIN = 24 * 60


@dataclass(frozen=True)
class TimespanWindow:
    """One of the five circadian windows, as minutes since local midnight."""

    label: str
    start_min: int
    end_min: int

    @property
    def length_s(self) -> int:
        return (self.end_min - self.start_min) * 60


DEFAULT_WINDOWS = (
    TimespanWindow("small", 0, 480),
    TimespanWindow("morning", 480, 720),
    TimespanWindow("midday", 720, 840),
    TimespanWindow("afternoon", 840, 1080),
    TimespanWindow("evening", 1080, 1440),
)

TIMESPAN_ORDER = tuple(w.label for w in DEFAULT_WINDOWS)


def check_windows(windows: tuple[TimespanWindow, ...]) -> None:
    """The windows must partition the 24-hour day without gaps or overlap."""
    cursor = 0
    for w in windows:
        if w.start_min != cursor or w.end_min <= w.start_min:
            raise DataValidationError("timespan windows must partition the day contiguously")
        cursor = w.end_min
    if cursor != DAY_MIN:
        raise DataValidationError("timespan windows must cover exactly 24 hours")


@dataclass
class Trajectory:
    user_id: str
    date: date
    timespan: str
    slots: np.ndarray  # uint8 over {OFF, ON}

    @property
    def length(self) -> int:
        return int(self.slots.size)


def _local_parts(ms: int, tz: ZoneInfo) -> tuple[date, int]:
    """Civil date and millisecond-of-day for an epoch-ms instant."""
    dt = datetime.fromtimestamp(ms / 1000.0, tz=tz)
    ms_of_day = ((dt.hour * 60 + dt.minute) * 60 + dt.second) * 1000 + dt.microsecond // 1000
    return dt.date(), ms_of_day


def build_trajectories(
    sessions: dict[str, list[Session]],
    windows: tuple[TimespanWindow, ...] = DEFAULT_WINDOWS,
    slot_width_s: int = 60,
    tz_name: str = "UTC",
) -> list[Trajectory]:
    """One trajectory per (user, active date, window), slots marked by overlap.

    Session intervals are half-open [start, end); zero-duration sessions mark
    the slot containing their instant. A session crossing a window or date
    boundary marks slots in every window it overlaps. A date is active for a
    user when at least one of their sessions touches it.
    """
    check_windows(windows)
    for w in windows:
        if w.length_s % slot_width_s != 0:
            raise DataValidationError(
                f"slot width {slot_width_s}s does not divide window {w.label!r}"
            )
    tz = ZoneInfo(tz_name)
    slot_ms = slot_width_s * 1000
    day_ms = DAY_MIN * 60 * 1000

    out: list[Trajectory] = []
    for user_id in sorted(sessions):
        user_sessions = sessions[user_id]
        if not user_sessions:
            continue
        # Slot occupancy per active civil date, as one full-day bool array.
        days: dict[date, np.ndarray] = {}
        n_day_slots = day_ms // slot_ms
        for s in user_sessions:
            d0, start_ms = _local_parts(s.start, tz)
            end_total = start_ms + max(s.end - s.start, 1)  # point sessions fill one instant
            day = d0
            offset = start_ms
            remaining = end_total - start_ms
            while remaining > 0:
                chunk = min(remaining, day_ms - offset)
                slots = days.setdefault(day, np.zeros(n_day_slots, dtype=np.uint8))
                first = offset // slot_ms
                last = (offset + chunk - 1) // slot_ms
                slots[first : last + 1] = ON
                remaining -= chunk
                day = day + timedelta(days=1)
                offset = 0
        for day in sorted(days):
            day_slots = days[day]
            for w in windows:
                a = (w.start_min * 60 * 1000) // slot_ms
                b = (w.end_min * 60 * 1000) // slot_ms
                out.append(
                    Trajectory(
                        user_id=user_id, date=day, timespan=w.label, slots=day_slots[a:b].copy()
                    )
                )
    return out


def switch_rate(
    trajectories: list[np.ndarray], from_state: int = OFF, to_state: int = ON
) -> tuple[float | None, int]:
    """Position-averaged switch probability over a trajectory set.

    Returns (rate, denominator); rate is None when no counted position holds
    the source state. Trajectories may have ragged lengths; a trajectory
    contributes to position t only if it extends past t.
    """
    if not trajectories:
        raise DataValidationError("switch_rate requires at least one trajectory")
    numer = 0
    denom = 0
    for t in trajectories:
        if t.size < 2:
            continue
        # Positions 1..len-1: a trajectory is counted at t only while it
        # extends past t, which slicing off the last element realizes.
        src = t[:-1] == from_state
        denom += int(src.sum())
        numer += int((src & (t[1:] == to_state)).sum())
    if denom == 0:
        return None, 0
    return numer / denom, denom


@dataclass(frozen=True)
class SwitchRateRecord:
    user_id: str
    date: date
    timespan: str
    rate: float
    n_off_positions: int


def reengagement_records(
    trajectories: list[Trajectory],
) -> tuple[list[SwitchRateRecord], int]:
    """Per (user, date, timespan) switch rates; undefined groups are excluded.

    Returns the records in deterministic (user, date, timespan) order plus
    the count of excluded groups (zero OFF-position denominators).
    """
    groups: dict[tuple[str, date, str], list[np.ndarray]] = {}
    for t in trajectories:
        groups.setdefault((t.user_id, t.date, t.timespan), []).append(t.slots)

    span_rank = {label: i for i, label in enumerate(TIMESPAN_ORDER)}
    records: list[SwitchRateRecord] = []
    excluded = 0
    for key in sorted(groups, key=lambda k: (k[0], k[1], span_rank.get(k[2], 99))):
        rate, denom = switch_rate(groups[key])
        if rate is None:
            excluded += 1
            continue
        records.append(
            SwitchRateRecord(
                user_id=key[0], date=key[1], timespan=key[2], rate=rate, n_off_positions=denom
            )
        )
    return records, excluded
