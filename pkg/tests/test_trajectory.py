from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobseq.errors import DataValidationError
from mobseq.events import AppEvent
from mobseq.sessions import Session
from mobseq.trajectory import (
    DEFAULT_WINDOWS,
    OFF,
    ON,
    build_trajectories,
    check_windows,
    reengagement_records,
    switch_rate,
)
from oracles import switch_rate_counter

DAY_MS = 86_400_000


def session_at(start_ms, end_ms, user="u1", category="SNS"):
    return Session(user, (AppEvent(user, category, start_ms, end_ms),))


def arr(*states):
    return np.array(states, dtype=np.uint8)


class TestWindows:
    def test_default_windows_partition_day(self):
        check_windows(DEFAULT_WINDOWS)
        assert sum(w.end_min - w.start_min for w in DEFAULT_WINDOWS) == 1440
        assert [w.label for w in DEFAULT_WINDOWS] == [
            "small",
            "morning",
            "midday",
            "afternoon",
            "evening",
        ]

    def test_bad_partition_rejected(self):
        from mobseq.trajectory import TimespanWindow

        with pytest.raises(DataValidationError):
            check_windows((TimespanWindow("a", 0, 100), TimespanWindow("b", 200, 1440)))


class TestBuildTrajectories:
    def test_midday_session_marks_first_slots(self):
        # 12:00 - 12:02 UTC
        s = session_at(12 * 3_600_000, 12 * 3_600_000 + 120_000)
        trajectories = build_trajectories({"u1": [s]})
        midday = next(t for t in trajectories if t.timespan == "midday")
        assert midday.slots[:3].tolist() == [ON, ON, OFF]
        assert midday.slots.sum() == 2
        assert midday.length == 120

    def test_all_five_windows_emitted_for_active_day(self):
        s = session_at(1000, 2000)
        trajectories = build_trajectories({"u1": [s]})
        assert sorted(t.timespan for t in trajectories) == sorted(
            w.label for w in DEFAULT_WINDOWS
        )
        assert all(t.date == date(1970, 1, 1) for t in trajectories)

    def test_no_sessions_no_trajectories(self):
        assert build_trajectories({"u1": []}) == []

    def test_boundary_crossing_marks_both_windows(self):
        # 11:59 - 12:01 UTC crosses morning -> midday
        s = session_at(11 * 3_600_000 + 59 * 60_000, 12 * 3_600_000 + 60_000)
        trajectories = build_trajectories({"u1": [s]})
        morning = next(t for t in trajectories if t.timespan == "morning")
        midday = next(t for t in trajectories if t.timespan == "midday")
        assert morning.slots[-1] == ON
        assert midday.slots[0] == ON
        assert midday.slots[1] == OFF

    def test_half_open_end_boundary(self):
        # Ends exactly at 12:00; the first midday slot must stay OFF.
        s = session_at(11 * 3_600_000, 12 * 3_600_000)
        trajectories = build_trajectories({"u1": [s]})
        midday = next(t for t in trajectories if t.timespan == "midday")
        assert midday.slots[0] == OFF

    def test_zero_duration_session_marks_single_slot(self):
        s = session_at(10 * 3_600_000, 10 * 3_600_000)
        trajectories = build_trajectories({"u1": [s]})
        morning = next(t for t in trajectories if t.timespan == "morning")
        assert morning.slots[120] == ON  # 10:00 is 120 min into the window
        assert morning.slots.sum() == 1

    def test_midnight_crossing_emits_both_days(self):
        s = session_at(DAY_MS - 60_000, DAY_MS + 60_000)
        trajectories = build_trajectories({"u1": [s]})
        days = {t.date for t in trajectories}
        assert days == {date(1970, 1, 1), date(1970, 1, 2)}
        d1_evening = next(
            t for t in trajectories if t.date == date(1970, 1, 1) and t.timespan == "evening"
        )
        d2_small = next(
            t for t in trajectories if t.date == date(1970, 1, 2) and t.timespan == "small"
        )
        assert d1_evening.slots[-1] == ON
        assert d2_small.slots[0] == ON

    def test_slot_width_must_divide_windows(self):
        with pytest.raises(DataValidationError):
            build_trajectories({"u1": [session_at(0, 1000)]}, slot_width_s=7)

    def test_refining_slot_width_preserves_groups(self):
        s = session_at(1000, 400_000)
        coarse = build_trajectories({"u1": [s]}, slot_width_s=120)
        fine = build_trajectories({"u1": [s]}, slot_width_s=60)
        assert {(t.user_id, t.date, t.timespan) for t in coarse} == {
            (t.user_id, t.date, t.timespan) for t in fine
        }

    def test_timezone_shifts_windows(self):
        # 23:30 UTC is 07:30 in +08:00: small hours there, evening in UTC.
        s = session_at(23 * 3_600_000 + 30 * 60_000, 23 * 3_600_000 + 31 * 60_000)
        utc = build_trajectories({"u1": [s]})
        hk = build_trajectories({"u1": [s]}, tz_name="Etc/GMT-8")
        assert next(t for t in utc if t.slots.any()).timespan == "evening"
        on_hk = next(t for t in hk if t.slots.any())
        assert on_hk.timespan == "small"
        assert on_hk.date == date(1970, 1, 2)


class TestSwitchRate:
    def test_alternating_trajectory(self):
        rate, denom = switch_rate([arr(OFF, ON, OFF, ON)])
        assert rate == 1.0
        assert denom == 2

    def test_all_off(self):
        rate, denom = switch_rate([arr(OFF, OFF, OFF)])
        assert rate == 0.0
        assert denom == 2

    def test_three_trajectory_fixture(self):
        trajectories = [
            arr(OFF, ON, ON, OFF),
            arr(OFF, OFF, ON),
            arr(ON, OFF, OFF),
        ]
        rate, denom = switch_rate(trajectories)
        assert rate == 0.5
        assert denom == 4

    def test_undefined_when_no_off(self):
        rate, denom = switch_rate([arr(ON, ON)])
        assert rate is None and denom == 0

    def test_empty_set_rejected(self):
        with pytest.raises(DataValidationError):
            switch_rate([])

    @settings(max_examples=300, deadline=None)
    @given(
        st.lists(
            st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=30),
            min_size=1,
            max_size=20,
        )
    )
    def test_matches_position_counter(self, raw):
        trajectories = [np.array(t, dtype=np.uint8) for t in raw]
        got_rate, got_denom = switch_rate(trajectories)
        want_rate, want_denom = switch_rate_counter(raw)
        assert got_denom == want_denom
        if want_rate is None:
            assert got_rate is None
        else:
            assert got_rate == pytest.approx(want_rate, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.lists(st.integers(min_value=0, max_value=1), min_size=2, max_size=20),
            min_size=1,
            max_size=10,
        )
    )
    def test_complementarity(self, raw):
        trajectories = [np.array(t, dtype=np.uint8) for t in raw]
        to_on, denom_on = switch_rate(trajectories, OFF, ON)
        to_off, denom_off = switch_rate(trajectories, OFF, OFF)
        if to_on is not None:
            assert denom_on == denom_off
            assert to_on + to_off == pytest.approx(1.0)
            assert 0.0 <= to_on <= 1.0


class TestReengagementRecords:
    def test_groups_and_exclusions(self):
        from mobseq.trajectory import Trajectory

        trajectories = [
            Trajectory("u1", date(2016, 7, 1), "morning", arr(OFF, ON, ON, OFF)),
            Trajectory("u1", date(2016, 7, 1), "morning", arr(OFF, OFF, ON)),
            Trajectory("u1", date(2016, 7, 1), "morning", arr(ON, OFF, OFF)),
            Trajectory("u1", date(2016, 7, 1), "midday", arr(ON, ON, ON)),
        ]
        records, excluded = reengagement_records(trajectories)
        assert len(records) == 1
        assert excluded == 1  # all-ON midday group has a zero denominator
        rec = records[0]
        assert rec.rate == 0.5
        assert rec.n_off_positions == 4

    def test_deterministic_order(self):
        from mobseq.trajectory import Trajectory

        trajectories = [
            Trajectory("u2", date(2016, 7, 2), "evening", arr(OFF, ON)),
            Trajectory("u1", date(2016, 7, 1), "midday", arr(OFF, ON)),
            Trajectory("u1", date(2016, 7, 1), "small", arr(OFF, ON)),
        ]
        records, _ = reengagement_records(trajectories)
        keys = [(r.user_id, r.date, r.timespan) for r in records]
        assert keys == [
            ("u1", date(2016, 7, 1), "small"),
            ("u1", date(2016, 7, 1), "midday"),
            ("u2", date(2016, 7, 2), "evening"),
        ]

    def test_rates_in_unit_interval(self):
        rng = np.random.default_rng(3)
        from mobseq.trajectory import Trajectory

        trajectories = [
            Trajectory(
                f"u{rng.integers(3)}",
                date(2016, 7, int(rng.integers(1, 5))),
                ("small", "morning", "midday")[rng.integers(3)],
                rng.integers(0, 2, size=rng.integers(2, 20)).astype(np.uint8),
            )
            for _ in range(60)
        ]
        records, _ = reengagement_records(trajectories)
        assert all(0.0 <= r.rate <= 1.0 for r in records)
