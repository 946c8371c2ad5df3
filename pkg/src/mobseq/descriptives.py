"""Session-level descriptive statistics: durations, repertoires, initiating
apps, transition structure, and the duration-transition correlation.

Transitions are counted on raw event adjacency within sessions (before
spell merging), so same-category repeats appear on the matrix diagonal as
assortative transitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .categories import DEFAULT_CATALOG, CategoryCatalog
from .errors import DataValidationError
from .events import EventLog
from .sessions import Session, SessionKind


def _summary(values: list[float]) -> dict:
    if not values:
        return {"mean": None, "median": None, "sd": None, "n": 0}
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "sd": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
        "n": int(arr.size),
    }


def observation_days(log: EventLog) -> dict[str, int]:
    """Per-user span of civil days from first to last event date, inclusive (UTC)."""
    out = {}
    for user_id in log.users():
        events = log.events_for(user_id)
        first = datetime.fromtimestamp(events[0].start / 1000.0, tz=timezone.utc).date()
        last = datetime.fromtimestamp(events[-1].start / 1000.0, tz=timezone.utc).date()
        out[user_id] = (last - first).days + 1
    return out


@dataclass
class SessionStats:
    sessions_per_day: dict
    session_duration_s: dict
    per_user_mean_duration_s: dict
    kind_shares: dict[str, float]
    solo_time_share: float
    repertoire: dict
    repertoire_by_user: dict[str, int]
    transitions_per_session: dict
    n_sessions: int
    n_users: int

    def as_dict(self) -> dict:
        return {
            "n_sessions": self.n_sessions,
            "n_users": self.n_users,
            "sessions_per_day": self.sessions_per_day,
            "session_duration_s": self.session_duration_s,
            "per_user_mean_duration_s": self.per_user_mean_duration_s,
            "kind_shares": self.kind_shares,
            "solo_time_share": self.solo_time_share,
            "repertoire": self.repertoire,
            "transitions_per_session": self.transitions_per_session,
        }


def session_statistics(
    sessions: dict[str, list[Session]], obs_days: dict[str, int]
) -> SessionStats:
    """Aggregate the headline session statistics.

    ``sessions_per_day`` summarizes per-user rates over each user's own
    observation span; duration statistics pool over all sessions. Repertoire
    size counts the distinct categories a user ever engages.
    """
    per_day, durations, per_user_mean = [], [], []
    repertoire: dict[str, int] = {}
    kind_counts = {k: 0 for k in SessionKind}
    solo_time = 0.0
    total_time = 0.0
    transition_counts = []
    n_sessions = 0

    for user_id in sorted(sessions):
        user_sessions = sessions[user_id]
        if not user_sessions:
            continue
        days = obs_days.get(user_id)
        if not days or days <= 0:
            raise DataValidationError(f"observation days must be positive for user {user_id!r}")
        per_day.append(len(user_sessions) / days)
        user_durs = [s.duration_s for s in user_sessions]
        durations.extend(user_durs)
        per_user_mean.append(float(np.mean(user_durs)))
        cats = set()
        for s in user_sessions:
            cats.update(s.categories)
            kind_counts[s.kind] += 1
            dur = s.duration_s
            total_time += dur
            if s.kind != SessionKind.MULTI:
                solo_time += dur
            transition_counts.append(s.n_events - 1)
        repertoire[user_id] = len(cats)
        n_sessions += len(user_sessions)

    if n_sessions == 0:
        raise DataValidationError("no sessions to summarize")

    sizes = list(repertoire.values())
    rep_summary = _summary([float(x) for x in sizes])
    rep_summary["share_omnivorous"] = sum(1 for x in sizes if x >= 20) / len(sizes)
    rep_summary["share_selective"] = sum(1 for x in sizes if x < 10) / len(sizes)

    return SessionStats(
        sessions_per_day=_summary(per_day),
        session_duration_s=_summary(durations),
        per_user_mean_duration_s=_summary(per_user_mean),
        kind_shares={k.value: kind_counts[k] / n_sessions for k in SessionKind},
        solo_time_share=solo_time / total_time if total_time > 0 else 0.0,
        repertoire=rep_summary,
        repertoire_by_user=repertoire,
        transitions_per_session=_summary([float(x) for x in transition_counts]),
        n_sessions=n_sessions,
        n_users=len(repertoire),
    )


def initiating_distribution(sessions: list[Session], scope: str = "multi") -> dict[str, float]:
    """Category shares of session openers.

    ``multi``: first event's category of multi-app sessions. ``second_app``:
    the first category differing from the initiator. ``solo``: the single
    category of solo sessions. Shares sum to one; empty scope yields {}.
    """
    counts: dict[str, int] = {}
    if scope == "multi":
        for s in sessions:
            if s.kind == SessionKind.MULTI:
                counts[s.categories[0]] = counts.get(s.categories[0], 0) + 1
    elif scope == "second_app":
        for s in sessions:
            if s.kind != SessionKind.MULTI:
                continue
            first = s.categories[0]
            second = next((c for c in s.categories if c != first), None)
            if second is not None:
                counts[second] = counts.get(second, 0) + 1
    elif scope == "solo":
        for s in sessions:
            if s.kind != SessionKind.MULTI:
                counts[s.categories[0]] = counts.get(s.categories[0], 0) + 1
    else:
        raise DataValidationError(f"unknown scope {scope!r}")
    total = sum(counts.values())
    if total == 0:
        return {}
    return {c: counts[c] / total for c in sorted(counts)}


@dataclass
class TransitionMatrix:
    """Adjacent-event transition counts with assortative/disassortative rates."""

    counts: np.ndarray
    catalog: CategoryCatalog

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_rates(self) -> np.ndarray:
        totals = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            rates = np.where(totals > 0, self.counts / totals, 0.0)
        return rates

    def assortative_rate(self, category: str) -> float | None:
        """Diagonal share of the category's outgoing row; None when unused."""
        i = self.catalog.index(category)
        row_total = self.counts[i].sum()
        if row_total == 0:
            return None
        return float(self.counts[i, i] / row_total)

    def disassortative_outgoing(self) -> dict[str, float]:
        """Each category's share of all off-diagonal transitions it originates."""
        off = self.counts.copy().astype(np.float64)
        np.fill_diagonal(off, 0.0)
        total = off.sum()
        if total == 0:
            return {}
        shares = off.sum(axis=1) / total
        return {c: float(shares[i]) for i, c in enumerate(self.catalog.labels) if shares[i] > 0}

    def disassortative_incoming(self) -> dict[str, float]:
        off = self.counts.copy().astype(np.float64)
        np.fill_diagonal(off, 0.0)
        total = off.sum()
        if total == 0:
            return {}
        shares = off.sum(axis=0) / total
        return {c: float(shares[i]) for i, c in enumerate(self.catalog.labels) if shares[i] > 0}

    def top_disassortative_pairs(self, n: int = 5) -> list[tuple[str, str, int]]:
        pairs = []
        for i in range(len(self.catalog)):
            for j in range(len(self.catalog)):
                if i != j and self.counts[i, j] > 0:
                    pairs.append((self.catalog.labels[i], self.catalog.labels[j], int(self.counts[i, j])))
        pairs.sort(key=lambda t: (-t[2], t[0], t[1]))
        return pairs[:n]


def transition_analysis(
    sessions: list[Session], catalog: CategoryCatalog = DEFAULT_CATALOG
) -> TransitionMatrix:
    """Count adjacent event pairs within each session into a category matrix."""
    n = len(catalog)
    counts = np.zeros((n, n), dtype=np.int64)
    for s in sessions:
        cats = s.categories
        for a, b in zip(cats, cats[1:]):
            counts[catalog.index(a), catalog.index(b)] += 1
    return TransitionMatrix(counts=counts, catalog=catalog)


def pearson_r(x: list[float], y: list[float]) -> float | None:
    """Plain Pearson coefficient; None when either variable has no variance."""
    if len(x) != len(y) or len(x) < 2:
        return None
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    xd = xa - xa.mean()
    yd = ya - ya.mean()
    sx = float(np.sqrt((xd * xd).sum()))
    sy = float(np.sqrt((yd * yd).sum()))
    if sx == 0.0 or sy == 0.0:
        return None
    return float((xd * yd).sum() / (sx * sy))


def duration_transition_correlation(
    sessions: list[Session], per_category: bool = False
) -> tuple[float | None, dict[str, float | None]]:
    """Correlate session duration with transition count (adjacent event pairs).

    In per-category mode, correlates within-session time on each category
    with the session's transition count, over sessions containing it.
    """
    durations = [s.duration_s for s in sessions]
    transitions = [float(s.n_events - 1) for s in sessions]
    overall = pearson_r(durations, transitions)

    per_cat: dict[str, float | None] = {}
    if per_category:
        by_cat: dict[str, tuple[list[float], list[float]]] = {}
        for s in sessions:
            time_on: dict[str, float] = {}
            for ev in s.events:
                time_on[ev.category] = time_on.get(ev.category, 0.0) + ev.duration_s
            for c, t in time_on.items():
                xs, ys = by_cat.setdefault(c, ([], []))
                xs.append(t)
                ys.append(float(s.n_events - 1))
        per_cat = {c: pearson_r(xs, ys) for c, (xs, ys) in sorted(by_cat.items())}
    return overall, per_cat


def describe(
    sessions: dict[str, list[Session]],
    obs_days: dict[str, int],
    catalog: CategoryCatalog = DEFAULT_CATALOG,
) -> dict:
    """Full RQ1-style JSON report over a sessionized log."""
    flat = [s for user_id in sorted(sessions) for s in sessions[user_id]]
    stats = session_statistics(sessions, obs_days)
    matrix = transition_analysis(flat, catalog)
    r, per_cat = duration_transition_correlation(flat, per_category=True)
    assort = {
        c: matrix.assortative_rate(c)
        for c in catalog.labels
        if matrix.assortative_rate(c) is not None
    }
    report = stats.as_dict()
    report["initiating"] = {
        "multi": initiating_distribution(flat, "multi"),
        "second_app": initiating_distribution(flat, "second_app"),
        "solo": initiating_distribution(flat, "solo"),
    }
    report["transitions"] = {
        "total": matrix.total,
        "assortative_rates": assort,
        "disassortative_outgoing": matrix.disassortative_outgoing(),
        "disassortative_incoming": matrix.disassortative_incoming(),
        "top_pairs": [list(t) for t in matrix.top_disassortative_pairs()],
    }
    report["duration_transition_r"] = r
    report["duration_transition_r_by_category"] = per_cat
    if math.isnan(report["solo_time_share"]):
        report["solo_time_share"] = None
    return report
