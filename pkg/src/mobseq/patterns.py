"""Cross-user pattern catalog built from pooled per-user medoid sessions.

Medoids merge across users by canonical form: each spell maps to its state
plus a light/heavy duration bucket split at the global median spell
duration. Catalog entries keep the highest-weight exemplar's real durations
for rendering.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

from .errors import DataValidationError
from .events import UserProfile
from .spells import SpellSequence

LIGHT, HEAVY = "light", "heavy"

Canonical = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class MedoidEntry:
    """One pooled medoid: its owner, spell sequence, and cluster session count."""

    user_id: str
    sequence: SpellSequence
    weight: float


@dataclass
class MedoidPattern:
    canonical: Canonical
    exemplar: SpellSequence
    weight: float
    contributing_users: int


@dataclass
class PatternCatalog:
    patterns: list[MedoidPattern]
    total_sessions: float

    @property
    def shares(self) -> list[float]:
        return [p.weight / self.total_sessions for p in self.patterns]

    @property
    def cumulative_shares(self) -> list[float]:
        out, acc = [], 0.0
        for p in self.patterns:
            acc += p.weight / self.total_sessions
            out.append(acc)
        return out

    def top_n_at_share(self, target: float = 0.5) -> int | None:
        """Smallest N whose cumulative share reaches ``target``."""
        for i, c in enumerate(self.cumulative_shares, start=1):
            if c >= target - 1e-12:
                return i
        return None


def pool_medoids(per_user: dict[str, list[tuple[SpellSequence, float]]]) -> list[MedoidEntry]:
    """Flatten per-user (medoid sequence, cluster weight) lists into one pool."""
    pool = []
    for user_id in sorted(per_user):
        for seq, weight in per_user[user_id]:
            pool.append(MedoidEntry(user_id=user_id, sequence=seq, weight=float(weight)))
    return pool


def global_duration_split(pool: list[MedoidEntry]) -> float:
    """Median spell duration over every spell in the pool (unweighted)."""
    durations = [d for entry in pool for d in entry.sequence.durations]
    if not durations:
        raise DataValidationError("cannot compute a duration split from an empty pool")
    return float(statistics.median(durations))


def canonicalize_pattern(seq: SpellSequence, split: float) -> Canonical:
    """Map each spell to (state, light|heavy); durations at the split are heavy.

    Adjacent equal canonical elements merge, though upstream spell merging
    already guarantees distinct adjacent states.
    """
    if split <= 0:
        raise DataValidationError("duration split must be positive")
    out: list[tuple[str, str]] = []
    for state, dur in seq.spells:
        bucket = HEAVY if dur >= split else LIGHT
        if out and out[-1] == (state, bucket):
            continue
        out.append((state, bucket))
    return tuple(out)


def canonical_label(canonical: Canonical) -> str:
    return ">".join(f"{state}:{bucket}" for state, bucket in canonical)


def rank_patterns(pool: list[MedoidEntry], split: float) -> PatternCatalog:
    """Merge pool entries by canonical form and rank by total weight.

    Sorting is weight-descending with lexicographic canonical labels as the
    tie rule, so the ranking is invariant to pool input order.
    """
    if not pool:
        raise DataValidationError("rank_patterns requires a non-empty pool")
    groups: dict[Canonical, dict] = {}
    for entry in pool:
        canon = canonicalize_pattern(entry.sequence, split)
        g = groups.setdefault(canon, {"weight": 0.0, "users": set(), "entries": []})
        g["weight"] += entry.weight
        g["users"].add(entry.user_id)
        g["entries"].append(entry)

    patterns = []
    for canon, g in groups.items():
        exemplar = min(g["entries"], key=lambda e: (-e.weight, e.user_id, e.sequence.spells))
        patterns.append(
            MedoidPattern(
                canonical=canon,
                exemplar=exemplar.sequence,
                weight=g["weight"],
                contributing_users=len(g["users"]),
            )
        )
    patterns.sort(key=lambda p: (-p.weight, canonical_label(p.canonical)))
    return PatternCatalog(patterns=patterns, total_sessions=sum(p.weight for p in patterns))


SUBGROUP_ATTRIBUTES = ("gender", "age_group", "education", "occupation")


def subgroup_breakdown(
    pool: list[MedoidEntry],
    profiles: dict[str, UserProfile],
    attribute: str,
    split: float,
) -> tuple[dict[str, PatternCatalog], int]:
    """Re-pool and re-rank within each level of a demographic attribute.

    Users without a profile are excluded; the count of excluded users is
    returned alongside the per-level catalogs.
    """
    if attribute not in SUBGROUP_ATTRIBUTES:
        raise DataValidationError(f"unknown attribute {attribute!r}")
    by_level: dict[str, list[MedoidEntry]] = {}
    excluded_users = set()
    for entry in pool:
        profile = profiles.get(entry.user_id)
        if profile is None:
            excluded_users.add(entry.user_id)
            continue
        by_level.setdefault(getattr(profile, attribute), []).append(entry)
    catalogs = {
        level: rank_patterns(entries, split) for level, entries in sorted(by_level.items())
    }
    return catalogs, len(excluded_users)
