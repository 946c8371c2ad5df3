import numpy as np
import pytest

from mobseq.errors import DataValidationError
from mobseq.patterns import (
    MedoidEntry,
    canonical_label,
    canonicalize_pattern,
    global_duration_split,
    pool_medoids,
    rank_patterns,
    subgroup_breakdown,
)
from mobseq.events import UserProfile
from mobseq.spells import SpellSequence


def seq(*spells):
    return SpellSequence(tuple(spells))


def profile(user, gender="female", age="21-30", edu="high", occ="students"):
    return UserProfile(user, gender, age, edu, occ)


class TestPoolMedoids:
    def test_pool_size(self):
        per_user = {
            f"u{i}": [(seq(("SNS", 10.0), ("Games", 20.0)), 3.0), (seq(("Web", 5.0), ("SNS", 10.0)), 2.0)]
            for i in range(3)
        }
        pool = pool_medoids(per_user)
        assert len(pool) == 6

    def test_weights_preserved(self):
        per_user = {"u1": [(seq(("SNS", 1.0), ("Web", 2.0)), 10.0), (seq(("Web", 5.0), ("SNS", 1.0)), 5.0)]}
        pool = pool_medoids(per_user)
        assert [e.weight for e in pool] == [10.0, 5.0]


class TestCanonicalize:
    def test_threshold_rule(self):
        s = seq(("Communication", 10.0), ("SNS", 500.0))
        assert canonicalize_pattern(s, 120.0) == (
            ("Communication", "light"),
            ("SNS", "heavy"),
        )

    def test_boundary_is_heavy(self):
        s = seq(("SNS", 120.0))
        assert canonicalize_pattern(s, 120.0) == (("SNS", "heavy"),)

    def test_split_must_be_positive(self):
        with pytest.raises(DataValidationError):
            canonicalize_pattern(seq(("SNS", 10.0)), 0.0)

    def test_label_round_trip_format(self):
        s = seq(("SNS", 10.0), ("Games", 500.0))
        assert canonical_label(canonicalize_pattern(s, 100.0)) == "SNS:light>Games:heavy"


class TestRankPatterns:
    def test_identical_forms_merge_to_one(self):
        pool = [
            MedoidEntry("u1", seq(("SNS", 10.0), ("Web", 400.0)), 4.0),
            MedoidEntry("u2", seq(("SNS", 12.0), ("Web", 500.0)), 6.0),
        ]
        cat = rank_patterns(pool, split=100.0)
        assert len(cat.patterns) == 1
        assert cat.patterns[0].weight == 10.0
        assert cat.patterns[0].contributing_users == 2
        assert cat.shares == [1.0]

    def test_cumulative_shares_and_top_n(self):
        pool = [
            MedoidEntry("u1", seq(("SNS", 10.0), ("Web", 10.0)), 5.0),
            MedoidEntry("u1", seq(("Games", 10.0), ("Web", 10.0)), 3.0),
            MedoidEntry("u2", seq(("Email", 10.0), ("Web", 10.0)), 2.0),
        ]
        cat = rank_patterns(pool, split=100.0)
        assert cat.cumulative_shares == pytest.approx([0.5, 0.8, 1.0])
        assert cat.top_n_at_share(0.5) == 1

    def test_weight_conservation_and_order_invariance(self):
        rng = np.random.default_rng(0)
        states = ["SNS", "Web", "Games", "Email"]
        pool = []
        for i in range(40):
            a, b = rng.choice(states, size=2, replace=False)
            pool.append(
                MedoidEntry(
                    f"u{rng.integers(5)}",
                    seq((a, float(rng.uniform(1, 200))), (b, float(rng.uniform(1, 200)))),
                    float(rng.integers(1, 9)),
                )
            )
        cat = rank_patterns(pool, split=100.0)
        assert sum(p.weight for p in cat.patterns) == pytest.approx(sum(e.weight for e in pool))
        shuffled = list(pool)
        rng.shuffle(shuffled)
        cat2 = rank_patterns(shuffled, split=100.0)
        assert [canonical_label(p.canonical) for p in cat.patterns] == [
            canonical_label(p.canonical) for p in cat2.patterns
        ]
        assert cat.cumulative_shares[-1] == pytest.approx(1.0, abs=1e-12)
        assert all(b >= a for a, b in zip(cat.cumulative_shares, cat.cumulative_shares[1:]))

    def test_exemplar_is_heaviest_contributor(self):
        light = seq(("SNS", 10.0), ("Web", 20.0))
        heavy_exemplar = seq(("SNS", 11.0), ("Web", 30.0))
        pool = [
            MedoidEntry("u1", light, 2.0),
            MedoidEntry("u2", heavy_exemplar, 9.0),
        ]
        cat = rank_patterns(pool, split=100.0)
        assert cat.patterns[0].exemplar.spells == heavy_exemplar.spells

    def test_empty_pool_rejected(self):
        with pytest.raises(DataValidationError):
            rank_patterns([], split=10.0)


class TestGlobalSplit:
    def test_median_over_all_spells(self):
        pool = [
            MedoidEntry("u1", seq(("SNS", 10.0), ("Web", 20.0)), 1.0),
            MedoidEntry("u2", seq(("Games", 30.0)), 1.0),
        ]
        assert global_duration_split(pool) == 20.0


class TestSubgroupBreakdown:
    def _pool(self):
        return [
            MedoidEntry("u1", seq(("SNS", 10.0), ("Web", 400.0)), 5.0),
            MedoidEntry("u2", seq(("Games", 10.0), ("Web", 400.0)), 3.0),
            MedoidEntry("u3", seq(("Email", 10.0), ("Web", 400.0)), 2.0),
        ]

    def test_all_one_level_matches_global(self):
        profiles = {u: profile(u, gender="female") for u in ("u1", "u2", "u3")}
        catalogs, excluded = subgroup_breakdown(self._pool(), profiles, "gender", 100.0)
        assert excluded == 0
        assert list(catalogs) == ["female"]
        global_cat = rank_patterns(self._pool(), 100.0)
        assert [canonical_label(p.canonical) for p in catalogs["female"].patterns] == [
            canonical_label(p.canonical) for p in global_cat.patterns
        ]

    def test_disjoint_groups_have_disjoint_catalogs(self):
        profiles = {
            "u1": profile("u1", gender="female"),
            "u2": profile("u2", gender="male"),
            "u3": profile("u3", gender="male"),
        }
        catalogs, _ = subgroup_breakdown(self._pool(), profiles, "gender", 100.0)
        female = {canonical_label(p.canonical) for p in catalogs["female"].patterns}
        male = {canonical_label(p.canonical) for p in catalogs["male"].patterns}
        assert not female & male

    def test_missing_profiles_excluded_and_counted(self):
        profiles = {"u1": profile("u1")}
        catalogs, excluded = subgroup_breakdown(self._pool(), profiles, "gender", 100.0)
        assert excluded == 2
        assert sum(p.weight for p in catalogs["female"].patterns) == 5.0

    def test_weight_conservation_within_partition(self):
        profiles = {
            "u1": profile("u1", gender="female"),
            "u2": profile("u2", gender="male"),
            "u3": profile("u3", gender="female"),
        }
        catalogs, _ = subgroup_breakdown(self._pool(), profiles, "gender", 100.0)
        total = sum(p.weight for cat in catalogs.values() for p in cat.patterns)
        assert total == pytest.approx(10.0)

    def test_unknown_attribute(self):
        with pytest.raises(DataValidationError):
            subgroup_breakdown(self._pool(), {}, "height", 100.0)
