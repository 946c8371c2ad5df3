import itertools

import numpy as np
import pytest

from mobseq.cluster import average_silhouette, extract_medoids, pam_cluster, select_k
from mobseq.errors import DataValidationError
from oracles import brute_force_pam


def line_matrix(points):
    pts = np.asarray(points, dtype=np.float64)
    return np.abs(pts[:, None] - pts[None, :])


def ones(n):
    return np.ones(n)


class TestPamCluster:
    def test_k_equals_n_zero_cost(self):
        D = line_matrix([0, 5, 9])
        c = pam_cluster(D, ones(3), 3)
        assert c.total_cost == 0.0
        assert c.medoid_indices == [0, 1, 2]

    def test_two_items_k1_tie_to_lower_index(self):
        D = line_matrix([0, 4])
        c = pam_cluster(D, np.array([1.0, 1.0]), 1)
        assert c.medoid_indices == [0]
        assert c.total_cost == pytest.approx(4.0)

    def test_two_blob_line_fixture(self):
        # Brute force over all 6 medoid pairs gives cost 2 with one medoid
        # from each pair of {0,1} and {10,11}.
        D = line_matrix([0, 1, 10, 11])
        opt_cost, opt_set = brute_force_pam(D, ones(4), 2)
        assert opt_cost == pytest.approx(2.0)
        c = pam_cluster(D, ones(4), 2)
        assert c.total_cost == pytest.approx(2.0)
        assert len(set(c.medoid_indices) & {0, 1}) == 1
        assert len(set(c.medoid_indices) & {2, 3}) == 1

    def test_k_greater_than_n_raises(self):
        with pytest.raises(DataValidationError):
            pam_cluster(line_matrix([0, 1]), ones(2), 3)

    def test_swap_trace_strictly_decreasing(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(4, 12))
            pts = rng.uniform(0, 100, size=n)
            D = line_matrix(pts)
            w = rng.integers(1, 5, size=n).astype(float)
            c = pam_cluster(D, w, int(rng.integers(2, min(4, n) + 1)))
            diffs = np.diff(c.swap_trace)
            assert np.all(diffs < 0)

    def test_no_single_swap_improves_after_convergence(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n = int(rng.integers(4, 9))
            D = line_matrix(rng.uniform(0, 50, size=n))
            w = rng.uniform(0.5, 3.0, size=n)
            k = int(rng.integers(2, 4))
            if k >= n:
                continue
            c = pam_cluster(D, w, k)
            for m in c.medoid_indices:
                for h in range(n):
                    if h in c.medoid_indices:
                        continue
                    cand = [x for x in c.medoid_indices if x != m] + [h]
                    cand_cost = float(w @ D[:, sorted(cand)].min(axis=1))
                    assert cand_cost >= c.total_cost - 1e-9

    def test_matches_brute_force_on_small_instances(self):
        rng = np.random.default_rng(123)
        hits, total = 0, 60
        for _ in range(total):
            n = int(rng.integers(3, 9))
            pts = rng.uniform(0, 100, size=n)
            D = line_matrix(pts)
            w = rng.integers(1, 6, size=n).astype(float)
            k = int(rng.integers(2, min(3, n - 1) + 1))
            opt_cost, _ = brute_force_pam(D, w, k)
            got = pam_cluster(D, w, k).total_cost
            assert got <= opt_cost * 1.10 + 1e-9
            hits += abs(got - opt_cost) < 1e-9
        assert hits / total >= 0.9

    def test_weight_equivalence_under_duplication(self):
        D = line_matrix([0, 1, 10, 11, 20])
        w = np.array([2.0, 1.0, 1.0, 1.0, 1.0])
        base = pam_cluster(D, w, 2)
        # Duplicate item 0 (same coordinates) with its weight halved.
        pts2 = [0, 0, 1, 10, 11, 20]
        D2 = line_matrix(pts2)
        w2 = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        dup = pam_cluster(D2, w2, 2)
        assert dup.total_cost == pytest.approx(base.total_cost)
        remap = {0: 0, 1: 0, 2: 1, 3: 2, 4: 3, 5: 4}
        assert sorted({remap[m] for m in dup.medoid_indices}) == base.medoid_indices


class TestSilhouette:
    def test_two_separated_pairs_high(self):
        D = line_matrix([0.0, 0.1, 100.0, 100.1])
        c = pam_cluster(D, ones(4), 2)
        assert average_silhouette(D, ones(4), c) > 0.9

    def test_all_equal_distances_zero(self):
        D = np.full((4, 4), 7.0)
        np.fill_diagonal(D, 0.0)
        c = pam_cluster(D, ones(4), 2)
        assert average_silhouette(D, ones(4), c) == pytest.approx(0.0)

    def test_singleton_contributes_zero(self):
        # Outlier forms its own cluster; its silhouette term must be 0.
        D = line_matrix([0.0, 0.5, 1.0, 50.0])
        c = pam_cluster(D, ones(4), 2)
        assert c.assignment[3] != c.assignment[0]
        asw = average_silhouette(D, ones(4), c)
        # Hand computation with the singleton contributing exactly 0.
        expected = 0.0
        for i in range(3):
            others = [j for j in range(3) if j != i]
            a = np.mean([D[i, j] for j in others])
            b = D[i, 3]
            expected += (b - a) / max(a, b)
        assert asw == pytest.approx(expected / 4.0)

    def test_k1_rejected(self):
        D = line_matrix([0, 1, 2])
        c = pam_cluster(D, ones(3), 1)
        with pytest.raises(DataValidationError):
            average_silhouette(D, ones(3), c)


class TestSelectK:
    def test_two_clean_blobs_selects_two(self):
        D = line_matrix([0.0, 1.0, 2.0, 100.0, 101.0, 102.0])
        best = select_k(D, ones(6), 2, 5)
        assert best.k == 2
        assert best.asw > 0.9

    def test_n2_trivial(self):
        D = line_matrix([0.0, 3.0])
        best = select_k(D, ones(2))
        assert best.k == 2
        assert best.asw is None and best.degenerate
        assert best.total_cost == 0.0

    def test_uniform_matrix_ties_to_kmin(self):
        D = np.full((6, 6), 4.0)
        np.fill_diagonal(D, 0.0)
        best = select_k(D, ones(6), 2, 5)
        assert best.k == 2
        assert best.asw == pytest.approx(0.0)

    def test_three_blobs(self):
        D = line_matrix([0, 1, 50, 51, 100, 101])
        best = select_k(D, ones(6), 2, 5)
        assert best.k == 3


class TestExtractMedoids:
    def test_singleton_cluster(self):
        D = line_matrix([0.0, 100.0])
        c = pam_cluster(D, ones(2), 2)
        meds = extract_medoids(c, D, ones(2))
        assert meds == [(0, 1.0), (1, 1.0)]

    def test_line_cluster_center(self):
        D = line_matrix([0.0, 1.0, 10.0])
        c = pam_cluster(D, ones(3), 1)
        meds = extract_medoids(c, D, ones(3))
        # Average distances: 0 -> 11, 1 -> 10, 10 -> 19; medoid is item 1.
        assert meds == [(1, 3.0)]

    def test_heavy_weight_pulls_medoid(self):
        D = line_matrix([0.0, 1.0, 10.0])
        w = np.array([1.0, 1.0, 100.0])
        c = pam_cluster(D, w, 1)
        meds = extract_medoids(c, D, w)
        # Weighted sums: i=0: 1+1000=1001, i=1: 1+900=901, i=2: 10+9=19.
        assert meds[0][0] == 2
        assert meds[0][1] == pytest.approx(102.0)

    def test_agrees_with_pam_medoids(self):
        rng = np.random.default_rng(77)
        for _ in range(30):
            n = int(rng.integers(4, 12))
            D = line_matrix(rng.uniform(0, 60, size=n))
            w = rng.integers(1, 4, size=n).astype(float)
            k = int(rng.integers(2, min(4, n - 1) + 1))
            c = pam_cluster(D, w, k)
            meds = extract_medoids(c, D, w)
            assert sorted(m for m, _ in meds) == c.medoid_indices
            assert sum(wt for _, wt in meds) == pytest.approx(w.sum())
