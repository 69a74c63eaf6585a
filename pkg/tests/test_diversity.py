"""Distinct-answer metrics, density clustering, and the spectral estimator."""

import itertools
import math

import numpy as np
import pytest
from sklearn.cluster import DBSCAN as SkDBSCAN

from selfsearch.diversity import (ClusterProfile, MetricError, OracleError,
                                  aec, cluster_by_equivalence, cluster_count,
                                  cluster_labels, da_at_k, dbscan, ea,
                                  exact_bits_oracle, g_vendi, naudc,
                                  pass_at_k, read_vectors, write_vectors)


# -- pass@k ---------------------------------------------------------------------

def test_pass_at_k_edge_values():
    assert pass_at_k(10, 0, 3) == 0.0
    assert pass_at_k(10, 10, 1) == 1.0
    assert pass_at_k(5, 1, 5) == 1.0          # k draws exhaust the pool
    assert pass_at_k(4, 2, 2) == pytest.approx(5.0 / 6.0, rel=1e-12)
    assert pass_at_k(7, 3, 1) == pytest.approx(3.0 / 7.0, rel=1e-12)


def test_pass_at_k_matches_subset_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(1, 11))
        c = int(rng.integers(0, n + 1))
        k = int(rng.integers(1, n + 1))
        marks = [1] * c + [0] * (n - c)
        hits = sum(any(marks[i] for i in combo)
                   for combo in itertools.combinations(range(n), k))
        expected = hits / math.comb(n, k)
        assert pass_at_k(n, c, k) == pytest.approx(expected, rel=1e-12)


def test_pass_at_k_validation():
    with pytest.raises(MetricError):
        pass_at_k(5, 2, 0)
    with pytest.raises(MetricError):
        pass_at_k(5, 2, 6)
    with pytest.raises(MetricError):
        pass_at_k(5, 6, 2)
    with pytest.raises(MetricError):
        pass_at_k(5, -1, 2)


# -- distinct answers in a k-subset ----------------------------------------------

def test_da_at_k_hand_values():
    prof = ClusterProfile(sizes=(2, 2))
    assert da_at_k(prof, 1) == pytest.approx(1.0, rel=1e-12)
    assert da_at_k(prof, 2) == pytest.approx(5.0 / 3.0, rel=1e-12)
    assert da_at_k(prof, 4) == pytest.approx(2.0, rel=1e-12)


def test_da_at_k_full_draw_counts_all_clusters():
    prof = ClusterProfile(sizes=(3, 1, 5, 2))
    assert da_at_k(prof, prof.total) == pytest.approx(4.0, rel=1e-12)
    assert da_at_k(prof, 1) == pytest.approx(1.0, rel=1e-12)


def test_da_at_k_matches_subset_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(15):
        n_clusters = int(rng.integers(1, 5))
        sizes = tuple(int(rng.integers(1, 4)) for _ in range(n_clusters))
        prof = ClusterProfile(sizes=sizes)
        labels = [c for c, s in enumerate(sizes) for _ in range(s)]
        n = prof.total
        k = int(rng.integers(1, n + 1))
        total = 0
        for combo in itertools.combinations(range(n), k):
            total += len({labels[i] for i in combo})
        expected = total / math.comb(n, k)
        assert da_at_k(prof, k) == pytest.approx(expected, rel=1e-12)


def test_da_at_k_monotone_in_k():
    prof = ClusterProfile(sizes=(4, 3, 2, 1, 1))
    values = [da_at_k(prof, k) for k in range(1, prof.total + 1)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_da_at_k_monte_carlo_agreement():
    rng = np.random.default_rng(2)
    for sizes in [(5, 3, 2), (8, 1, 1), (2, 2, 2, 2)]:
        prof = ClusterProfile(sizes=sizes)
        labels = np.array([c for c, s in enumerate(sizes) for _ in range(s)])
        k = 3
        draws = np.array([len(set(labels[rng.choice(prof.total, size=k,
                                                    replace=False)]))
                          for _ in range(20_000)])
        assert da_at_k(prof, k) == pytest.approx(draws.mean(), abs=0.02)


def test_da_at_k_validation():
    prof = ClusterProfile(sizes=(2, 1))
    with pytest.raises(MetricError):
        da_at_k(prof, 0)
    with pytest.raises(MetricError):
        da_at_k(prof, 4)
    with pytest.raises(MetricError):
        ClusterProfile(sizes=(2, 0))
    with pytest.raises(MetricError):
        ClusterProfile(sizes=(2, -1))


# -- effective answers and the area metric ----------------------------------------

def test_ea_values():
    assert ea(ClusterProfile(sizes=(7,))) == pytest.approx(1.0, rel=1e-12)
    assert ea(ClusterProfile(sizes=(1, 1))) == pytest.approx(2.0, rel=1e-12)
    p = np.array([0.75, 0.25])
    direct = math.exp(-(p * np.log(p)).sum())
    assert ea(ClusterProfile(sizes=(3, 1))) == pytest.approx(direct, rel=1e-12)
    assert direct == pytest.approx(1.7548, abs=1e-4)


def test_ea_uniform_profile_counts_clusters():
    for m in (1, 2, 5, 9):
        prof = ClusterProfile(sizes=(3,) * m)
        assert ea(prof) == pytest.approx(float(m), rel=1e-12)


def test_ea_bounded_by_cluster_count():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = int(rng.integers(1, 7))
        sizes = tuple(int(rng.integers(1, 6)) for _ in range(m))
        value = ea(ClusterProfile(sizes=sizes))
        assert 1.0 - 1e-12 <= value <= m + 1e-12


def test_naudc_literal_form():
    prof = ClusterProfile(sizes=(2, 2))
    assert naudc(prof, 2) == pytest.approx(1.0 + 5.0 / 3.0, rel=1e-12)
    assert naudc(prof, 4) == pytest.approx(20.0 / 9.0, rel=1e-12)
    rng = np.random.default_rng(4)
    for _ in range(10):
        sizes = tuple(int(rng.integers(1, 5))
                      for _ in range(int(rng.integers(1, 5))))
        prof = ClusterProfile(sizes=sizes)
        k_max = int(rng.integers(2, prof.total + 1))
        direct = sum(da_at_k(prof, k)
                     for k in range(1, k_max + 1)) / (k_max - 1)
        assert naudc(prof, k_max) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(MetricError):
        naudc(prof, 1)


# -- density clustering -------------------------------------------------------------

def test_dbscan_two_separated_groups():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1],
                    [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]])
    labels = dbscan(pts, eps=0.5, min_pts=2)
    assert set(labels.tolist()) == {0, 1}
    assert len(set(labels[:3].tolist())) == 1
    assert len(set(labels[3:].tolist())) == 1
    assert labels[0] != labels[3]


def test_dbscan_isolated_point_is_noise():
    pts = np.array([[0.0], [0.05], [9.0]])
    labels = dbscan(pts, eps=0.2, min_pts=2)
    assert labels.tolist() == [0, 0, -1]
    assert cluster_count(labels) == 2


def test_dbscan_min_pts_one_leaves_no_noise():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(40, 2))
    labels = dbscan(pts, eps=0.3, min_pts=1)
    assert (labels >= 0).all()


def test_dbscan_identical_points_share_a_cluster():
    pts = np.zeros((5, 3))
    labels = dbscan(pts, eps=1e-6, min_pts=3)
    assert set(labels.tolist()) == {0}


def test_dbscan_validation():
    with pytest.raises(MetricError):
        dbscan(np.zeros((2, 2)), eps=0.0, min_pts=2)
    with pytest.raises(MetricError):
        dbscan(np.zeros((2, 2)), eps=0.5, min_pts=0)
    assert dbscan(np.zeros((0, 2)), eps=0.5, min_pts=2).shape == (0,)


def _core_partition(points, labels, eps, min_pts):
    """Frozenset partition of core points, the order-independent part."""
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    core = (d2 <= eps * eps).sum(axis=1) >= min_pts
    groups = {}
    for i in np.flatnonzero(core):
        groups.setdefault(labels[i], set()).add(int(i))
    return {frozenset(g) for g in groups.values()}


def test_dbscan_against_reference_implementation():
    rng = np.random.default_rng(6)
    for trial in range(8):
        pts = rng.normal(size=(60, 2)) * rng.uniform(0.5, 2.0)
        eps, min_pts = 0.4, 3
        mine = dbscan(pts, eps, min_pts)
        ref = SkDBSCAN(eps=eps, min_samples=min_pts).fit(pts).labels_
        assert set(np.flatnonzero(mine == -1)) == set(np.flatnonzero(ref == -1))
        assert len(set(mine[mine >= 0].tolist())) == \
            len(set(ref[ref >= 0].tolist()))
        assert _core_partition(pts, mine, eps, min_pts) == \
            _core_partition(pts, ref, eps, min_pts)


def test_cluster_count_counts_noise_as_singletons():
    assert cluster_count(np.array([0, 0, 1, -1, -1])) == 4
    assert cluster_count(np.array([], dtype=int)) == 0
    assert cluster_count(np.array([-1, -1, -1])) == 3
    assert cluster_count(np.array([2, 2, 2])) == 1


def test_aec_hand_value():
    tight_pairs = np.array([[0.0], [0.01], [5.0], [5.01]])
    pair_plus_noise = np.array([[0.0], [0.01], [9.0]])
    value = aec([tight_pairs, pair_plus_noise], eps=0.1, min_pts=2)
    assert value == pytest.approx(2.0)
    with pytest.raises(MetricError):
        aec([], eps=0.1, min_pts=2)


# -- spectral diversity ----------------------------------------------------------

def test_g_vendi_identical_rows_is_one():
    X = np.tile(np.array([1.0, 2.0, -1.0, 0.5]), (12, 1))
    assert g_vendi(X, proj_dim=16, seed=0) == pytest.approx(1.0, abs=1e-9)


def test_g_vendi_orthonormal_rows_approach_count():
    n, d = 16, 64
    X = np.eye(d)[:n]
    wide = [g_vendi(X, proj_dim=256 * n, seed=s) for s in range(3)]
    for v in wide:
        assert v == pytest.approx(float(n), rel=0.01)
    narrow = g_vendi(X, proj_dim=4 * n, seed=0)
    assert 0.8 * n < narrow < min(wide)
    assert max(wide) <= n * 1.001


def test_g_vendi_repeated_rows_add_nothing():
    d = 64
    X = np.repeat(np.eye(d)[:4], 4, axis=0)
    v = g_vendi(X, proj_dim=1024, seed=1)
    assert v == pytest.approx(4.0, rel=0.05)


def test_g_vendi_permutation_and_scale_invariance():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(10, 20))
    base = g_vendi(X, proj_dim=32, seed=3)
    perm = rng.permutation(10)
    assert g_vendi(X[perm], proj_dim=32, seed=3) == \
        pytest.approx(base, rel=1e-9)
    scales = rng.uniform(0.5, 4.0, size=10)[:, None]
    assert g_vendi(X * scales, proj_dim=32, seed=3) == \
        pytest.approx(base, rel=1e-9)


def test_g_vendi_seed_changes_projection():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(6, 12))
    a = g_vendi(X, proj_dim=8, seed=0)
    b = g_vendi(X, proj_dim=8, seed=1)
    assert a != b
    assert g_vendi(X, proj_dim=8, seed=0) == a


def test_g_vendi_zero_rows_dropped_with_warning():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(5, 8))
    padded = np.vstack([X, np.zeros((2, 8))])
    with pytest.warns(UserWarning):
        v = g_vendi(padded, proj_dim=16, seed=2)
    assert v == pytest.approx(g_vendi(X, proj_dim=16, seed=2), rel=1e-12)


def test_g_vendi_validation():
    with pytest.warns(UserWarning), pytest.raises(MetricError):
        g_vendi(np.zeros((3, 4)), proj_dim=8, seed=0)
    with pytest.raises(MetricError):
        g_vendi(np.ones((3, 4)), proj_dim=0, seed=0)
    with pytest.raises(MetricError):
        g_vendi(np.ones(4), proj_dim=2, seed=0)
    with pytest.raises(MetricError):
        g_vendi(np.ones((0, 4)), proj_dim=2, seed=0)


# -- oracle clustering ------------------------------------------------------------

def test_cluster_labels_first_appearance_order():
    items = ["a", "a", "b", "a", "c", "b"]
    labels = cluster_labels(items, lambda x, y: x == y)
    assert labels == [0, 0, 1, 0, 2, 1]
    prof = cluster_by_equivalence(items, lambda x, y: x == y)
    assert prof.sizes == (3, 2, 1)


def test_cluster_all_distinct_gives_singletons():
    items = list(range(6))
    prof = cluster_by_equivalence(items, lambda x, y: x == y)
    assert prof.sizes == (1,) * 6


def test_cluster_empty_items():
    assert cluster_labels([], exact_bits_oracle) == []
    assert cluster_by_equivalence([], exact_bits_oracle).sizes == ()


def test_cluster_closure_is_transitive():
    # 0~1 and 1~2 without 0~2; the closure still merges all three.
    items = [0, 1, 2, 10]
    prof = cluster_by_equivalence(items, lambda a, b: bool(abs(a - b) <= 1))
    assert prof.sizes == (3, 1)


def test_exact_bits_oracle_partition_recount():
    rng = np.random.default_rng(10)
    vectors = [rng.integers(0, 2, size=5).astype(np.uint8) for _ in range(40)]
    prof = cluster_by_equivalence(vectors, exact_bits_oracle)
    counts = {}
    for v in vectors:
        counts[v.tobytes()] = counts.get(v.tobytes(), 0) + 1
    assert sorted(prof.sizes) == sorted(counts.values())
    assert prof.total == 40


def test_oracle_misbehavior_is_rejected():
    with pytest.raises(OracleError):
        cluster_labels([1, 2], lambda a, b: 1)          # non-bool
    with pytest.raises(OracleError):
        cluster_labels([1, 2], lambda a, b: a == b or a < b)  # asymmetric
    with pytest.raises(OracleError):
        cluster_labels([1, 2], lambda a, b: False)      # irreflexive


def test_numpy_bool_returns_are_accepted():
    vecs = [np.array([1, 0]), np.array([1, 0]), np.array([0, 1])]
    labels = cluster_labels(vecs, lambda a, b: np.array_equal(a, b))
    assert labels == [0, 0, 1]


# -- files -------------------------------------------------------------------------

def test_vectors_file_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    entries = [(0, "belief", rng.normal(size=(3, 4))),
               (1, "bits", rng.integers(0, 2, size=(2, 4)).astype(float))]
    path = tmp_path / "vectors.jsonl"
    write_vectors(entries, path)
    back = read_vectors(path)
    assert len(back) == 2
    for (tid, kind, vecs), (btid, bkind, bvecs) in zip(entries, back):
        assert (tid, kind) == (btid, bkind)
        assert np.allclose(vecs, bvecs)
        assert bvecs.dtype == np.float64
