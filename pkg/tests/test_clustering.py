import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import adjusted_rand_score

from prenet.clustering import (
    UNASSIGNED,
    ClusterAssignment,
    adjusted_rand_index,
    clusters_from_pss,
    indicator_loading,
    kmeans_fit,
    kmeans_objective,
    kmeans_objective_gram,
    kmeans_variables,
    modified_kmeans_bruteforce,
    reconstruct,
    reconstruction_error,
    set_partitions,
)
from prenet.model import Family, PenaltySpec, SampleCovariance, sample_covariance
from prenet.simulation import make_model, sample_mvn
from prenet.solver import FitConfig, fit

EQ7_PATTERN = np.array([[0.9, 0], [0.8, 0], [0.7, 0], [0, 0.9], [0, 0.8], [0, 0.7]])


# ---------------------------------------------------------------- assignments

def test_assignment_validation():
    with pytest.raises(ValueError):
        ClusterAssignment(np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        ClusterAssignment(np.array([0, -2]), 2)
    a = ClusterAssignment(np.array([0, 1, UNASSIGNED, 1]), 3)
    np.testing.assert_array_equal(a.sizes, [1, 2, 0])
    assert a.has_unassigned


def test_clusters_from_pss():
    np.testing.assert_array_equal(clusters_from_pss(EQ7_PATTERN).labels, [0, 0, 0, 1, 1, 1])
    np.testing.assert_array_equal(clusters_from_pss(np.zeros((4, 2))).labels, [UNASSIGNED] * 4)
    np.testing.assert_array_equal(clusters_from_pss(np.diag([0.5, -0.2, 0.9])).labels, [0, 1, 2])
    with pytest.raises(ValueError):
        clusters_from_pss(np.array([[0.3, 0.1]]))


# ---------------------------------------------------------------- k-means

def test_identical_columns_single_cluster():
    x = np.random.default_rng(0).standard_normal((20, 1))
    res = kmeans_fit(np.hstack([x, x]), 1)
    np.testing.assert_array_equal(res.assignment.labels, [0, 0])
    assert res.objective == pytest.approx(0.0, abs=1e-20)


def _two_groups(rng, n=50, sizes=(3, 4)):
    base = rng.standard_normal((n, 2)) * 10
    cols = [base[:, g] + 0.1 * rng.standard_normal(n) for g, k in enumerate(sizes) for _ in range(k)]
    return np.column_stack(cols)


def test_kmeans_recovers_separated_groups(rng):
    x = _two_groups(rng)
    points = (x - x.mean(axis=0)).T
    best = min(
        (kmeans_objective(points, np.array(lab)), lab)
        for lab in itertools.product((0, 1), repeat=7)
        if 0 < sum(lab) < 7
    )
    got = kmeans_variables(x, 2, n_starts=5, seed=1)
    assert adjusted_rand_index(got, np.array(best[1])) == 1.0
    assert adjusted_rand_index(got, np.array([0, 0, 0, 1, 1, 1, 1])) == 1.0


def test_kmeans_trace_monotone_and_deterministic(rng):
    x = rng.standard_normal((30, 12))
    a = kmeans_fit(x, 4, n_starts=6, seed=9)
    b = kmeans_fit(x, 4, n_starts=6, seed=9)
    assert np.all(np.diff(a.objective_trace) <= 1e-12)
    np.testing.assert_array_equal(a.assignment.labels, b.assignment.labels)
    assert a.objective == pytest.approx(kmeans_objective((x - x.mean(axis=0)).T, a.assignment.labels))


def test_kmeans_reseeds_empty_clusters():
    x = np.random.default_rng(1).standard_normal((10, 1))
    res = kmeans_fit(np.hstack([x] * 4), 2, n_starts=3)
    assert np.all(res.assignment.sizes > 0)
    assert res.objective == pytest.approx(0.0, abs=1e-20)


def test_kmeans_singletons_when_m_equals_p(rng):
    x = rng.standard_normal((15, 5))
    res = kmeans_fit(x, 5, n_starts=2)
    assert sorted(res.assignment.labels) == [0, 1, 2, 3, 4]
    assert res.objective == 0.0


def test_kmeans_standardize_and_errors(rng):
    x = rng.standard_normal((15, 4)) * [1, 100, 1, 100]
    assert kmeans_variables(x, 2, standardize=True).p == 4
    with pytest.raises(ValueError):
        kmeans_variables(x, 5)
    with pytest.raises(ValueError):
        kmeans_variables(np.ones((5, 3)), 2, standardize=True)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_objective_gram_identity(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(2, 20)), int(rng.integers(1, 12))
    x = rng.standard_normal((n, p))
    labels = rng.integers(0, int(rng.integers(1, p + 1)), p)
    assert kmeans_objective(x.T, labels) == pytest.approx(kmeans_objective_gram(x.T @ x, labels), abs=1e-8)


# ---------------------------------------------------------------- indicator loadings

def test_indicator_loading_examples():
    lam = indicator_loading(ClusterAssignment(np.array([0, 0, 1]), 2), 3, 2)
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(lam, [[r, 0], [r, 0], [0, 1]])
    np.testing.assert_allclose(indicator_loading(ClusterAssignment(np.zeros(4, int), 1)), np.full((4, 1), 0.5))


def test_indicator_loading_errors():
    with pytest.raises(ValueError):
        indicator_loading(ClusterAssignment(np.array([0, 0]), 2))
    with pytest.raises(ValueError):
        indicator_loading(ClusterAssignment(np.array([0, UNASSIGNED]), 1))
    with pytest.raises(ValueError):
        indicator_loading(ClusterAssignment(np.array([0, 1]), 2), p=3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_indicator_loading_is_orthonormal_and_simple(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    p = int(rng.integers(m, 15))
    labels = np.concatenate([np.arange(m), rng.integers(0, m, p - m)])
    lam = indicator_loading(ClusterAssignment(rng.permutation(labels), m))
    np.testing.assert_allclose(lam.T @ lam, np.eye(m), atol=1e-12)
    assert np.all(np.sum(lam != 0, axis=1) == 1)
    # orthonormal indicator loadings also satisfy the relaxed constraint set
    products = lam[:, :, None] * lam[:, None, :]
    assert np.all(products[:, ~np.eye(m, dtype=bool)] == 0)


# ---------------------------------------------------------------- modified k-means oracle

def test_set_partitions_counts():
    # Stirling numbers of the second kind
    assert sum(1 for _ in set_partitions(6, 2)) == 31
    assert sum(1 for _ in set_partitions(5, 3)) == 25
    assert sum(1 for _ in set_partitions(4, 4)) == 1


def test_bruteforce_splits_block_diagonal():
    s = np.zeros((5, 5))
    s[:3, :3] = 0.6
    s[3:, 3:] = 0.5
    s += np.diag([0.4] * 5)
    lam, assign = modified_kmeans_bruteforce(SampleCovariance(s, 100), 2)
    assert adjusted_rand_index(assign, np.array([0, 0, 0, 1, 1])) == 1.0
    np.testing.assert_allclose(lam.T @ lam, np.eye(2), atol=1e-12)


def test_bruteforce_singletons(rng):
    s = sample_covariance(rng.standard_normal((30, 4))).s
    lam, assign = modified_kmeans_bruteforce(s, 4)
    assert sorted(assign.labels) == [0, 1, 2, 3]
    np.testing.assert_allclose(np.abs(lam).sum(axis=1), 1.0)


def test_bruteforce_rejects_large_p():
    with pytest.raises(ValueError):
        modified_kmeans_bruteforce(np.eye(13), 2)


def _frob(s, lam):
    return np.sum((s - lam @ lam.T) ** 2)


def test_bruteforce_matches_every_labelling(rng):
    s = sample_covariance(rng.standard_normal((40, 6)) @ rng.standard_normal((6, 6))).s
    lam, _ = modified_kmeans_bruteforce(s, 2)
    best = np.inf
    for labels in itertools.product(range(2), repeat=6):
        labels = np.array(labels)
        if len(set(labels)) < 2:
            continue
        cand = np.zeros((6, 2))
        for c in range(2):
            idx = labels == c
            cand[idx, c] = np.linalg.eigh(s[np.ix_(idx, idx)])[1][:, -1]
        best = min(best, _frob(s, cand))
    assert _frob(s, lam) == pytest.approx(best, rel=1e-12)


def test_block_eigenvector_beats_random_unit_vectors(rng):
    s = sample_covariance(rng.standard_normal((40, 6)) @ rng.standard_normal((6, 6))).s
    lam, assign = modified_kmeans_bruteforce(s, 2)
    base = _frob(s, lam)
    for _ in range(500):
        cand = np.zeros_like(lam)
        for c in range(2):
            idx = assign.labels == c
            v = rng.standard_normal(idx.sum())
            cand[idx, c] = v / np.linalg.norm(v)
        assert _frob(s, cand) >= base - 1e-12


# ---------------------------------------------------------------- ARI

def test_ari_identity_and_relabeling():
    a = np.array([0, 0, 1, 1, 2, 2])
    assert adjusted_rand_index(a, a) == 1.0
    assert adjusted_rand_index(a, np.array([5, 5, 3, 3, 9, 9])) == 1.0


def test_ari_hand_contingency():
    # pairs within cells 2, row pairs 6, column pairs 3, total 15
    a = np.array([0, 0, 0, 1, 1, 1])
    b = np.array([0, 0, 1, 1, 2, 2])
    expected = (2 - 6 * 3 / 15) / (0.5 * (6 + 3) - 6 * 3 / 15)
    assert adjusted_rand_index(a, b) == pytest.approx(expected)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ari_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    a = rng.integers(0, int(rng.integers(1, 6)), n)
    b = rng.integers(0, int(rng.integers(1, 6)), n)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


def test_ari_errors():
    with pytest.raises(ValueError):
        adjusted_rand_index(np.array([0, 1]), np.array([0, 1, 1]))
    with pytest.raises(ValueError):
        adjusted_rand_index(ClusterAssignment(np.array([0, UNASSIGNED]), 1), np.array([0, 0]))


# ---------------------------------------------------------------- reconstruction

def test_projection_with_orthonormal_loadings(rng):
    q, _ = np.linalg.qr(rng.standard_normal((5, 2)))
    x = rng.standard_normal(5)
    np.testing.assert_allclose(reconstruct(q, np.ones(5), x, "projection"), q @ q.T @ x, atol=1e-12)


def test_posterior_mean_with_zero_loadings(rng):
    np.testing.assert_array_equal(reconstruct(np.zeros((4, 2)), np.ones(4), rng.standard_normal(4)), 0.0)


def test_one_factor_shrinkage():
    l, v = 2.0, 0.5
    lam = np.array([[l]])
    x = np.array([3.0])
    proj = reconstruct(lam, np.array([v]), x, "projection")
    post = reconstruct(lam, np.array([v]), x, "posterior_mean")
    assert post[0] == pytest.approx(l**2 / (l**2 + v) * proj[0])


def test_reconstruction_errors(rng):
    with pytest.raises(np.linalg.LinAlgError):
        reconstruct(np.zeros((3, 1)), np.ones(3), np.ones(3), "projection")
    with pytest.raises(ValueError):
        reconstruct(np.ones((3, 1)), np.ones(3), np.ones(3), "median")


def test_posterior_mean_beats_zero_reconstruction():
    model = make_model("A")
    for seed in range(3):
        x = sample_mvn(model, 300, seed)
        xc = x - x.mean(axis=0)
        ml = fit(sample_covariance(x), 2, PenaltySpec(Family.PRENET, 0.0, 1.0), FitConfig(seed=seed, n_starts=3))
        err = reconstruction_error(ml.params.lam, ml.params.psi, xc)
        assert err <= np.mean(np.sum(xc**2, axis=1))
