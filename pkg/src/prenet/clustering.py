"""
Variables clustering from perfectly simple loadings, and the k-means baseline.

A loading matrix with at most one nonzero per row is a hard clustering of the
variables: row i belongs to the cluster of its nonzero column. The k-means
baseline clusters the column vectors of the data matrix. Labels are 0-based
and ``UNASSIGNED`` (-1) marks variables with an all-zero loading row.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import SampleCovariance, is_perfect_simple

UNASSIGNED = -1


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Cluster id per variable, in ``0..n_clusters-1`` or ``UNASSIGNED``."""

    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValueError("labels must be a vector")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be positive")
        if np.any((labels < UNASSIGNED) | (labels >= self.n_clusters)):
            raise ValueError(f"labels must lie in [0, {self.n_clusters}) or be {UNASSIGNED}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def p(self) -> int:
        return self.labels.size

    @property
    def sizes(self) -> np.ndarray:
        """Number of variables in each cluster."""
        assigned = self.labels[self.labels != UNASSIGNED]
        return np.bincount(assigned, minlength=self.n_clusters)

    @property
    def has_unassigned(self) -> bool:
        return bool(np.any(self.labels == UNASSIGNED))


@dataclass(eq=False)
class KMeansResult:
    assignment: ClusterAssignment
    objective: float
    objective_trace: np.ndarray
    n_iter: int


def clusters_from_pss(lam, zero_tol=0.0) -> ClusterAssignment:
    """Cluster of each variable read off a perfectly simple loading matrix.

    Raises ValueError if some row has more than one loading above ``zero_tol``.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 2:
        raise ValueError("loadings must be a matrix")
    if not is_perfect_simple(lam, zero_tol):
        raise ValueError("loadings do not have perfect simple structure")
    nz = np.abs(lam) > zero_tol
    labels = np.where(nz.any(axis=1), np.argmax(nz, axis=1), UNASSIGNED)
    return ClusterAssignment(labels, lam.shape[1])


def _column_points(data, standardize):
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be an n x p matrix")
    x = x - x.mean(axis=0)
    if standardize:
        sd = np.sqrt(np.mean(x**2, axis=0))
        if np.any(sd == 0):
            raise ValueError("cannot standardize a zero-variance column")
        x = x / sd
    return x.T  # one row per variable


def kmeans_objective(points, labels) -> float:
    """Within-cluster sum of squared distances to the cluster means.

    ``points`` has one row per variable. Unassigned points are ignored.
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    total = 0.0
    for c in np.unique(labels[labels != UNASSIGNED]):
        block = points[labels == c]
        total += float(np.sum((block - block.mean(axis=0)) ** 2))
    return total


def kmeans_objective_gram(gram, labels) -> float:
    """The same objective written through the Gram matrix s = X'X.

    Equals sum_i s_ii - sum_j (1/p_j) sum_{i, i' in C_j} s_ii'.
    """
    gram = np.asarray(gram, dtype=float)
    labels = np.asarray(labels)
    total = float(np.trace(gram))
    for c in np.unique(labels[labels != UNASSIGNED]):
        idx = np.flatnonzero(labels == c)
        total -= float(gram[np.ix_(idx, idx)].sum()) / idx.size
    return total


def _lloyd(points, m, rng, max_iter):
    p = points.shape[0]
    centers = points[rng.choice(p, size=m, replace=False)].copy()
    labels = np.full(p, -1)
    trace = []
    for it in range(1, max_iter + 1):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        # an emptied cluster takes the point farthest from its own center
        for c in range(m):
            if not np.any(new == c):
                own = d2[np.arange(p), new]
                movable = np.array([np.sum(new == new[i]) > 1 for i in range(p)])
                far = int(np.argmax(np.where(movable, own, -np.inf)))
                new[far] = c
        for c in range(m):
            centers[c] = points[new == c].mean(axis=0)
        trace.append(kmeans_objective(points, new))
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, np.array(trace), it


def kmeans_fit(data, m: int, n_starts: int = 10, seed: int = 0, standardize: bool = False,
               max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm on the centered columns of ``data``, best of several starts.

    Parameters
    ----------
    data : (n, p) array
        Observations in rows; the p columns are the points being clustered.
    m : int
        Number of clusters, at most p.
    n_starts : int
        Random initial center sets; the lowest final objective wins, and the
        first start wins ties.
    seed : int
    standardize : bool
        Scale each centered column to unit variance first.
    """
    points = _column_points(data, standardize)
    p = points.shape[0]
    if not 1 <= m <= p:
        raise ValueError(f"number of clusters must satisfy 1 <= m <= p={p}, got {m}")
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    best = None
    for ss in np.random.SeedSequence(seed).spawn(n_starts):
        labels, trace, it = _lloyd(points, m, np.random.default_rng(ss), max_iter)
        if best is None or trace[-1] < best.objective:
            best = KMeansResult(ClusterAssignment(labels, m), float(trace[-1]), trace, it)
    return best


def kmeans_variables(data, m: int, n_starts: int = 10, seed: int = 0,
                     standardize: bool = False) -> ClusterAssignment:
    """Cluster the variables (columns) of ``data`` with k-means."""
    return kmeans_fit(data, m, n_starts, seed, standardize).assignment


def indicator_loading(assign: ClusterAssignment, p: Optional[int] = None,
                      m: Optional[int] = None) -> np.ndarray:
    """Loadings 1/sqrt(p_j) on each variable's cluster column and 0 elsewhere.

    The columns are orthonormal. ``p`` and ``m`` are checked against the
    assignment when given.
    """
    if p is not None and p != assign.p:
        raise ValueError(f"assignment has {assign.p} variables, expected {p}")
    if m is not None and m != assign.n_clusters:
        raise ValueError(f"assignment has {assign.n_clusters} clusters, expected {m}")
    if assign.has_unassigned:
        raise ValueError("every variable must be assigned")
    sizes = assign.sizes
    if np.any(sizes == 0):
        raise ValueError("every cluster must be nonempty")
    lam = np.zeros((assign.p, assign.n_clusters))
    lam[np.arange(assign.p), assign.labels] = 1.0 / np.sqrt(sizes[assign.labels])
    return lam


def set_partitions(p: int, m: int):
    """Every partition of range(p) into exactly m labelled-by-first-appearance blocks."""
    labels = [0] * p

    def rec(i, used):
        if p - i < m - used:
            return
        if i == p:
            if used == m:
                yield np.array(labels)
            return
        for c in range(min(used + 1, m)):
            labels[i] = c
            yield from rec(i + 1, max(used, c + 1))

    if p >= 1:
        labels[0] = 0
        yield from rec(1, 1)


def _top_eigvec(block):
    vals, vecs = np.linalg.eigh(block)
    v = vecs[:, -1]
    return vals[-1], v if v.sum() >= 0 else -v


MAX_BRUTEFORCE_P = 12


def modified_kmeans_bruteforce(cov, m: int):
    """Exact minimizer of ||S - L L'||^2 over perfectly simple L with L'L = I.

    For a fixed clustering the best unit column is the leading eigenvector of
    the cluster's block of S, so the problem reduces to maximizing the sum of
    leading block eigenvalues over all partitions into m nonempty clusters.
    Meant as a test oracle; p is limited to 12.

    Returns
    -------
    lam : (p, m) array
    assignment : ClusterAssignment
    """
    s = cov.s if isinstance(cov, SampleCovariance) else np.asarray(cov, dtype=float)
    p = s.shape[0]
    if p > MAX_BRUTEFORCE_P:
        raise ValueError(f"exhaustive search is limited to p <= {MAX_BRUTEFORCE_P}")
    if not 1 <= m <= p:
        raise ValueError(f"number of clusters must satisfy 1 <= m <= p={p}, got {m}")
    best_val, best_labels = -np.inf, None
    for labels in set_partitions(p, m):
        val = sum(np.linalg.eigvalsh(s[np.ix_(labels == c, labels == c)])[-1] for c in range(m))
        if val > best_val + 1e-12:
            best_val, best_labels = val, labels
    lam = np.zeros((p, m))
    for c in range(m):
        idx = np.flatnonzero(best_labels == c)
        lam[idx, c] = _top_eigvec(s[np.ix_(idx, idx)])[1]
    return lam, ClusterAssignment(best_labels, m)


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected Rand index of two partitions.

    Accepts ClusterAssignment objects or plain label vectors; labels are
    arbitrary hashable ids. Two single-cluster partitions score 1.
    """
    la = np.asarray(a.labels if isinstance(a, ClusterAssignment) else a)
    lb = np.asarray(b.labels if isinstance(b, ClusterAssignment) else b)
    if la.shape != lb.shape or la.ndim != 1:
        raise ValueError("partitions must be label vectors of equal length")
    if np.any(la == UNASSIGNED) or np.any(lb == UNASSIGNED):
        raise ValueError("partitions must not contain unassigned variables")
    _, ia = np.unique(la, return_inverse=True)
    _, ib = np.unique(lb, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)

    def pairs(x):
        return float(np.sum(x * (x - 1) / 2))

    index = pairs(table)
    rows = pairs(table.sum(axis=1))
    cols = pairs(table.sum(axis=0))
    total = la.size * (la.size - 1) / 2
    expected = rows * cols / total if total else 0.0
    top = 0.5 * (rows + cols)
    if top == expected:
        return 1.0
    return (index - expected) / (top - expected)


def reconstruct(lam, psi, x, method: str = "posterior_mean"):
    """Rebuild observations from their factor representation.

    ``posterior_mean`` gives lam M^-1 lam' Psi^-1 x with M = lam' Psi^-1 lam + I.
    ``projection`` gives lam (lam' lam)^-1 lam' x. ``x`` may be a p-vector
    or an n x p matrix of rows.
    """
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(x, dtype=float)
    rows = x if x.ndim == 2 else x[None, :]
    if method == "posterior_mean":
        psi = np.asarray(psi, dtype=float)
        lam_psi = lam / psi[:, None]
        m_mat = lam.T @ lam_psi + np.eye(lam.shape[1])
        scores = np.linalg.solve(m_mat, lam_psi.T @ rows.T)
    elif method == "projection":
        gram = lam.T @ lam
        if np.linalg.matrix_rank(gram) < gram.shape[0]:
            raise np.linalg.LinAlgError("loadings have linearly dependent columns")
        scores = np.linalg.solve(gram, lam.T @ rows.T)
    else:
        raise ValueError(f"unknown reconstruction method {method!r}")
    out = (lam @ scores).T
    return out if x.ndim == 2 else out[0]


def reconstruction_error(lam, psi, data, method: str = "posterior_mean") -> float:
    """Mean over rows of the squared reconstruction error."""
    data = np.asarray(data, dtype=float)
    return float(np.mean(np.sum((data - reconstruct(lam, psi, data, method)) ** 2, axis=1)))
