"""Solution-diversity metrics: pass@k, distinct-answer counts, entropy,
density clusters, and a spectral diversity score.

Combinatorial terms run in log-gamma space so profiles with thousands of
members stay stable. The distinct-answer expectation treats a binomial
C(a, k) as zero whenever a < k, which makes every cluster count once as soon
as k exceeds the leftover pool; the normalized area under that curve is kept
exactly as defined (a single cluster at K_max = 60 scores 60/59, slightly
above 1, on purpose).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .core import SelfSearchError


class MetricError(SelfSearchError):
    """A metric was called with out-of-domain arguments."""


class OracleError(SelfSearchError):
    """An equivalence oracle misbehaved (non-bool, irreflexive, asymmetric)."""


@dataclass(frozen=True)
class ClusterProfile:
    """Cluster sizes of one task's answer set."""

    sizes: Tuple[int, ...]

    def __post_init__(self):
        if any((not isinstance(s, (int, np.integer))) or s < 1
               for s in self.sizes):
            raise MetricError(f"cluster sizes must be positive ints: {self.sizes}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    @property
    def total(self) -> int:
        return sum(self.sizes)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k: 1 - C(n-c, k)/C(n, k).

    Evaluated as one exact-integer division, so the result is the correctly
    rounded double of the underlying rational and agrees bit for bit with a
    subset-enumeration count divided by C(n, k).
    """
    if k < 1 or k > n:
        raise MetricError(f"k must lie in [1, n], got k={k}, n={n}")
    if c < 0 or c > n:
        raise MetricError(f"c must lie in [0, n], got c={c}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    total = math.comb(n, k)
    return (total - math.comb(n - c, k)) / total


def da_at_k(profile: ClusterProfile, k: int) -> float:
    """Expected number of distinct clusters hit by a uniform k-subset."""
    n = profile.total
    if k < 1 or k > n:
        raise MetricError(f"k must lie in [1, N], got k={k}, N={n}")
    total = math.comb(n, k)
    out = 0.0
    for s in profile.sizes:
        if n - s < k:
            out += 1.0
        else:
            out += (total - math.comb(n - s, k)) / total
    return out


def ea(profile: ClusterProfile) -> float:
    """Effective answer count: exp of the cluster-share entropy."""
    if not profile.sizes:
        raise MetricError("effective answers of an empty profile")
    p = np.array(profile.sizes, dtype=np.float64) / profile.total
    return float(np.exp(-(p * np.log(p)).sum()))


def naudc(profile: ClusterProfile, k_max: int) -> float:
    """Normalized area under the distinct-answer curve, literal form."""
    if k_max < 2:
        raise MetricError(f"k_max must be >= 2, got {k_max}")
    return sum(da_at_k(profile, k) for k in range(1, k_max + 1)) / (k_max - 1)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Plain density clustering; returns labels with -1 for noise.

    A point is core when at least min_pts points (itself included) sit
    within eps of it. Core points within eps of each other share a cluster;
    non-core points adopt the cluster of the first core neighbor found in
    index order.
    """
    if eps <= 0:
        raise MetricError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise MetricError(f"min_pts must be >= 1, got {min_pts}")
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    near = d2 <= eps * eps
    core = near.sum(axis=1) >= min_pts
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster
        frontier = [i]
        while frontier:
            j = frontier.pop()
            for nb in np.flatnonzero(near[j]):
                if labels[nb] == -1:
                    labels[nb] = cluster
                    if core[nb]:
                        frontier.append(int(nb))
        cluster += 1
    return labels


def cluster_count(labels: np.ndarray) -> int:
    """Clusters plus noise points, each noise point its own singleton."""
    labels = np.asarray(labels)
    return int(len(set(labels[labels >= 0].tolist())) + (labels == -1).sum())


def aec(vector_sets: Sequence[np.ndarray], eps: float, min_pts: int) -> float:
    """Average density-cluster count per task (noise counts as singletons)."""
    if not vector_sets:
        raise MetricError("aec needs at least one task's vectors")
    counts = [cluster_count(dbscan(np.asarray(v), eps, min_pts))
              for v in vector_sets]
    return float(np.mean(counts))


def g_vendi(vectors: np.ndarray, proj_dim: int, seed: int) -> float:
    """Spectral diversity: exp-entropy of the normalized Gram spectrum.

    Rows are unit-normalized (zero rows dropped with a warning), pushed
    through a seeded Gaussian projection to proj_dim, and the eigenvalues of
    the 1/n-scaled Gram matrix are renormalized to sum to one.
    """
    if proj_dim < 1:
        raise MetricError(f"proj_dim must be >= 1, got {proj_dim}")
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise MetricError("vectors must be a non-empty 2-d array")
    norms = np.linalg.norm(X, axis=1)
    keep = norms > 0
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} zero vectors", UserWarning)
        X, norms = X[keep], norms[keep]
    if X.shape[0] == 0:
        raise MetricError("all vectors were zero")
    Xn = X / norms[:, None]
    rng = np.random.default_rng([0x47564E44, seed])
    proj = rng.standard_normal((X.shape[1], proj_dim)) / math.sqrt(proj_dim)
    Xp = Xn @ proj
    gram = Xp @ Xp.T / Xp.shape[0]
    eigs = np.linalg.eigvalsh(gram)
    eigs = np.clip(eigs, 0.0, None)
    total = eigs.sum()
    if total <= 0:
        raise MetricError("projected vectors have an empty spectrum")
    lam = eigs / total
    lam = lam[lam > 0]
    return float(np.exp(-(lam * np.log(lam)).sum()))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def cluster_labels(items: Sequence, oracle: Callable) -> List[int]:
    """Union-find closure of a pairwise equivalence oracle.

    The oracle is checked reflexive and symmetric on the pairs it is asked;
    transitivity holds by construction of the closure. Labels are dense ints
    in order of first appearance.
    """
    n = len(items)
    uf = _UnionFind(n)
    for i in range(n):
        v = oracle(items[i], items[i])
        if not isinstance(v, (bool, np.bool_)):
            raise OracleError(f"oracle returned non-bool {v!r}")
        if not v:
            raise OracleError(f"oracle is not reflexive at item {i}")
    for i in range(n):
        for j in range(i + 1, n):
            ij = oracle(items[i], items[j])
            ji = oracle(items[j], items[i])
            for v in (ij, ji):
                if not isinstance(v, (bool, np.bool_)):
                    raise OracleError(f"oracle returned non-bool {v!r}")
            if bool(ij) != bool(ji):
                raise OracleError(f"oracle is asymmetric on items ({i}, {j})")
            if ij:
                uf.union(i, j)
    roots = [uf.find(i) for i in range(n)]
    order: dict = {}
    labels = []
    for r in roots:
        if r not in order:
            order[r] = len(order)
        labels.append(order[r])
    return labels


def cluster_by_equivalence(items: Sequence, oracle: Callable) -> ClusterProfile:
    """Cluster sizes induced by the oracle, in order of first appearance."""
    labels = cluster_labels(items, oracle)
    if not labels:
        return ClusterProfile(sizes=())
    counts = [0] * (max(labels) + 1)
    for lab in labels:
        counts[lab] += 1
    return ClusterProfile(sizes=tuple(counts))


def exact_bits_oracle(a: np.ndarray, b: np.ndarray) -> bool:
    """Answers are equivalent iff their bit vectors match exactly."""
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def write_vectors(entries: Sequence[Tuple[int, str, np.ndarray]], path) -> None:
    """One line per task: {"task", "kind", "vectors"}."""
    with open(path, "w") as fh:
        for task_id, kind, vecs in entries:
            row = {"task": task_id, "kind": kind,
                   "vectors": [[float(v) for v in r] for r in np.asarray(vecs)]}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_vectors(path) -> List[Tuple[int, str, np.ndarray]]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out.append((row["task"], row["kind"],
                        np.array(row["vectors"], dtype=np.float64)))
    return out
