"""k-means, bisecting k-means and the child-quotient k-selection curve.

Every matrix is treated as a point in R^(K*K) with the Euclidean (Frobenius)
distance over all entries. Points may also be given as a
:class:`PcaProjection`, which preserves all pairwise distances and so leads to
the same Lloyd trajectories at a fraction of the cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .matrix_core import CorrelationMatrix

log = logging.getLogger(__name__)

MAX_ITER = 300
# Widths at or below this are treated as zero (duplicate points).
ZERO_WIDTH = 1e-10


@dataclass
class MatrixSet:
    items: list[CorrelationMatrix]

    def __post_init__(self):
        if not self.items:
            raise DataError("empty matrix set")
        kinds = {m.kind for m in self.items}
        dims = {m.values.shape for m in self.items}
        if len(kinds) != 1 or len(dims) != 1:
            raise DataError(f"matrix set mixes kinds {kinds} or shapes {dims}")

    def __len__(self):
        return len(self.items)

    @property
    def K(self) -> int:
        return self.items[0].values.shape[0]

    @property
    def flattened_dim(self) -> int:
        return self.K * self.K

    @property
    def kind(self) -> str:
        return self.items[0].kind

    def flat(self) -> np.ndarray:
        return np.stack([m.values.reshape(-1) for m in self.items])


@dataclass
class PcaProjection:
    coordinates: np.ndarray  # N_ep x (N_ep - 1)
    basis: np.ndarray  # K^2 x (N_ep - 1)
    eigenvalues: np.ndarray
    mean: np.ndarray

    def __len__(self):
        return self.coordinates.shape[0]


@dataclass
class SplitNode:
    parent: int
    left: int
    right: int
    d_ctoc: float
    sizes: tuple[int, int, int]  # parent, left, right
    seed: int


@dataclass
class ClusterSolution:
    """A partition of the epochs into k clusters.

    ``labels`` are 1..k. ``nodes[l-1]`` is the hierarchy node id of cluster l
    (only meaningful for bisecting solutions). ``histories`` holds the
    objective J after every Lloyd iteration, one list per restart.
    """

    labels: np.ndarray
    centroids: np.ndarray
    widths: np.ndarray
    sizes: np.ndarray
    objective: float
    nodes: list[int] = field(default_factory=list)
    splits: list[SplitNode] = field(default_factory=list)
    histories: list[list[float]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.sizes)

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


@dataclass
class KSelectionCurve:
    k: list[int]
    mean_quotient: list[float | None]  # sum / contributing clusters
    mean_quotient_over_k: list[float | None]  # sum / k, literal reading
    quotients: list[dict[int, float]]  # per k: label -> xi
    omitted: list[int]


def _points(data) -> np.ndarray:
    if isinstance(data, MatrixSet):
        return data.flat()
    if isinstance(data, PcaProjection):
        return data.coordinates
    if isinstance(data, (list, tuple)) and data and isinstance(data[0], CorrelationMatrix):
        return MatrixSet(list(data)).flat()
    x = np.asarray(data, dtype=float)
    if x.ndim == 3:
        x = x.reshape(len(x), -1)
    return x


def distance(c1, c2) -> float:
    a = c1.values if isinstance(c1, CorrelationMatrix) else np.asarray(c1, dtype=float)
    b = c2.values if isinstance(c2, CorrelationMatrix) else np.asarray(c2, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    out = np.empty((len(x), len(centroids)))
    for j, c in enumerate(centroids):
        diff = x - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _centroids(x, labels, k):
    return np.stack([x[labels == j].mean(axis=0) for j in range(k)])


def _objective(x, labels, centroids) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _repair_empty(x, labels, k):
    """Give each empty cluster the point farthest from its own centroid."""
    while True:
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if not empty.size:
            return labels
        cents = np.stack([x[labels == j].mean(axis=0) if counts[j] else np.zeros(x.shape[1])
                          for j in range(k)])
        d = np.einsum("ij,ij->i", x - cents[labels], x - cents[labels])
        d[counts[labels] < 2] = -1.0  # never empty another cluster
        labels = labels.copy()
        labels[int(np.argmax(d))] = empty[0]


def _lloyd(x, init, max_iter=MAX_ITER):
    k = len(init)
    centroids = x[init].copy()
    labels = None
    history = []
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(x, centroids), axis=1)  # ties -> lowest label
        new = _repair_empty(x, new, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = _centroids(x, labels, k)
        history.append(_objective(x, labels, centroids))
    else:
        log.warning("k-means did not converge in %d iterations", max_iter)
    return labels, centroids, history


def _canonical(labels, k):
    """Relabel so clusters are numbered by their lowest member index."""
    order = []
    for lab in labels:
        if lab not in order:
            order.append(lab)
    mapping = np.empty(k, dtype=int)
    mapping[order] = np.arange(k)
    return mapping[labels]


def _widths(x, labels, centroids):
    k = len(centroids)
    d = np.sqrt(np.einsum("ij,ij->i", x - centroids[labels], x - centroids[labels]))
    return np.array([d[labels == j].mean() for j in range(k)])


def kmeans(data, k: int, restarts: int = 10, seed: int = 0) -> ClusterSolution:
    """Lloyd's algorithm from k distinct random members, best of ``restarts``.

    The solution with the smallest objective J is returned; ties go to the
    earliest restart. Labels are canonical: cluster 1 holds epoch 1, cluster 2
    holds the earliest epoch not in cluster 1, and so on.
    """
    x = _points(data)
    n = len(x)
    if not 1 <= k <= n:
        raise DataError(f"k={k} must lie in [1, {n}]")
    if restarts < 1:
        raise DataError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    histories = []
    for _ in range(restarts):
        init = rng.choice(n, size=k, replace=False)
        labels, cents, hist = _lloyd(x, init)
        histories.append(hist)
        J = hist[-1]
        if best is None or J < best[0]:
            best = (J, labels)
    J, labels = best
    labels = _canonical(labels, k)
    cents = _centroids(x, labels, k)
    return ClusterSolution(
        labels=labels + 1,
        centroids=cents,
        widths=_widths(x, labels, cents),
        sizes=np.bincount(labels, minlength=k),
        objective=_objective(x, labels, cents),
        histories=histories,
    )


def _split_seed(seed: int, split: int) -> int:
    return int(np.random.SeedSequence([seed, split]).generate_state(1)[0])


def bisecting_kmeans(data, k_target: int, restarts: int = 100, seed: int = 0) -> list[ClusterSolution]:
    """Top-down hierarchy: repeatedly split the widest cluster with 2-means.

    Returns the solutions for k = 1, 2, ..., k_target. If every cluster is a
    singleton or has zero width before k_target is reached, the hierarchy
    stops early and the shorter list is returned.
    """
    x = _points(data)
    n = len(x)
    if not 1 <= k_target <= n:
        raise DataError(f"k_target={k_target} must lie in [1, {n}]")

    # node id -> member indices (sorted)
    members = {0: np.arange(n)}
    leaves = [0]
    splits: list[SplitNode] = []
    histories: list[list[float]] = []

    def snapshot():
        labels = np.empty(n, dtype=int)
        for j, node in enumerate(leaves):
            labels[members[node]] = j
        k = len(leaves)
        cents = _centroids(x, labels, k)
        return ClusterSolution(
            labels=labels + 1,
            centroids=cents,
            widths=_widths(x, labels, cents),
            sizes=np.bincount(labels, minlength=k),
            objective=_objective(x, labels, cents),
            nodes=list(leaves),
            splits=list(splits),
            histories=[list(h) for h in histories],
        )

    out = [snapshot()]
    while len(leaves) < k_target:
        sol = out[-1]
        # widest cluster; ties -> larger, then lower label
        order = sorted(range(sol.k), key=lambda j: (-sol.widths[j], -sol.sizes[j], j))
        j = order[0]
        if sol.sizes[j] < 2 or sol.widths[j] <= ZERO_WIDTH:
            log.warning("bisecting k-means stopped at k=%d (target %d): nothing left to split",
                        sol.k, k_target)
            break
        parent = leaves[j]
        idx = members[parent]
        sub_seed = _split_seed(seed, len(splits))
        child = kmeans(x[idx], 2, restarts=restarts, seed=sub_seed)
        histories.extend(child.histories)
        left_idx, right_idx = idx[child.labels == 1], idx[child.labels == 2]
        left, right = 2 * len(splits) + 1, 2 * len(splits) + 2
        members[left], members[right] = left_idx, right_idx
        d_ctoc = float(np.linalg.norm(child.centroids[0] - child.centroids[1]))
        splits.append(SplitNode(parent, left, right, d_ctoc,
                                (len(idx), len(left_idx), len(right_idx)), sub_seed))
        leaves[j] = left
        leaves.append(right)
        out.append(snapshot())
    return out


def k_selection(hierarchy: list[ClusterSolution]) -> KSelectionCurve:
    """Mean child quotient xi = d_CtoC / width for every k of a hierarchy.

    Clusters whose width is zero (singletons, duplicates) have no defined
    quotient and are left out. Two means are reported: over the contributing
    clusters, and the literal sum divided by k.
    """
    ks, means, means_k, quots, omitted = [], [], [], [], []
    for sol in hierarchy:
        born = {}
        for sp in sol.splits:
            born[sp.left] = sp.d_ctoc
            born[sp.right] = sp.d_ctoc
        q, skipped = {}, 0
        for j, node in enumerate(sol.nodes):
            if node not in born:
                continue
            if sol.sizes[j] < 2 or sol.widths[j] <= ZERO_WIDTH:
                skipped += 1
                continue
            q[j + 1] = float(born[node] / sol.widths[j])
        ks.append(sol.k)
        quots.append(q)
        omitted.append(skipped)
        if q:
            total = sum(q.values())
            means.append(total / len(q))
            means_k.append(total / sol.k)
        else:
            means.append(None)
            means_k.append(None)
    return KSelectionCurve(ks, means, means_k, quots, omitted)


def pca_project(data) -> PcaProjection:
    """Project flattened matrices onto the N_ep - 1 leading principal axes.

    The centred data have rank at most N_ep - 1, so the projection is a
    rigid map and keeps every pairwise distance.
    """
    x = _points(data)
    n = len(x)
    if n < 2:
        raise DataError("PCA needs at least 2 matrices")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    r = min(n - 1, len(s))
    basis = vt[:r].T
    return PcaProjection(coordinates=xc @ basis, basis=basis, eigenvalues=s[:r] ** 2 / n, mean=mean)


def lloyd_violations(sol: ClusterSolution, rtol: float = 1e-12) -> int:
    """Count iterations where the objective went up (beyond rounding)."""
    bad = 0
    for hist in sol.histories:
        for a, b in zip(hist, hist[1:]):
            if b > a + rtol * max(abs(a), 1.0):
                bad += 1
    return bad
