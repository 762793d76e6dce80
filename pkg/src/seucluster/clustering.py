"""K-Means, complete-linkage agglomerative and flat-kernel Mean Shift clustering.

All three work on a (standardized) FeatureMatrix and return a Clustering whose
cluster ids are dense and numbered by first appearance in row order, so equal
partitions always produce equal label vectors.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from ._seeding import SplitMix64, derive_seed
from .features import FeatureMatrix

KMEANS = "kmeans"
AGGLOMERATIVE = "agglomerative"
MEAN_SHIFT = "meanshift"


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class Clustering:
    ff_names: tuple
    labels: tuple
    algorithm: str
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.ff_names) != len(self.labels):
            raise ClusteringError("labels and flip-flop names differ in length")
        if set(self.labels) != set(range(self.n_clusters)):
            raise ClusteringError("cluster ids must be dense 0..n_clusters-1")

    @property
    def n_clusters(self) -> int:
        return max(self.labels) + 1 if self.labels else 0

    @property
    def assignment(self) -> dict:
        return dict(zip(self.ff_names, self.labels))

    def members(self) -> list:
        """Flip-flop names per cluster id, each list in name order."""
        out = [[] for _ in range(self.n_clusters)]
        for n, l in zip(self.ff_names, self.labels):
            out[l].append(n)
        return [sorted(m) for m in out]

    def partition(self) -> frozenset:
        return frozenset(frozenset(m) for m in self.members())

    def sizes(self) -> list:
        return [len(m) for m in self.members()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("ff_name", "cluster_id"))
        for n, l in zip(self.ff_names, self.labels):
            w.writerow((n, l))
        return buf.getvalue()

    def sidecar(self) -> str:
        return json.dumps({"algorithm": self.algorithm, "params": self.params, "seed": self.seed,
                           "n_clusters": self.n_clusters}, sort_keys=True, indent=2) + "\n"


def read_clusters_csv(text: str, sidecar: Optional[str] = None) -> Clustering:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["ff_name", "cluster_id"]:
        raise ClusteringError("clusters CSV must start with header ff_name,cluster_id")
    pairs = sorted((r[0], int(r[1])) for r in rows[1:])
    meta = json.loads(sidecar) if sidecar else {}
    return Clustering(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs),
                      meta.get("algorithm", "external"), meta.get("params", {}), meta.get("seed"))


def canonical_labels(raw) -> tuple:
    """Renumber labels densely in order of first appearance."""
    mapping: dict = {}
    return tuple(mapping.setdefault(int(l), len(mapping)) for l in raw)


def _matrix(m) -> np.ndarray:
    x = np.asarray(m.values if isinstance(m, FeatureMatrix) else m, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _names(m, n) -> tuple:
    return m.ff_names if isinstance(m, FeatureMatrix) else tuple(str(i) for i in range(n))


def singletons(m) -> Clustering:
    x = _matrix(m)
    return Clustering(_names(m, len(x)), tuple(range(len(x))), "singletons")


# ---------------------------------------------------------------------------
# K-Means

def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # column at a time keeps memory at n x k and the arithmetic order fixed
    out = np.empty((x.shape[0], centers.shape[0]))
    for j, c in enumerate(centers):
        diff = x - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _kmeanspp(x: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    n = len(x)
    idx = [rng.randbelow(n)]
    d2 = _sq_dists(x, x[idx[0]][None])[:, 0]
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0:
            cum = np.cumsum(d2)
            r = rng.random() * cum[-1]
            i = int(np.searchsorted(cum, r, side="right"))
            i = min(i, n - 1)
            while d2[i] == 0:   # guard against landing on a zero-weight point at the edge
                i -= 1
        else:
            free = [i for i in range(n) if i not in idx]
            i = free[rng.randbelow(len(free))]
        idx.append(i)
        d2 = np.minimum(d2, _sq_dists(x, x[i][None])[:, 0])
    return x[idx].copy()


def _repair_empty(x, labels, centers, k):
    """Give every empty cluster the point farthest from its own centroid."""
    labels = labels.copy()
    centers = centers.copy()
    while True:
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if not len(empty):
            return labels, centers
        e = empty[0]
        d = np.einsum("ij,ij->i", x - centers[labels], x - centers[labels])
        d[counts[labels] < 2] = -1.0      # never empty another cluster
        i = int(np.argmax(d))
        old = labels[i]
        labels[i] = e
        centers[e] = x[i]
        centers[old] = x[labels == old].mean(axis=0)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd iterations from ``centers``.

    Returns ``(labels, centers, inertia_history)``; the history holds the
    inertia after every assignment step.
    """
    k = len(centers)
    d = _sq_dists(x, centers)
    labels = np.argmin(d, axis=1)
    labels, centers = _repair_empty(x, labels, centers, k)
    history = [float(np.sum((x - centers[labels]) ** 2))]
    for _ in range(max_iter):
        centers = np.stack([x[labels == j].mean(axis=0) for j in range(k)])
        new = np.argmin(_sq_dists(x, centers), axis=1)
        new, centers = _repair_empty(x, new, centers, k)
        inertia = float(np.sum((x - centers[new]) ** 2))
        changed = not np.array_equal(new, labels)
        labels = new
        prev = history[-1]
        history.append(inertia)
        if not changed:
            break
        if prev > 0 and (prev - inertia) / prev < tol:
            break
    centers = np.stack([x[labels == j].mean(axis=0) for j in range(k)])
    return labels, centers, history


def inertia(x, labels) -> float:
    x = _matrix(x)
    labels = np.asarray(labels)
    return float(sum(np.sum((x[labels == j] - x[labels == j].mean(axis=0)) ** 2) for j in np.unique(labels)))


def kmeans(m, k: int, seed: int = 0, max_iter: int = 300, n_restarts: int = 10, tol: float = 1e-6) -> Clustering:
    x = _matrix(m)
    n = len(x)
    if k < 1:
        raise ClusteringError("k must be at least 1")
    if k > n:
        raise ClusteringError(f"k={k} exceeds the number of rows ({n})")
    best = None
    for r in range(n_restarts):
        rng = SplitMix64(derive_seed(seed, "kmeans", r))
        labels, centers, _ = lloyd(x, _kmeanspp(x, k, rng), max_iter, tol)
        sse = float(np.sum((x - centers[labels]) ** 2))
        if best is None or sse < best[0]:
            best = (sse, labels, r)
    params = {"k": k, "max_iter": max_iter, "n_restarts": n_restarts, "tol": tol,
              "init": "k-means++", "inertia": best[0]}
    return Clustering(_names(m, n), canonical_labels(best[1]), KMEANS, params, seed)


# ---------------------------------------------------------------------------
# agglomerative

def l1_distances(x: np.ndarray) -> np.ndarray:
    n = len(x)
    d = np.empty((n, n))
    for i in range(n):
        d[i] = np.abs(x - x[i]).sum(axis=1)
    return d


def agglomerative_merges(m, k: int = 1):
    """Complete-linkage L1 merging down to ``k`` clusters.

    Returns ``(labels, merges)`` where ``merges`` lists ``(id_a, id_b, distance)``.
    A cluster's id is the smallest row index it contains; among pairs at equal
    distance the one with the smallest ``(id_a, id_b)`` merges first.
    """
    x = _matrix(m)
    n = len(x)
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} outside 1..{n}")
    d = l1_distances(x)
    d[np.tril_indices(n)] = np.inf
    owner = np.arange(n)          # row -> cluster id
    merges = []
    for _ in range(n - k):
        flat = int(np.argmin(d))
        a, b = divmod(flat, n)
        dist = float(d[a, b])
        merges.append((a, b, dist))
        # complete linkage: new distance is the max of the two old ones
        col = np.maximum(np.minimum(d[:, a], d[a, :]), np.minimum(d[:, b], d[b, :]))
        d[:a, a] = col[:a]
        d[a, a + 1:] = col[a + 1:]
        d[b, :] = np.inf
        d[:, b] = np.inf
        d[a, a] = np.inf
        owner[owner == b] = a
    return canonical_labels(owner), merges


def agglomerative(m, k: int, linkage: str = "complete", metric: str = "l1") -> Clustering:
    if linkage != "complete" or metric != "l1":
        raise ClusteringError("only complete linkage with the L1 metric is implemented")
    x = _matrix(m)
    labels, merges = agglomerative_merges(x, k)
    params = {"k": k, "linkage": linkage, "metric": metric,
              "last_merge_distance": merges[-1][2] if merges else 0.0}
    return Clustering(_names(m, len(x)), labels, AGGLOMERATIVE, params)


# ---------------------------------------------------------------------------
# mean shift

def _within(centers: np.ndarray, x: np.ndarray, w: float) -> np.ndarray:
    """Boolean (len(centers), len(x)) mask of L2 distance <= w."""
    d2 = np.empty((len(centers), len(x)))
    for j in range(x.shape[1]):
        diff = centers[:, j][:, None] - x[:, j][None, :]
        if j == 0:
            d2[:] = diff * diff
        else:
            d2 += diff * diff
    return d2 <= w * w


def mean_shift_centers(x: np.ndarray, w: float, max_iter: int = 300, shift_tol: float = 1e-3) -> tuple:
    """Shift one window per point to convergence; return (centers, window counts)."""
    centers = x.copy()
    active = np.ones(len(x), dtype=bool)
    chunk = 256
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            mask = _within(centers[part], x, w)
            cnt = mask.sum(axis=1)
            new = (mask.astype(float) @ x) / cnt[:, None]
            shift = np.sqrt(((new - centers[part]) ** 2).sum(axis=1))
            centers[part] = new
            active[part[shift < shift_tol]] = False
    counts = np.concatenate([_within(centers[s:s + chunk], x, w).sum(axis=1) for s in range(0, len(x), chunk)])
    return centers, counts


def mean_shift_fit(x, bandwidth: float, max_iter: int = 300, shift_tol: float = 1e-3) -> tuple:
    """Return ``(raw labels, surviving centers)`` for flat-kernel mean shift.

    Converged windows are visited by decreasing point count (ties by seed
    index); a center is dropped when it lies closer than ``bandwidth`` to one
    already kept. Points go to their nearest surviving center.
    """
    if not bandwidth > 0:
        raise ClusteringError("bandwidth must be positive")
    x = _matrix(x)
    centers, counts = mean_shift_centers(x, bandwidth, max_iter, shift_tol)
    order = sorted(range(len(x)), key=lambda i: (-int(counts[i]), i))
    kept = []
    w2 = bandwidth * bandwidth
    for i in order:
        if not kept or np.min(np.sum((centers[kept] - centers[i]) ** 2, axis=1)) >= w2:
            kept.append(i)
    surv = centers[kept]
    return np.argmin(_sq_dists(x, surv), axis=1), surv


def mean_shift(m, bandwidth: float, max_iter: int = 300, shift_tol: float = 1e-3) -> Clustering:
    x = _matrix(m)
    labels, surv = mean_shift_fit(x, bandwidth, max_iter, shift_tol)
    params = {"bandwidth": bandwidth, "max_iter": max_iter, "shift_tol": shift_tol, "kernel": "flat",
              "seeding": "all points"}
    return Clustering(_names(m, len(x)), canonical_labels(labels), MEAN_SHIFT, params)


@dataclass(frozen=True)
class BandwidthChoice:
    bandwidth: float
    n_clusters: int
    exact: bool
    evaluated: tuple      # ((w, n_clusters), ...) in evaluation order


def _default_bracket(x: np.ndarray) -> tuple:
    span = float(np.sqrt(((x.max(axis=0) - x.min(axis=0)) ** 2).sum()))
    return (max(span, 1.0) * 1e-6, max(span, 1.0) * 1.01)


def pick_bandwidth(m, target_nc: int, w_lo: Optional[float] = None, w_hi: Optional[float] = None,
                   max_evals: int = 32, **kw) -> BandwidthChoice:
    """Bisect (geometrically) on the window size until mean shift yields ``target_nc`` clusters.

    Falls back to the evaluated window whose cluster count is closest to the
    target (``exact=False``) when the bracket is exhausted.
    """
    x = _matrix(m)
    if not 1 <= target_nc <= len(x):
        raise ClusteringError(f"target {target_nc} outside 1..{len(x)}")
    lo0, hi0 = _default_bracket(x)
    lo = lo0 if w_lo is None else w_lo
    hi = hi0 if w_hi is None else w_hi
    if not 0 < lo < hi:
        raise ClusteringError("need 0 < w_lo < w_hi")
    evaluated = []

    def nc(w):
        n = mean_shift(x, w, **kw).n_clusters
        evaluated.append((w, n))
        return n

    best = None
    for it in range(max_evals):
        w = lo if it == 0 else hi if it == 1 else math.sqrt(lo * hi)
        n = nc(w)
        if best is None or abs(n - target_nc) < abs(best[1] - target_nc):
            best = (w, n)
        if n == target_nc:
            break
        if it < 2:
            if (it == 0 and n < target_nc) or (it == 1 and n > target_nc):
                break     # target outside the bracket
            continue
        if n > target_nc:
            lo = w
        else:
            hi = w
    return BandwidthChoice(best[0], best[1], best[1] == target_nc, tuple(evaluated))


# ---------------------------------------------------------------------------

DEFAULT_FRACTIONS = (Fraction(5, 100), Fraction(10, 100), Fraction(20, 100))


def target_count(n_ff: int, frac) -> int:
    """``round(n_ff * frac)`` with halves rounded up, at least 1."""
    if n_ff < 1:
        raise ClusteringError("need at least one flip-flop")
    f = Fraction(str(frac)) if isinstance(frac, float) else Fraction(frac)
    return max(1, math.floor(n_ff * f + Fraction(1, 2)))


def target_counts(n_ff: int) -> dict:
    """Cluster counts at 5 %, 10 % and 20 % of the flip-flop count."""
    return {float(f): target_count(n_ff, f) for f in DEFAULT_FRACTIONS}
