"""Selective-mitigation curves, baselines and cluster-quality metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ._seeding import SplitMix64, derive_seed
from .clustering import Clustering
from .features import FeatureMatrix


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MitigationCurve:
    strategy: str
    fractions: tuple
    residuals: tuple
    degenerate: bool = False    # every rate was zero; curve is flat at 0

    @property
    def points(self) -> list:
        return list(zip(self.fractions, self.residuals))

    def at(self, fraction: float) -> float:
        return float(np.interp(fraction, self.fractions, self.residuals))


def cluster_rates(cl: Clustering, ff_rates: Mapping[str, float]) -> list:
    """Unweighted mean of member rates, indexed by cluster id."""
    missing = sorted(set(cl.ff_names) - set(ff_rates))
    if missing:
        raise EvaluationError(f"no rate for flip-flop(s): {', '.join(missing)}")
    return [math.fsum(ff_rates[f] for f in m) / len(m) for m in cl.members()]


def mitigation_curve(order: Sequence[str], rates: Mapping[str, float], strategy: str = "custom") -> MitigationCurve:
    """Residual sensitivity after protecting each prefix of ``order``.

    The residual after protecting ``m`` flip-flops is the summed rate of the
    unprotected ones over the total.
    """
    if sorted(order) != sorted(rates):
        raise EvaluationError("order must be a permutation of the rated flip-flops")
    n = len(order)
    if n == 0:
        raise EvaluationError("nothing to protect")
    # suffix sums: exact 0 at the end, non-increasing by construction
    suffix = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + float(rates[order[i]])
    total = suffix[0]
    fractions = tuple(m / n for m in range(n + 1))
    if total == 0:
        return MitigationCurve(strategy, fractions, (0.0,) * (n + 1), degenerate=True)
    return MitigationCurve(strategy, fractions, tuple(s / total for s in suffix))


def ideal_order(rates: Mapping[str, float]) -> list:
    return sorted(rates, key=lambda f: (-rates[f], f))


def clustered_order(cl: Clustering, group_rates: Sequence[float]) -> list:
    """Clusters by rate descending (ties: lower id first), members in name order."""
    if len(group_rates) != cl.n_clusters:
        raise EvaluationError("need one rate per cluster")
    members = cl.members()
    ranked = sorted(range(cl.n_clusters), key=lambda k: (-group_rates[k], k))
    return [f for k in ranked for f in members[k]]


def ideal_curve(rates: Mapping[str, float]) -> MitigationCurve:
    return mitigation_curve(ideal_order(rates), rates, "ideal")


def clustered_curve(cl: Clustering, rates: Mapping[str, float], group_rates: Optional[Sequence[float]] = None,
                    strategy: Optional[str] = None) -> MitigationCurve:
    """Curve from protecting whole clusters, most sensitive first.

    ``group_rates`` defaults to the mean per-flip-flop rate of each cluster;
    pass rates from a per-cluster campaign to rank the way the real flow does.
    """
    gr = cluster_rates(cl, rates) if group_rates is None else list(group_rates)
    name = strategy or f"{cl.algorithm}_{cl.n_clusters}"
    return mitigation_curve(clustered_order(cl, gr), rates, name)


def random_baseline(rates: Mapping[str, float], n_runs: int = 100, seed: int = 0) -> MitigationCurve:
    """Mean residual over ``n_runs`` uniformly random protection orders."""
    if n_runs < 1:
        raise EvaluationError("n_runs must be positive")
    names = sorted(rates)
    acc = None
    for r in range(n_runs):
        order = list(names)
        SplitMix64(derive_seed(seed, "random_baseline", r)).shuffle(order)
        res = np.array(mitigation_curve(order, rates).residuals)
        acc = res if acc is None else acc + res
    base = mitigation_curve(names, rates)
    return MitigationCurve(f"random_{n_runs}", base.fractions, tuple((acc / n_runs).tolist()), base.degenerate)


def curve_gap(a: MitigationCurve, b: MitigationCurve) -> float:
    """Signed trapezoidal area of ``a - b`` over the union of both fraction grids."""
    grid = np.union1d(np.asarray(a.fractions), np.asarray(b.fractions))
    diff = np.interp(grid, a.fractions, a.residuals) - np.interp(grid, b.fractions, b.residuals)
    return float(np.sum((diff[1:] + diff[:-1]) * np.diff(grid)) / 2.0)


# ---------------------------------------------------------------------------
# quality

@dataclass(frozen=True)
class QualityReport:
    mean_var: float
    weighted_var: float
    max_diff: float
    davies_bouldin: Optional[float]
    n_clusters: int
    mean_size: float
    std_size: float

    def dumps(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def _pvar(xs) -> float:
    mu = math.fsum(xs) / len(xs)
    return math.fsum((x - mu) ** 2 for x in xs) / len(xs)


def quality_metrics(cl: Clustering, rates: Mapping[str, float]) -> tuple:
    """``(mean_var, weighted_var, max_diff)`` of member rates within clusters.

    The weighted variance is ``sum(size_c * var_c) / n_clusters``.
    """
    members = cl.members()
    missing = sorted(set(cl.ff_names) - set(rates))
    if missing:
        raise EvaluationError(f"no rate for flip-flop(s): {', '.join(missing)}")
    variances = []
    weighted = []
    diffs = []
    for m in members:
        rs = [rates[f] for f in m]
        v = _pvar(rs)
        variances.append(v)
        weighted.append(len(m) * v)
        diffs.append(max(rs) - min(rs))
    nc = len(members)
    return math.fsum(variances) / nc, math.fsum(weighted) / nc, max(diffs)


def davies_bouldin(m, cl: Clustering) -> float:
    """Davies-Bouldin index with L2 scatter and centroid separation."""
    x = np.asarray(m.values if isinstance(m, FeatureMatrix) else m, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(cl.labels)
    k = cl.n_clusters
    if k < 2:
        raise EvaluationError("Davies-Bouldin needs at least two clusters")
    cents = np.stack([x[labels == i].mean(axis=0) for i in range(k)])
    scatter = np.array([np.sqrt(((x[labels == i] - cents[i]) ** 2).sum(axis=1)).mean() for i in range(k)])
    sep = np.sqrt(((cents[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2))
    off = ~np.eye(k, dtype=bool)
    if np.any(sep[off] == 0):
        i, j = np.argwhere((sep == 0) & off)[0]
        raise EvaluationError(f"clusters {i} and {j} share a centroid")
    ratio = np.where(off, (scatter[:, None] + scatter[None, :]) / np.where(off, sep, 1.0), -np.inf)
    return float(ratio.max(axis=1).mean())


def quality_report(cl: Clustering, rates: Mapping[str, float], m=None) -> QualityReport:
    mv, wv, md = quality_metrics(cl, rates)
    sizes = np.array(cl.sizes(), dtype=float)
    db = None
    if m is not None and cl.n_clusters >= 2:
        try:
            db = davies_bouldin(m, cl)
        except EvaluationError:
            db = None
    return QualityReport(mv, wv, md, db, cl.n_clusters, len(cl.ff_names) / cl.n_clusters, float(sizes.std()))


def curves_to_csv(curves: Sequence[MitigationCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("strategy", "fraction", "residual"))
    for c in curves:
        for f, r in zip(c.fractions, c.residuals):
            w.writerow((c.strategy, repr(f), repr(r)))
    return buf.getvalue()


def read_curves_csv(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["strategy", "fraction", "residual"]:
        raise EvaluationError("curve CSV must start with header strategy,fraction,residual")
    out: dict = {}
    for s, f, r in rows[1:]:
        out.setdefault(s, ([], []))
        out[s][0].append(float(f))
        out[s][1].append(float(r))
    return {s: MitigationCurve(s, tuple(fs), tuple(rs)) for s, (fs, rs) in out.items()}
