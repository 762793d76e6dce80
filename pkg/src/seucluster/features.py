"""Per flip-flop feature vectors (17 structural + 3 activity) and the feature matrix."""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .circuit import CircuitGraph, FFDependencyGraph, NodeKind, derive_ff_graph
from .trace import ActivityStats

STRUCTURAL_COLUMNS = (
    "n_ff_startpoint", "n_ff_endpoint",
    "n_conn_from_ff", "n_conn_to_ff",
    "n_conn_from_pi", "n_conn_to_po",
    "stages_from_pi_max", "stages_from_pi_avg", "stages_from_pi_min",
    "stages_to_po_max", "stages_to_po_avg", "stages_to_po_min",
    "feedback_depth",
    "bus_position", "bus_length", "bus_label", "module_label",
)
ACTIVITY_COLUMNS = ("frac_at_0", "frac_at_1", "state_changes")
COLUMNS = STRUCTURAL_COLUMNS + ACTIVITY_COLUMNS


class FeatureError(ValueError):
    pass


def _ff_id(g: FFDependencyGraph, ff) -> int:
    """Accept a flip-flop node id or name."""
    if isinstance(ff, str):
        try:
            return g.ff_by_name[ff]
        except KeyError:
            raise FeatureError(f"unknown flip-flop {ff!r}") from None
    if g.kinds.get(ff) is not NodeKind.FF:
        raise FeatureError(f"unknown flip-flop id {ff!r}")
    return ff


def sentinel(g: FFDependencyGraph) -> int:
    """Stand-in for "unreachable": one more than the number of flip-flops."""
    return len(g.of_kind(NodeKind.FF)) + 1


def _bfs(succ, src) -> dict:
    """Hop distances from ``src`` along paths of at least one edge.

    ``src`` itself appears only if it lies on a cycle, at the cycle length.
    """
    dist: dict = {}
    frontier = deque()
    for v in succ[src]:
        if v not in dist:
            dist[v] = 1
            frontier.append(v)
    while frontier:
        u = frontier.popleft()
        d = dist[u] + 1
        for v in succ[u]:
            if v not in dist:
                dist[v] = d
                frontier.append(v)
    return dist


class GraphFeatures:
    """Caches one forward BFS per source vertex; all graph features read from it."""

    def __init__(self, g: FFDependencyGraph):
        self.g = g
        self.S = sentinel(g)
        self.ffs = g.of_kind(NodeKind.FF)
        self.pis = g.of_kind(NodeKind.PI)
        self._dist: dict = {}

    def dist(self, src) -> dict:
        d = self._dist.get(src)
        if d is None:
            d = self._dist[src] = _bfs(self.g.succ, src)
        return d

    def direct_ff_degree(self, ff) -> tuple:
        f = _ff_id(self.g, ff)
        k = self.g.kinds
        return (sum(1 for u in set(self.g.pred[f]) if k[u] is NodeKind.FF),
                sum(1 for v in set(self.g.succ[f]) if k[v] is NodeKind.FF))

    def transitive_ff_connections(self, ff) -> tuple:
        f = _ff_id(self.g, ff)
        n_from = sum(1 for u in self.ffs if f in self.dist(u))
        n_to = sum(1 for v in self.dist(f) if self.g.kinds[v] is NodeKind.FF)
        return n_from, n_to

    def pi_po_connections(self, ff) -> tuple:
        f = _ff_id(self.g, ff)
        n_pi = sum(1 for p in self.pis if f in self.dist(p))
        n_po = sum(1 for v in self.dist(f) if self.g.kinds[v] is NodeKind.PO)
        return n_pi, n_po

    def stage_distance_stats(self, ff) -> tuple:
        """``(from_pi max, avg, min, to_po max, avg, min)`` in flip-flop stages."""
        f = _ff_id(self.g, ff)
        from_pi = [self.dist(p)[f] for p in self.pis if f in self.dist(p)]
        to_po = [d for v, d in self.dist(f).items() if self.g.kinds[v] is NodeKind.PO]
        return self._summ(from_pi) + self._summ(to_po)

    def _summ(self, ds) -> tuple:
        if not ds:
            return (self.S, float(self.S), self.S)
        return (max(ds), sum(ds) / len(ds), min(ds))

    def feedback_depth(self, ff) -> int:
        f = _ff_id(self.g, ff)
        return self.dist(f).get(f, self.S)


def direct_ff_degree(g: FFDependencyGraph, ff) -> tuple:
    return GraphFeatures(g).direct_ff_degree(ff)


def transitive_ff_connections(g: FFDependencyGraph, ff) -> tuple:
    return GraphFeatures(g).transitive_ff_connections(ff)


def pi_po_connections(g: FFDependencyGraph, ff) -> tuple:
    return GraphFeatures(g).pi_po_connections(ff)


def stage_distance_stats(g: FFDependencyGraph, ff) -> tuple:
    return GraphFeatures(g).stage_distance_stats(ff)


def feedback_depth(g: FFDependencyGraph, ff) -> int:
    return GraphFeatures(g).feedback_depth(ff)


class BusModuleLabels:
    """Bus widths and label encodings for every flip-flop of a circuit."""

    def __init__(self, c: CircuitGraph):
        ffs = c.ffs
        self.by_name = {n.name: n for n in ffs}
        widths: dict = {}
        for n in ffs:
            if n.bus_name is not None:
                widths[n.bus_name] = max(widths.get(n.bus_name, 0), n.bus_index + 1)
        self.widths = widths
        bus_names = sorted(widths)
        self.bus_label = {b: i for i, b in enumerate(bus_names)}
        scalars = sorted(n.name for n in ffs if n.bus_name is None)
        self.scalar_label = {s: len(bus_names) + i for i, s in enumerate(scalars)}
        paths = sorted({".".join(n.module_path) for n in ffs})
        self.module_label = {p: i for i, p in enumerate(paths)}

    def __call__(self, ff) -> tuple:
        n = self.by_name.get(ff) if isinstance(ff, str) else None
        if n is None:
            raise FeatureError(f"unknown flip-flop {ff!r}")
        mod = self.module_label[".".join(n.module_path)]
        if n.bus_name is None:
            return (0, 1, self.scalar_label[n.name], mod)
        return (n.bus_index, self.widths[n.bus_name], self.bus_label[n.bus_name], mod)


def bus_and_module_features(c: CircuitGraph, ff) -> tuple:
    return BusModuleLabels(c)(ff)


def structural_features(c: CircuitGraph, g: FFDependencyGraph) -> dict:
    """``ff_name -> 17-tuple`` in STRUCTURAL_COLUMNS order."""
    gf = GraphFeatures(g)
    bm = BusModuleLabels(c)
    out = {}
    for f in gf.ffs:
        name = g.names[f]
        out[name] = (gf.direct_ff_degree(f) + gf.transitive_ff_connections(f) + gf.pi_po_connections(f)
                     + gf.stage_distance_stats(f) + (gf.feedback_depth(f),) + bm(name))
    return out


@dataclass(frozen=True)
class FeatureMatrix:
    ff_names: tuple
    values: np.ndarray             # shape (n_ff, 20)
    standardized: bool = False
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.values.shape != (len(self.ff_names), len(COLUMNS)):
            raise FeatureError(f"matrix shape {self.values.shape} does not match {len(self.ff_names)} x {len(COLUMNS)}")

    def __len__(self):
        return len(self.ff_names)

    def row(self, ff: str) -> np.ndarray:
        return self.values[self.ff_names.index(ff)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("ff_name",) + COLUMNS)
        for name, row in zip(self.ff_names, self.values):
            w.writerow([name] + [_fmt(x) for x in row])
        return buf.getvalue()


def _fmt(x: float) -> str:
    s = f"{x:.9g}"
    return "0" if s == "-0" else s


def assemble(structural: Mapping[str, tuple], activity: Mapping[str, ActivityStats]) -> FeatureMatrix:
    """Raw matrix with rows in sorted flip-flop name order."""
    s_only = sorted(set(structural) - set(activity))
    a_only = sorted(set(activity) - set(structural))
    if s_only:
        raise FeatureError(f"no activity for flip-flop(s): {', '.join(s_only)}")
    if a_only:
        raise FeatureError(f"activity for unknown flip-flop(s): {', '.join(a_only)}")
    names = tuple(sorted(structural))
    rows = []
    for n in names:
        st = structural[n]
        if len(st) != len(STRUCTURAL_COLUMNS):
            raise FeatureError(f"{n}: expected {len(STRUCTURAL_COLUMNS)} structural values, got {len(st)}")
        a = activity[n]
        rows.append(tuple(st) + (a.frac_at_0, a.frac_at_1, a.state_changes))
    values = np.array(rows, dtype=float).reshape(len(names), len(COLUMNS))
    return FeatureMatrix(names, values)


def standardize(m: FeatureMatrix) -> FeatureMatrix:
    """Column z-scores with population std; zero-variance columns become 0."""
    if len(m) == 0:
        raise FeatureError("cannot standardize an empty matrix")
    x = m.values
    mean = x.mean(axis=0)
    centered = x - mean
    std = np.sqrt((centered ** 2).mean(axis=0))
    # rounding can leave a tiny nonzero spread on constant columns
    const = np.all(x == x[0], axis=0) | (std == 0)
    safe = np.where(const, 1.0, std)
    z = np.where(const, 0.0, centered / safe)
    return FeatureMatrix(m.ff_names, z, True, mean, np.where(const, 0.0, std))


def extract_features(c: CircuitGraph, activity: Mapping[str, ActivityStats],
                     g: Optional[FFDependencyGraph] = None) -> FeatureMatrix:
    if g is None:
        g = derive_ff_graph(c)
    return assemble(structural_features(c, g), activity)


def read_feature_csv(text: str, standardized: bool = False) -> FeatureMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != ("ff_name",) + COLUMNS:
        raise FeatureError("feature CSV header does not match the canonical columns")
    names = tuple(r[0] for r in rows[1:])
    try:
        vals = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
    except ValueError as e:
        raise FeatureError(f"bad number in feature CSV: {e}") from None
    return FeatureMatrix(names, vals.reshape(len(names), len(COLUMNS)), standardized)
