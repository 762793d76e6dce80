"""Cycle-accurate two-valued simulation with single-event-upset injection.

Each cycle ``c``: inputs take ``stimulus[c]``, flip-flops hold ``state[c]``
(``state[0]`` is the reset vector), gates settle in topological order, outputs
are sampled, then the clock edge loads ``state[c + 1]``.

Injected runs are bit-parallel: one Python int per signal holds one bit per
lane, each lane being an independent faulty copy of the circuit.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ._seeding import SplitMix64, derive_seed
from .circuit import CircuitGraph, NodeKind
from .trace import timeline_from_values, write_vcd

NO_EFFECT = "NoEffect"
FUNCTIONAL_FAILURE = "FunctionalFailure"
PER_FF = "PerFF"
PER_CLUSTER = "PerCluster"
DEFAULT_INJECTIONS = 200
LANES_PER_CHUNK = 4096


class SimulationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# workload

@dataclass(frozen=True)
class Workload:
    name: str
    horizon: int
    window: tuple
    stimulus: dict                       # {"kind": "table", "rows": ...} or {"kind": "random", ...}
    monitored_outputs: Optional[tuple] = None   # None: every output

    def __post_init__(self):
        if self.horizon < 1:
            raise SimulationError("horizon must be positive")
        start, end = self.window
        if not 0 <= start < end <= self.horizon:
            raise SimulationError(f"window {list(self.window)} must satisfy 0 <= start < end <= {self.horizon}")
        kind = self.stimulus.get("kind")
        if kind == "table":
            if len(self.stimulus.get("rows", ())) < self.horizon:
                raise SimulationError("stimulus table shorter than the horizon")
        elif kind == "random":
            if not 0.0 <= float(self.stimulus.get("bias", 0.5)) <= 1.0:
                raise SimulationError("stimulus bias must be in [0, 1]")
        else:
            raise SimulationError(f"unknown stimulus kind {kind!r}")

    def to_dict(self) -> dict:
        d = {"name": self.name, "horizon": self.horizon, "window": list(self.window), "stimulus": self.stimulus}
        if self.monitored_outputs is not None:
            d["monitored_outputs"] = list(self.monitored_outputs)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Workload":
        try:
            mo = d.get("monitored_outputs")
            return cls(d["name"], int(d["horizon"]), tuple(d["window"]), dict(d["stimulus"]),
                       None if mo is None else tuple(mo))
        except (KeyError, TypeError) as e:
            raise SimulationError(f"bad workload document: {e}") from None

    @classmethod
    def loads(cls, text: str) -> "Workload":
        return cls.from_dict(json.loads(text))

    def stimulus_bits(self, c: CircuitGraph) -> np.ndarray:
        """``(horizon, n_inputs)`` uint8 array in circuit input order."""
        n_pi = len(c.inputs)
        if self.stimulus["kind"] == "table":
            rows = self.stimulus["rows"][:self.horizon]
            if any(len(r) != n_pi for r in rows):
                raise SimulationError(f"stimulus rows must have {n_pi} bits")
            arr = np.array(rows, dtype=np.uint8).reshape(self.horizon, n_pi)
            if arr.size and arr.max() > 1:
                raise SimulationError("stimulus bits must be 0 or 1")
            return arr
        rng = SplitMix64(derive_seed(int(self.stimulus.get("seed", 0)), "stimulus"))
        bias = float(self.stimulus.get("bias", 0.5))
        return np.array([[1 if rng.random() < bias else 0 for _ in range(n_pi)] for _ in range(self.horizon)],
                        dtype=np.uint8).reshape(self.horizon, n_pi)

    def monitored(self, c: CircuitGraph) -> tuple:
        """Indices into ``c.outputs`` that count for failure classification."""
        names = [o.name for o in c.outputs]
        if self.monitored_outputs is None:
            return tuple(range(len(names)))
        missing = sorted(set(self.monitored_outputs) - set(names))
        if missing:
            raise SimulationError(f"monitored outputs not in circuit: {', '.join(missing)}")
        return tuple(i for i, n in enumerate(names) if n in set(self.monitored_outputs))


def load_workload(path) -> Workload:
    with open(path, encoding="utf-8") as fh:
        return Workload.loads(fh.read())


# ---------------------------------------------------------------------------
# compiled step function

_OPS = {
    "AND": "{0} & {1}", "OR": "{0} | {1}", "XOR": "{0} ^ {1}",
    "NAND": "({0} & {1}) ^ M", "NOR": "({0} | {1}) ^ M", "XNOR": "{0} ^ {1} ^ M",
    "NOT": "{0} ^ M", "BUF": "{0}",
    "MUX2": "{1} ^ (({1} ^ {2}) & {0})",
}


def _compile(c: CircuitGraph):
    """Straight-line Python for one combinational evaluation.

    ``step(ins, st, M) -> (output values, next state)`` where every value is a
    lane vector and ``M`` is the all-lanes mask.
    """
    drv = c.drivers
    by_id = c.node_by_id
    lines = ["def step(ins, st, M):"]
    pis = [n.id for n in c.inputs]
    ffs = [n.id for n in c.ffs]
    if pis:
        lines.append(f"    {', '.join(f'v{i}' for i in pis)}, = ins")
    if ffs:
        lines.append(f"    {', '.join(f'v{i}' for i in ffs)}, = st")
    for n in c.of_kind(NodeKind.CONST):
        lines.append(f"    v{n.id} = {'M' if n.value else '0'}")
    for g in c.gate_order:
        ins = [f"v{d}" for d in drv[g]]
        lines.append(f"    v{g} = {_OPS[by_id[g].fn].format(*ins)}")
    outs = ", ".join(f"v{drv[o.id][0]}" for o in c.outputs)
    nxt = ", ".join(f"v{drv[f][0]}" for f in ffs)
    lines.append(f"    return ({outs}{',' if outs else ''}), ({nxt}{',' if nxt else ''})")
    ns: dict = {}
    exec(compile("\n".join(lines), f"<step:{c.name}>", "exec"), ns)
    return ns["step"]


class Simulator:
    """Reusable compiled model of one circuit."""

    def __init__(self, c: CircuitGraph):
        self.circuit = c
        self.ff_names = tuple(n.name for n in c.ffs)
        self.ff_index = {n: i for i, n in enumerate(self.ff_names)}
        self.po_names = tuple(n.name for n in c.outputs)
        self.reset = tuple(n.reset_value for n in c.ffs)
        self.step = _compile(c)


# ---------------------------------------------------------------------------
# golden run

@dataclass(frozen=True)
class GoldenRun:
    ff_names: tuple
    po_names: tuple
    states: np.ndarray     # (horizon, n_ff)
    outputs: np.ndarray    # (horizon, n_po)
    stimulus: np.ndarray   # (horizon, n_pi)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def timelines(self) -> list:
        return [timeline_from_values(n, self.states[:, i]) for i, n in enumerate(self.ff_names)]

    def to_vcd(self, c: CircuitGraph, period: int = 1) -> tuple:
        """VCD text of the flip-flop history plus its name map; buses become vectors."""
        buses: dict = {}
        for n in c.ffs:
            if n.bus_name is not None:
                buses.setdefault(n.bus_name, {})[n.bus_index] = n.name
        return write_vcd(self.timelines(), period=period, buses=buses)


def simulate_golden(c: CircuitGraph, w: Workload, sim: Optional[Simulator] = None) -> GoldenRun:
    sim = sim or Simulator(c)
    stim = w.stimulus_bits(c)
    st = list(sim.reset)
    states = np.zeros((w.horizon, len(st)), dtype=np.uint8)
    outs = np.zeros((w.horizon, len(sim.po_names)), dtype=np.uint8)
    for cyc in range(w.horizon):
        states[cyc] = st
        po, st = sim.step(stim[cyc].tolist(), st, 1)
        outs[cyc] = po
        st = list(st)
    return GoldenRun(sim.ff_names, sim.po_names, states, outs, stim)


# ---------------------------------------------------------------------------
# injection

@dataclass(frozen=True)
class FailureVerdict:
    ff: Optional[str]
    cycle: int
    outcome: str
    first_divergence: Optional[int] = None

    @property
    def failed(self) -> bool:
        return self.outcome == FUNCTIONAL_FAILURE


def replay(sim: Simulator, golden: GoldenRun, injections: Sequence[tuple], monitored: Sequence[int]) -> list:
    """Run all ``(ff_index or None, cycle)`` injections as parallel lanes.

    Returns the first divergent output cycle per lane, ``None`` where every
    monitored output matched the golden run to the horizon. A ``None``
    flip-flop is a control lane with no flip.
    """
    L = len(injections)
    if L == 0:
        return []
    M = (1 << L) - 1
    by_cycle: dict = {}
    for lane, (fi, cyc) in enumerate(injections):
        if fi is not None:
            by_cycle.setdefault(cyc, {}).setdefault(fi, 0)
            by_cycle[cyc][fi] |= 1 << lane
    start = min(cyc for _, cyc in injections)
    last_flip = max(by_cycle, default=start)
    gs = golden.states
    go = golden.outputs
    stim = golden.stimulus
    st = [M if b else 0 for b in gs[start].tolist()]
    fail = 0
    first: list = [None] * L
    H = golden.horizon
    for cyc in range(start, H):
        flips = by_cycle.get(cyc)
        if flips:
            for fi, mask in flips.items():
                st[fi] ^= mask
        po, nxt = sim.step([M if b else 0 for b in stim[cyc].tolist()], st, M)
        grow = go[cyc]
        new = 0
        for p in monitored:
            new |= po[p] ^ (M if grow[p] else 0)
        new &= ~fail
        if new:
            fail |= new
            while new:
                low = new & -new
                first[low.bit_length() - 1] = cyc
                new ^= low
        st = list(nxt)
        if cyc >= last_flip and cyc + 1 < H:
            # stop once no still-passing lane carries a corrupted state
            diff = 0
            for i, b in enumerate(gs[cyc + 1].tolist()):
                diff |= st[i] ^ (M if b else 0)
            if not diff & ~fail:
                break
    return first


def _check_cycle(w: Workload, cycle: int):
    start, end = w.window
    if not start <= cycle < end:
        raise SimulationError(f"injection cycle {cycle} outside window [{start}, {end})")


def inject_seu(c: CircuitGraph, w: Workload, golden: GoldenRun, ff: str, cycle: int,
               sim: Optional[Simulator] = None) -> FailureVerdict:
    """Flip ``ff`` right after the clock edge of ``cycle`` and compare outputs to golden."""
    sim = sim or Simulator(c)
    if ff not in sim.ff_index:
        raise SimulationError(f"unknown flip-flop {ff!r}")
    _check_cycle(w, cycle)
    first = replay(sim, golden, [(sim.ff_index[ff], cycle)], w.monitored(c))[0]
    return FailureVerdict(ff, cycle, NO_EFFECT if first is None else FUNCTIONAL_FAILURE, first)


def exhaustive_counts(c: CircuitGraph, w: Workload, ff: str, golden: Optional[GoldenRun] = None,
                      sim: Optional[Simulator] = None) -> tuple:
    """``(failing cycles, window length)`` injecting once at every window cycle."""
    sim = sim or Simulator(c)
    golden = golden or simulate_golden(c, w, sim)
    if ff not in sim.ff_index:
        raise SimulationError(f"unknown flip-flop {ff!r}")
    fi = sim.ff_index[ff]
    start, end = w.window
    first = replay(sim, golden, [(fi, cyc) for cyc in range(start, end)], w.monitored(c))
    return sum(f is not None for f in first), end - start


def exhaustive_small(c: CircuitGraph, w: Workload, ff: str, golden: Optional[GoldenRun] = None,
                     sim: Optional[Simulator] = None) -> float:
    f, n = exhaustive_counts(c, w, ff, golden, sim)
    return f / n


# ---------------------------------------------------------------------------
# campaigns

@dataclass(frozen=True)
class CampaignResult:
    granularity: str
    targets: tuple            # target labels
    members: tuple            # flip-flop names per target
    injections: tuple
    failures: tuple
    seed: Optional[int] = None
    workload: str = ""
    circuit: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not len(self.targets) == len(self.members) == len(self.injections) == len(self.failures):
            raise SimulationError("campaign columns differ in length")
        for t, n, f in zip(self.targets, self.injections, self.failures):
            if not 0 <= f <= n:
                raise SimulationError(f"target {t}: failures {f} outside [0, {n}]")

    @property
    def rates(self) -> tuple:
        return tuple(f / n if n else 0.0 for n, f in zip(self.injections, self.failures))

    def rate_of(self) -> dict:
        return dict(zip(self.targets, self.rates))

    @property
    def total_injections(self) -> int:
        return sum(self.injections)

    @property
    def total_failures(self) -> int:
        return sum(self.failures)

    @property
    def overall_rate(self) -> float:
        return self.total_failures / self.total_injections

    def per_ff_rates(self) -> dict:
        if self.granularity != PER_FF:
            raise SimulationError("per flip-flop rates need a PerFF campaign")
        return {m[0]: r for m, r in zip(self.members, self.rates)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("target", "injections", "failures", "rate"))
        for t, n, f, r in zip(self.targets, self.injections, self.failures, self.rates):
            w.writerow((t, n, f, repr(r)))
        return buf.getvalue()

    def sidecar(self) -> str:
        d = {"granularity": self.granularity, "seed": self.seed, "workload": self.workload,
             "circuit": self.circuit, "members": {t: list(m) for t, m in zip(self.targets, self.members)},
             "total_injections": self.total_injections, "total_failures": self.total_failures,
             "overall_rate": self.overall_rate}
        d.update(self.extra)
        return json.dumps(d, sort_keys=True, indent=2) + "\n"


def read_campaign_csv(text: str, sidecar: Optional[str] = None) -> CampaignResult:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["target", "injections", "failures", "rate"]:
        raise SimulationError("campaign CSV must start with header target,injections,failures,rate")
    meta = json.loads(sidecar) if sidecar else {}
    members = meta.get("members", {})
    targets = tuple(r[0] for r in rows[1:])
    gran = meta.get("granularity", PER_FF)
    return CampaignResult(
        gran, targets,
        tuple(tuple(members.get(t, [t] if gran == PER_FF else [])) for t in targets),
        tuple(int(r[1]) for r in rows[1:]), tuple(int(r[2]) for r in rows[1:]),
        meta.get("seed"), meta.get("workload", ""), meta.get("circuit", ""))


def draw_injections(targets: Sequence[Sequence[str]], n_per_target: int, seed: int, window: tuple) -> list:
    """``(target index, ff name, cycle)`` per injection.

    Injection ``j`` of target ``t`` uses its own stream ``derive_seed(seed, t, j)``:
    a member drawn uniformly (skipped for single-member targets), then a cycle
    drawn uniformly from the window.
    """
    start, end = window
    out = []
    for t, members in enumerate(targets):
        ms = sorted(members)
        for j in range(n_per_target):
            rng = SplitMix64(derive_seed(seed, t, j))
            ff = ms[rng.randbelow(len(ms))] if len(ms) > 1 else ms[0]
            out.append((t, ff, start + rng.randbelow(end - start)))
    return out


def run_lanes(sim: Simulator, golden: GoldenRun, injections: Sequence[tuple], monitored, threads: int = 1) -> list:
    """Failure flag per ``(ff_index, cycle)`` injection, chunked across workers.

    Chunks are fixed-size slices of the cycle-sorted job list, so the result
    does not depend on ``threads``.
    """
    order = sorted(range(len(injections)), key=lambda i: (injections[i][1], i))
    chunks = [order[s:s + LANES_PER_CHUNK] for s in range(0, len(order), LANES_PER_CHUNK)]

    def work(chunk):
        return replay(sim, golden, [injections[i] for i in chunk], monitored)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(ch) for ch in chunks]
    failed = [False] * len(injections)
    for chunk, res in zip(chunks, results):
        for i, first in zip(chunk, res):
            failed[i] = first is not None
    return failed


def run_campaign(c: CircuitGraph, w: Workload, targets: Sequence[Iterable[str]], n_per_target: int = DEFAULT_INJECTIONS,
                 seed: int = 0, granularity: Optional[str] = None, labels: Optional[Sequence[str]] = None,
                 threads: int = 1, golden: Optional[GoldenRun] = None, sim: Optional[Simulator] = None) -> CampaignResult:
    """Statistical fault injection, ``n_per_target`` upsets into each target set."""
    targets = [tuple(sorted(t)) for t in targets]
    if not targets:
        raise SimulationError("no targets")
    if n_per_target < 1:
        raise SimulationError("n_per_target must be at least 1")
    seen: set = set()
    for i, t in enumerate(targets):
        if not t:
            raise SimulationError(f"target {i} is empty")
        if seen.intersection(t):
            raise SimulationError(f"target {i} overlaps an earlier target")
        seen.update(t)
    sim = sim or Simulator(c)
    unknown = sorted(seen - set(sim.ff_index))
    if unknown:
        raise SimulationError(f"unknown flip-flop(s): {', '.join(unknown)}")
    if granularity is None:
        granularity = PER_FF if all(len(t) == 1 for t in targets) else PER_CLUSTER
    if granularity == PER_FF and any(len(t) != 1 for t in targets):
        raise SimulationError("PerFF campaigns need single flip-flop targets")
    if labels is None:
        labels = [t[0] for t in targets] if granularity == PER_FF else [str(i) for i in range(len(targets))]
    golden = golden or simulate_golden(c, w, sim)

    draws = draw_injections(targets, n_per_target, seed, w.window)
    failed = run_lanes(sim, golden, [(sim.ff_index[ff], cyc) for _, ff, cyc in draws], w.monitored(c), threads)
    fails = [0] * len(targets)
    for (t, _, _), bad in zip(draws, failed):
        fails[t] += bad
    return CampaignResult(granularity, tuple(labels), tuple(targets), (n_per_target,) * len(targets),
                          tuple(fails), seed, w.name, c.name)


def per_ff_campaign(c: CircuitGraph, w: Workload, n_per_target: int = DEFAULT_INJECTIONS, seed: int = 0,
                    threads: int = 1, **kw) -> CampaignResult:
    return run_campaign(c, w, [[n.name] for n in sorted(c.ffs, key=lambda n: n.name)], n_per_target, seed,
                        PER_FF, threads=threads, **kw)


def per_cluster_campaign(c: CircuitGraph, w: Workload, clustering, n_per_target: int = DEFAULT_INJECTIONS,
                         seed: int = 0, threads: int = 1, **kw) -> CampaignResult:
    return run_campaign(c, w, clustering.members(), n_per_target, seed, PER_CLUSTER,
                        labels=[str(i) for i in range(clustering.n_clusters)], threads=threads, **kw)


def golden_timelines(c: CircuitGraph, w: Workload) -> list:
    return simulate_golden(c, w).timelines()
