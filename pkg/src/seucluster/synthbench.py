"""Seeded synthetic circuits whose flip-flops have known, varied SEU sensitivity.

Block kinds and what an upset does there:

* ``ring``       one-hot rotating token; a flip adds or drops a token forever.
* ``crc_like``   LFSR mixing an input stream; errors never wash out.
* ``counter``    enabled binary counter observed on its MSB; low bits shift
                 the MSB edge, middle bits that never carry are masked.
* ``shift_chain``input pipeline whose tail is gated by a valid strobe.
* ``fifo_like``  register bank, randomly overwritten and randomly read.
* ``dead_logic`` state with no path to any output (rate exactly 0).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

from ._seeding import SplitMix64, derive_seed
from .circuit import CircuitGraph, parse_netlist, serialize_netlist
from .faultsim import Workload

BLOCK_KINDS = ("shift_chain", "counter", "ring", "crc_like", "fifo_like", "dead_logic")
OBSERVABLE = tuple(k for k in BLOCK_KINDS if k != "dead_logic")

# designed sensitivity level per kind, most sensitive first
SENSITIVITY = {
    "ring": "high", "crc_like": "high",
    "counter": "medium", "shift_chain": "medium",
    "fifo_like": "low",
    "dead_logic": "zero",
}
LEVELS = ("high", "medium", "low", "zero")


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class BenchSpec:
    seed: int = 0
    n_blocks: int = 12
    kinds: tuple = BLOCK_KINDS
    ff_range: tuple = (12, 36)
    bus_fraction: float = 0.5
    horizon: int = 128
    n_inputs: int = 8

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        d = dict(d)
        for k in ("kinds", "ff_range"):
            if k in d:
                d[k] = tuple(d[k])
        try:
            return cls(**d)
        except TypeError as e:
            raise BenchError(f"bad bench spec: {e}") from None

    def dumps(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class Bench:
    spec: BenchSpec
    circuit: CircuitGraph
    workload: Workload
    netlist: str
    blocks: dict = field(repr=False)   # ff name -> (block id, kind)

    def blocks_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("ff_name", "block_id", "block_kind"))
        for ff in sorted(self.blocks):
            w.writerow((ff,) + self.blocks[ff])
        return buf.getvalue()


def plan(spec: BenchSpec) -> list:
    """``(kind, n_ffs, as_bus)`` per block, before any wiring."""
    if spec.n_blocks < 1:
        raise BenchError("need at least one block")
    bad = sorted(set(spec.kinds) - set(BLOCK_KINDS))
    if bad or not spec.kinds:
        raise BenchError(f"unknown block kinds: {bad}" if bad else "no block kinds given")
    lo, hi = spec.ff_range
    if not 2 <= lo <= hi:
        raise BenchError("ff_range must satisfy 2 <= lo <= hi")
    if not 0.0 <= spec.bus_fraction <= 1.0:
        raise BenchError("bus_fraction must be in [0, 1]")
    if spec.horizon < 8:
        raise BenchError("horizon must be at least 8 cycles")
    rng = SplitMix64(derive_seed(spec.seed, "plan"))
    kinds = sorted(set(spec.kinds), key=BLOCK_KINDS.index)
    chosen = [kinds[rng.randbelow(len(kinds))] for _ in range(spec.n_blocks)]
    if spec.n_blocks >= 2:
        observable = [k for k in kinds if k in OBSERVABLE]
        if observable and not any(k in OBSERVABLE for k in chosen):
            chosen[0] = observable[rng.randbelow(len(observable))]
        if "dead_logic" not in chosen and (observable or len(set(chosen)) > 1):
            chosen[-1] = "dead_logic"
    out = []
    for kind in chosen:
        n = lo + rng.randbelow(hi - lo + 1)
        if kind == "fifo_like":
            depth = 4 if n >= 8 else 2
            n = max(depth, n - n % depth)
        out.append((kind, n, rng.random() < spec.bus_fraction))
    total = sum(n for _, n, _ in out)
    # single-block specs are fixtures and may be small
    low = 20 if spec.n_blocks >= 2 else 1
    if not low <= total <= 2000:
        raise BenchError(f"spec yields {total} flip-flops; must be within [{low}, 2000]")
    return out


class _Builder:
    def __init__(self, n_inputs):
        self.inputs = [f"in{i}" for i in range(n_inputs)]
        self.ffs, self.gates, self.outputs = [], [], []

    def ff(self, name, d, module, bus=None, reset=0):
        self.ffs.append({"name": name, "d": d, "reset": reset, "module": module, "bus": bus})
        return name

    def gate(self, name, fn, *pins):
        self.gates.append({"name": name, "fn": fn, "pins": list(pins)})
        return name

    def po(self, name, driver):
        self.outputs.append({"name": name, "driver": driver})


def _block(b: _Builder, bid: int, kind: str, n: int, as_bus: bool, rng: SplitMix64, out_kind=None) -> list:
    """Wire one block; return its flip-flop names."""
    tag = f"b{bid}"
    module = ["top", f"u{bid}_{kind}"]
    names = [f"{tag}_q[{k}]" if as_bus else f"{tag}_q{k}" for k in range(n)]

    def bus(k):
        return {"name": f"{tag}_q", "index": k} if as_bus else None

    def pi():
        return b.inputs[rng.randbelow(len(b.inputs))]

    observe = kind != "dead_logic"
    if kind == "dead_logic":
        kind = ("shift_chain", "counter", "crc_like")[rng.randbelow(3)]

    if kind == "shift_chain":
        for k in range(n):
            b.ff(names[k], pi() if k == 0 else names[k - 1], module, bus(k))
        if observe:
            b.po(f"{tag}_out", b.gate(f"{tag}_gate", "AND", names[-1], pi()))
    elif kind == "counter":
        carry = pi()
        for k in range(n):
            nxt = b.gate(f"{tag}_sum{k}", "XOR", names[k], carry)
            b.ff(names[k], nxt, module, bus(k))
            if k < n - 1:
                carry = b.gate(f"{tag}_cy{k}", "AND", names[k], carry)
        if observe:
            b.po(f"{tag}_msb", names[-1])
    elif kind == "ring":
        for k in range(n):
            b.ff(names[k], names[k - 1], module, bus(k), reset=1 if k == 0 else 0)
        if observe:
            b.po(f"{tag}_tok", names[0])
    elif kind == "crc_like":
        taps = {k for k in range(1, n) if rng.randbelow(3) == 0}
        fb = b.gate(f"{tag}_fb", "XOR", names[-1], pi())
        for k in range(n):
            if k == 0:
                d = fb
            elif k in taps:
                d = b.gate(f"{tag}_tap{k}", "XOR", names[k - 1], fb)
            else:
                d = names[k - 1]
            b.ff(names[k], d, module, bus(k))
        if observe:
            b.po(f"{tag}_crc", names[-1])
    elif kind == "fifo_like":
        depth = 4 if n >= 8 else 2
        width = n // depth
        sel = [pi() for _ in range(depth.bit_length() - 1)]
        data = [pi() for _ in range(width)]
        for e in range(depth):
            we = b.gate(f"{tag}_we{e}", "AND", pi(), pi())
            for w in range(width):
                k = e * width + w
                hold = b.gate(f"{tag}_mx{k}", "MUX2", we, names[k], data[w])
                b.ff(names[k], hold, module, bus(k))
        if observe:
            for w in range(width):
                level = [names[e * width + w] for e in range(depth)]
                for li, s in enumerate(sel):
                    level = [b.gate(f"{tag}_rd{w}_{li}_{i}", "MUX2", s, level[2 * i], level[2 * i + 1])
                             for i in range(len(level) // 2)]
                b.po(f"{tag}_dout{w}", level[0])
    else:
        raise BenchError(f"unknown block kind {kind!r}")
    return names


def generate(spec: BenchSpec) -> Bench:
    blocks_plan = plan(spec)
    b = _Builder(spec.n_inputs)
    blocks = {}
    for bid, (kind, n, as_bus) in enumerate(blocks_plan):
        rng = SplitMix64(derive_seed(spec.seed, "block", bid))
        for ff in _block(b, bid, kind, n, as_bus, rng):
            blocks[ff] = (bid, kind)
    doc = {"name": f"synth_{spec.seed}", "inputs": b.inputs, "outputs": b.outputs,
           "ffs": b.ffs, "gates": b.gates, "consts": []}
    circuit = parse_netlist(json.dumps(doc))
    h = spec.horizon
    workload = Workload(
        name=f"synth_{spec.seed}_random",
        horizon=h,
        window=(h // 8, h // 2),
        stimulus={"kind": "random", "seed": derive_seed(spec.seed, "stimulus") >> 1, "bias": 0.5},
    )
    return Bench(spec, circuit, workload, serialize_netlist(circuit), blocks)


def expected_structure(spec: BenchSpec) -> list:
    """``(block id, kind, level)`` per block, sorted from most to least sensitive.

    Qualitative only: a sanity ordering for tests, not a rate prediction.
    """
    rows = [(bid, kind, SENSITIVITY[kind]) for bid, (kind, _, _) in enumerate(plan(spec))]
    return sorted(rows, key=lambda r: (LEVELS.index(r[2]), r[0]))
