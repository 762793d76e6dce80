"""Gate-level circuit model, netlist JSON format and the flip-flop dependency graph.

A netlist document looks like::

    {"name": "toggle",
     "inputs": ["a"],
     "outputs": [{"name": "y", "driver": "f"}],
     "ffs": [{"name": "f", "d": "x", "reset": 0, "module": ["top"], "bus": null}],
     "gates": [{"name": "x", "fn": "XOR", "pins": ["a", "f"]}],
     "consts": []}

Signal references are node names; a flip-flop is referenced by its own name
(its Q output). Primary outputs live in their own namespace since nothing
can reference them.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

GATE_ARITY = {
    "AND": 2, "OR": 2, "XOR": 2, "NAND": 2, "NOR": 2, "XNOR": 2,
    "NOT": 1, "BUF": 1, "MUX2": 3,
}


class NodeKind(enum.Enum):
    FF = "ff"
    GATE = "gate"
    PI = "pi"
    PO = "po"
    CONST = "const"


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    name: str
    fn: Optional[str] = None          # gates only
    value: Optional[int] = None       # constants only
    module_path: tuple = ()
    bus_name: Optional[str] = None
    bus_index: Optional[int] = None
    reset_value: int = 0              # flip-flops only


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    message: str
    nodes: tuple = ()

    def __str__(self):
        return f"{self.kind}: {self.message}"


class NetlistError(ValueError):
    """Raised when a netlist cannot be turned into a valid circuit."""

    def __init__(self, message, diagnostics=(), line=None, column=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics)
        self.line = line
        self.column = column


def _pin_count(node: Node) -> int:
    if node.kind is NodeKind.GATE:
        return GATE_ARITY.get(node.fn, 0)
    if node.kind in (NodeKind.FF, NodeKind.PO):
        return 1
    return 0


@dataclass(frozen=True)
class CircuitGraph:
    """Immutable synchronous circuit.

    ``edges`` holds ``(driver_id, sink_id, sink_pin)`` triples. For MUX2 the
    pins are ``(sel, a, b)`` and the output is ``b if sel else a``.
    """

    name: str
    nodes: tuple
    edges: tuple

    # Derived views. They assume a valid graph; run validate() first on
    # graphs that did not come from parse_netlist.
    @cached_property
    def node_by_id(self) -> dict:
        return {n.id: n for n in self.nodes}

    @cached_property
    def node_by_name(self) -> dict:
        """Name lookup for referenceable nodes (everything except outputs)."""
        return {n.name: n for n in self.nodes if n.kind is not NodeKind.PO}

    @cached_property
    def drivers(self) -> dict:
        """``node_id -> tuple of driver ids`` ordered by pin."""
        pins: dict = {}
        for d, s, p in self.edges:
            pins.setdefault(s, {})[p] = d
        return {s: tuple(ps[i] for i in sorted(ps)) for s, ps in pins.items()}

    @cached_property
    def fanout(self) -> dict:
        out: dict = {n.id: [] for n in self.nodes}
        for d, s, _ in self.edges:
            out[d].append(s)
        return {k: tuple(sorted(set(v))) for k, v in out.items()}

    def of_kind(self, kind: NodeKind) -> tuple:
        return tuple(n for n in self.nodes if n.kind is kind)

    @cached_property
    def ffs(self) -> tuple:
        return self.of_kind(NodeKind.FF)

    @cached_property
    def inputs(self) -> tuple:
        return self.of_kind(NodeKind.PI)

    @cached_property
    def outputs(self) -> tuple:
        return self.of_kind(NodeKind.PO)

    @cached_property
    def gate_order(self) -> tuple:
        """Gate ids in a topological order (ties by id)."""
        order, rest = _topo_gates(self)
        if rest:
            raise NetlistError("combinational cycle", [_cycle_diagnostic(self, rest)])
        return tuple(order)


# ---------------------------------------------------------------------------
# validation

def _topo_gates(c: CircuitGraph):
    gates = {n.id for n in c.nodes if n.kind is NodeKind.GATE}
    indeg = {g: 0 for g in gates}
    succ: dict = {g: [] for g in gates}
    for d, s, _ in c.edges:
        if d in gates and s in gates:
            indeg[s] += 1
            succ[d].append(s)
    ready = deque(sorted(g for g in gates if indeg[g] == 0))
    order = []
    while ready:
        g = ready.popleft()
        order.append(g)
        for s in succ[g]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
    rest = gates.difference(order)
    return order, rest


def _cycle_diagnostic(c: CircuitGraph, rest) -> Diagnostic:
    # every leftover gate has a leftover predecessor, so walking
    # predecessors must revisit a node
    preds: dict = {}
    for d, s, _ in c.edges:
        if d in rest and s in rest:
            preds.setdefault(s, []).append(d)
    cur = min(rest)
    seen: dict = {}
    path = []
    while cur not in seen:
        seen[cur] = len(path)
        path.append(cur)
        cur = min(preds[cur])
    cyc = path[seen[cur]:][::-1]
    names = tuple(c.node_by_id[i].name for i in cyc)
    return Diagnostic("combinational cycle", "combinational cycle through " + " -> ".join(names + names[:1]), names)


def validate(c: CircuitGraph) -> list:
    """Return one Diagnostic per violated invariant (empty list if valid)."""
    diags = []
    ids: dict = {}
    for n in c.nodes:
        if n.id in ids:
            diags.append(Diagnostic("duplicate id", f"node id {n.id} used by {ids[n.id]} and {n.name}", (ids[n.id], n.name)))
        else:
            ids[n.id] = n.name
    by_id = {n.id: n for n in c.nodes}

    names: dict = {}
    po_names: dict = {}
    for n in c.nodes:
        table = po_names if n.kind is NodeKind.PO else names
        if n.name in table:
            diags.append(Diagnostic("duplicate name", f"name {n.name!r} declared twice", (n.name,)))
        table[n.name] = n.id

    pin_drivers: dict = {}
    for d, s, p in c.edges:
        if d not in by_id or s not in by_id:
            diags.append(Diagnostic("dangling reference", f"edge ({d}, {s}, {p}) references a missing node",
                                    tuple(by_id[x].name for x in (d, s) if x in by_id)))
            continue
        dn, sn = by_id[d], by_id[s]
        if dn.kind is NodeKind.PO:
            diags.append(Diagnostic("illegal driver", f"output {dn.name} drives {sn.name}", (dn.name, sn.name)))
        if sn.kind in (NodeKind.PI, NodeKind.CONST):
            diags.append(Diagnostic("illegal sink", f"{sn.name} cannot be driven (driven by {dn.name})", (dn.name, sn.name)))
            continue
        if not 0 <= p < max(_pin_count(sn), 1):
            diags.append(Diagnostic("bad pin", f"pin {p} out of range on {sn.name}", (sn.name,)))
            continue
        pin_drivers.setdefault((s, p), []).append(d)

    for n in c.nodes:
        if n.kind is NodeKind.GATE and n.fn not in GATE_ARITY:
            diags.append(Diagnostic("unknown function", f"gate {n.name} has unknown function {n.fn!r}", (n.name,)))
            continue
        if n.kind is NodeKind.CONST and n.value not in (0, 1):
            diags.append(Diagnostic("bad constant", f"constant {n.name} has value {n.value!r}", (n.name,)))
        if n.kind is NodeKind.FF and n.reset_value not in (0, 1):
            diags.append(Diagnostic("bad reset", f"flip-flop {n.name} has reset {n.reset_value!r}", (n.name,)))
        for p in range(_pin_count(n)):
            ds = pin_drivers.get((n.id, p), [])
            if not ds:
                diags.append(Diagnostic("missing driver", f"{n.kind.value} {n.name} pin {p} has no driver", (n.name,)))
            elif len(ds) > 1:
                dnames = tuple(by_id[d].name for d in ds)
                diags.append(Diagnostic("multiple drivers", f"{n.kind.value} {n.name} pin {p} driven by {', '.join(dnames)}",
                                        (n.name,) + dnames))

    buses: dict = {}
    for n in c.nodes:
        if n.kind is not NodeKind.FF or n.bus_name is None:
            continue
        if n.bus_index is None or n.bus_index < 0:
            diags.append(Diagnostic("bad bus index", f"flip-flop {n.name} has bus index {n.bus_index!r}", (n.name,)))
            continue
        key = (n.bus_name, n.bus_index)
        if key in buses:
            diags.append(Diagnostic("duplicate bus bit", f"{n.bus_name}[{n.bus_index}] on {buses[key]} and {n.name}",
                                    (buses[key], n.name)))
        buses[key] = n.name

    if not any(d.kind in ("dangling reference", "duplicate id") for d in diags):
        _, rest = _topo_gates(c)
        if rest:
            diags.append(_cycle_diagnostic(c, rest))
    return diags


# ---------------------------------------------------------------------------
# netlist JSON

def _expect(cond, msg):
    if not cond:
        raise NetlistError(f"schema: {msg}")


def parse_netlist(text: str) -> CircuitGraph:
    """Parse and validate a netlist document; raise NetlistError on any problem."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetlistError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}",
                           line=e.lineno, column=e.colno) from None
    _expect(isinstance(doc, dict), "top level must be an object")
    name = doc.get("name", "")
    _expect(isinstance(name, str), "name must be a string")
    inputs = doc.get("inputs", [])
    outputs = doc.get("outputs", [])
    ffs = doc.get("ffs", [])
    gates = doc.get("gates", [])
    consts = doc.get("consts", [])
    for key, val in (("inputs", inputs), ("outputs", outputs), ("ffs", ffs), ("gates", gates), ("consts", consts)):
        _expect(isinstance(val, list), f"{key} must be a list")

    nodes = []
    diags = []

    def add(**kw):
        nodes.append(Node(id=len(nodes), **kw))
        return nodes[-1]

    for pi in inputs:
        _expect(isinstance(pi, str), f"input names must be strings, got {pi!r}")
        add(kind=NodeKind.PI, name=pi)
    for k in consts:
        _expect(isinstance(k, dict) and isinstance(k.get("name"), str), f"bad constant entry {k!r}")
        add(kind=NodeKind.CONST, name=k["name"], value=k.get("value"))
    ff_pins = []
    for f in ffs:
        _expect(isinstance(f, dict) and isinstance(f.get("name"), str), f"bad flip-flop entry {f!r}")
        module = f.get("module") or []
        _expect(isinstance(module, list) and all(isinstance(m, str) for m in module),
                f"module of {f['name']} must be a list of strings")
        bus = f.get("bus")
        bus_name = bus_index = None
        if bus is not None:
            _expect(isinstance(bus, dict) and isinstance(bus.get("name"), str) and isinstance(bus.get("index"), int),
                    f"bus of {f['name']} must be {{name, index}} or null")
            bus_name, bus_index = bus["name"], bus["index"]
        n = add(kind=NodeKind.FF, name=f["name"], module_path=tuple(module),
                bus_name=bus_name, bus_index=bus_index, reset_value=f.get("reset", 0))
        ff_pins.append((n, [f.get("d")]))
    gate_pins = []
    for g in gates:
        _expect(isinstance(g, dict) and isinstance(g.get("name"), str), f"bad gate entry {g!r}")
        pins = g.get("pins", [])
        _expect(isinstance(pins, list), f"pins of {g['name']} must be a list")
        fn = g.get("fn")
        n = add(kind=NodeKind.GATE, name=g["name"], fn=fn.upper() if isinstance(fn, str) else fn)
        if n.fn in GATE_ARITY and len(pins) != GATE_ARITY[n.fn]:
            diags.append(Diagnostic("arity", f"gate {n.name} ({n.fn}) expects {GATE_ARITY[n.fn]} pins, got {len(pins)}", (n.name,)))
            pins = pins[:GATE_ARITY[n.fn]]
        gate_pins.append((n, pins))
    po_pins = []
    po_seen: dict = {}
    for o in outputs:
        _expect(isinstance(o, dict) and isinstance(o.get("name"), str), f"bad output entry {o!r}")
        if o["name"] in po_seen:
            # a repeated output name is a second driver on the same output
            po_seen[o["name"]][1].append(o.get("driver"))
            continue
        n = add(kind=NodeKind.PO, name=o["name"])
        po_seen[o["name"]] = (n, [o.get("driver")])
        po_pins.append(po_seen[o["name"]])

    lookup: dict = {}
    for n in nodes:
        if n.kind is NodeKind.PO:
            continue
        if n.name in lookup:
            diags.append(Diagnostic("duplicate name", f"name {n.name!r} declared twice", (n.name,)))
        lookup[n.name] = n.id

    edges = []
    for n, refs in ff_pins + gate_pins:
        for pin, ref in enumerate(refs):
            if ref is None:
                continue
            if ref not in lookup:
                diags.append(Diagnostic("dangling reference", f"{n.name} pin {pin} references unknown signal {ref!r}", (n.name, str(ref))))
                continue
            edges.append((lookup[ref], n.id, pin))
    for n, refs in po_pins:
        for ref in refs:
            if ref is None:
                continue
            if ref not in lookup:
                diags.append(Diagnostic("dangling reference", f"output {n.name} references unknown signal {ref!r}", (n.name, str(ref))))
                continue
            edges.append((lookup[ref], n.id, 0))

    c = CircuitGraph(name=name, nodes=tuple(nodes), edges=tuple(edges))
    if not diags:
        diags = validate(c)
    if diags:
        raise NetlistError("; ".join(str(d) for d in diags), diags)
    return c


def load_netlist(path) -> CircuitGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_netlist(fh.read())


def netlist_dict(c: CircuitGraph) -> dict:
    by_id = c.node_by_id
    drv = c.drivers

    def ref(sink, pin=0):
        ds = drv.get(sink, ())
        return by_id[ds[pin]].name if pin < len(ds) else None

    return {
        "name": c.name,
        "inputs": [n.name for n in c.inputs],
        "consts": [{"name": n.name, "value": n.value} for n in c.of_kind(NodeKind.CONST)],
        "ffs": [{
            "name": n.name, "d": ref(n.id), "reset": n.reset_value, "module": list(n.module_path),
            "bus": None if n.bus_name is None else {"name": n.bus_name, "index": n.bus_index},
        } for n in c.ffs],
        "gates": [{"name": n.name, "fn": n.fn, "pins": [ref(n.id, p) for p in range(GATE_ARITY[n.fn])]}
                  for n in c.of_kind(NodeKind.GATE)],
        "outputs": [{"name": n.name, "driver": ref(n.id)} for n in c.outputs],
    }


def serialize_netlist(c: CircuitGraph) -> str:
    """Canonical text: sorted keys, arrays in declaration order."""
    return json.dumps(netlist_dict(c), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# flip-flop dependency graph

@dataclass(frozen=True)
class FFDependencyGraph:
    """Circuit collapsed over combinational gates.

    Vertices are FF, PI and PO node ids; an edge ``u -> v`` means a purely
    combinational path runs from the output of ``u`` to the input of ``v``.
    """

    vertices: tuple
    kinds: dict = field(compare=False)
    names: dict = field(compare=False)
    edges: tuple = ()

    @cached_property
    def succ(self) -> dict:
        out: dict = {v: [] for v in self.vertices}
        for u, v in self.edges:
            out[u].append(v)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def pred(self) -> dict:
        out: dict = {v: [] for v in self.vertices}
        for u, v in self.edges:
            out[v].append(u)
        return {k: tuple(sorted(v)) for k, v in out.items()}

    def of_kind(self, kind: NodeKind) -> tuple:
        return tuple(v for v in self.vertices if self.kinds[v] is kind)

    @cached_property
    def ff_by_name(self) -> dict:
        return {self.names[v]: v for v in self.vertices if self.kinds[v] is NodeKind.FF}

    def dumps(self) -> str:
        return json.dumps({
            "vertices": [[v, self.kinds[v].value, self.names[v]] for v in self.vertices],
            "edges": [list(e) for e in self.edges],
        }, sort_keys=True)


def derive_ff_graph(c: CircuitGraph) -> FFDependencyGraph:
    keep = (NodeKind.FF, NodeKind.PI, NodeKind.PO)
    verts = tuple(sorted(n.id for n in c.nodes if n.kind in keep))
    kinds = {v: c.node_by_id[v].kind for v in verts}
    fan = c.fanout
    by_id = c.node_by_id
    edges = set()
    for src in verts:
        if kinds[src] is NodeKind.PO:
            continue
        stack = list(fan[src])
        seen = set()
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            k = by_id[x].kind
            if k is NodeKind.GATE:
                stack.extend(fan[x])
            elif k in (NodeKind.FF, NodeKind.PO):
                edges.add((src, x))
    return FFDependencyGraph(
        vertices=verts,
        kinds=kinds,
        names={v: by_id[v].name for v in verts},
        edges=tuple(sorted(edges)),
    )


def build_circuit(name: str, inputs: Iterable[str] = (), ffs=(), gates=(), outputs=(), consts=()) -> CircuitGraph:
    """Convenience constructor going through the netlist parser.

    ``ffs`` items are dicts in netlist form; ``gates`` may be ``(name, fn, pins)``
    tuples and ``outputs`` ``(name, driver)`` tuples.
    """
    doc = {
        "name": name,
        "inputs": list(inputs),
        "ffs": [dict({"reset": 0, "module": [], "bus": None}, **f) for f in ffs],
        "gates": [g if isinstance(g, dict) else {"name": g[0], "fn": g[1], "pins": list(g[2])} for g in gates],
        "outputs": [o if isinstance(o, dict) else {"name": o[0], "driver": o[1]} for o in outputs],
        "consts": [k if isinstance(k, dict) else {"name": k[0], "value": k[1]} for k in consts],
    }
    return parse_netlist(json.dumps(doc))
