import json

import pytest
from hypothesis import given, settings, strategies as st

from seucluster.circuit import (CircuitGraph, NetlistError, Node, NodeKind, build_circuit, derive_ff_graph,
                                parse_netlist, serialize_netlist, validate)

from oracles import naive_ff_edges, random_circuit, random_netlist


def ff(name, d, **kw):
    return dict({"name": name, "d": d}, **kw)


def toggle_loop():
    return build_circuit("loop", inputs=["a"], ffs=[ff("f", "x")], gates=[("x", "XOR", ["a", "f"])],
                         outputs=[("y", "f")])


def shift3():
    return build_circuit("sr", inputs=["a"], ffs=[ff("f1", "a"), ff("f2", "f1"), ff("f3", "f2")],
                         outputs=[("y", "f3")])


def edges_by_name(g):
    return {(g.names[u], g.names[v]) for u, v in g.edges}


def test_minimal_loop_parses():
    c = toggle_loop()
    assert len(c.nodes) == 4
    assert validate(c) == []
    assert [n.name for n in c.ffs] == ["f"]


def test_gate_self_cycle_rejected():
    with pytest.raises(NetlistError) as e:
        build_circuit("bad", inputs=["a"], gates=[("x", "AND", ["x", "a"])], outputs=[("y", "x")])
    assert "combinational cycle" in str(e.value)
    assert any("x" in d.nodes for d in e.value.diagnostics)


def test_longer_cycle_names_members():
    with pytest.raises(NetlistError) as e:
        build_circuit("bad", inputs=["a"], gates=[("x", "AND", ["z", "a"]), ("z", "NOT", ["x"])],
                      outputs=[("y", "x")])
    d = e.value.diagnostics[0]
    assert d.kind == "combinational cycle"
    assert set(d.nodes) == {"x", "z"}


def test_shift_register_node_by_node():
    c = shift3()
    assert len(c.ffs) == 3
    f1, f2, f3 = (c.node_by_name[n] for n in ("f1", "f2", "f3"))
    assert c.drivers[f2.id] == (f1.id,)
    assert c.drivers[f3.id] == (f2.id,)
    assert c.node_by_name["a"].kind is NodeKind.PI


def test_syntax_error_has_position():
    with pytest.raises(NetlistError) as e:
        parse_netlist('{"name": "x",\n  "inputs": [,]}')
    assert e.value.line == 2
    assert e.value.column is not None


def test_dangling_reference():
    with pytest.raises(NetlistError) as e:
        build_circuit("d", inputs=["a"], ffs=[ff("f", "nowhere")])
    assert e.value.diagnostics[0].kind == "dangling reference"
    assert "nowhere" in str(e.value)


def test_two_drivers_on_one_output():
    doc = {"name": "t", "inputs": ["a", "b"], "ffs": [], "gates": [], "consts": [],
           "outputs": [{"name": "y", "driver": "a"}, {"name": "y", "driver": "b"}]}
    with pytest.raises(NetlistError) as e:
        parse_netlist(json.dumps(doc))
    assert [d.kind for d in e.value.diagnostics] == ["multiple drivers"]


def test_bad_arity_and_function():
    with pytest.raises(NetlistError):
        build_circuit("t", inputs=["a"], gates=[("x", "AND", ["a"])], outputs=[("y", "x")])
    with pytest.raises(NetlistError):
        build_circuit("t", inputs=["a"], gates=[("x", "FOO", ["a", "a"])], outputs=[("y", "x")])


def test_duplicate_bus_bit():
    with pytest.raises(NetlistError) as e:
        build_circuit("t", inputs=["a"], ffs=[ff("p", "a", bus={"name": "b", "index": 0}),
                                               ff("q", "a", bus={"name": "b", "index": 0})])
    assert "duplicate bus bit" in str(e.value)


def test_validate_well_formed_is_empty():
    assert validate(shift3()) == []


def test_validate_missing_driver():
    nodes = (Node(0, NodeKind.PI, "a"), Node(1, NodeKind.FF, "f"), Node(2, NodeKind.PO, "y"))
    c = CircuitGraph("m", nodes, ((1, 2, 0),))
    diags = validate(c)
    assert [d.kind for d in diags] == ["missing driver"]
    assert diags[0].nodes == ("f",)


def test_validate_multiple_drivers_on_po():
    nodes = (Node(0, NodeKind.PI, "a"), Node(1, NodeKind.PI, "b"), Node(2, NodeKind.PO, "y"))
    diags = validate(CircuitGraph("m", nodes, ((0, 2, 0), (1, 2, 0))))
    assert [d.kind for d in diags] == ["multiple drivers"]


def test_round_trip_identity():
    c = random_circuit(7, 30)
    again = parse_netlist(serialize_netlist(c))
    assert again == c
    assert serialize_netlist(again) == serialize_netlist(c)


def test_serialization_is_canonical():
    text = serialize_netlist(shift3())
    doc = json.loads(text)
    assert list(doc) == sorted(doc)
    assert [f["name"] for f in doc["ffs"]] == ["f1", "f2", "f3"]


def test_ff_graph_chain():
    g = derive_ff_graph(shift3())
    assert edges_by_name(g) == {("a", "f1"), ("f1", "f2"), ("f2", "f3"), ("f3", "y")}


def test_ff_graph_toggle_self_loop():
    c = build_circuit("t", ffs=[ff("f", "n")], gates=[("n", "NOT", ["f"])])
    assert edges_by_name(derive_ff_graph(c)) == {("f", "f")}


def test_ff_graph_deterministic():
    c = random_circuit(3, 40)
    assert derive_ff_graph(c).dumps() == derive_ff_graph(c).dumps()


def test_every_ff_once_in_graph():
    c = random_circuit(11, 60)
    g = derive_ff_graph(c)
    ff_vertices = [v for v in g.vertices if g.kinds[v] is NodeKind.FF]
    assert sorted(ff_vertices) == sorted(n.id for n in c.ffs)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n_ff=st.integers(1, 60))
def test_ff_graph_matches_naive_reachability(seed, n_ff):
    c = random_circuit(seed, n_ff)
    assert set(derive_ff_graph(c).edges) == naive_ff_edges(c)


def test_ff_graph_200_nodes():
    c = random_circuit(99, 60, n_gates=140)
    assert len(c.nodes) >= 200
    assert set(derive_ff_graph(c).edges) == naive_ff_edges(c)


def test_declaration_order_does_not_matter_for_names():
    doc = random_netlist(5, 20)
    doc2 = dict(doc, ffs=list(reversed(doc["ffs"])))
    a, b = parse_netlist(json.dumps(doc)), parse_netlist(json.dumps(doc2))
    assert edges_by_name(derive_ff_graph(a)) == edges_by_name(derive_ff_graph(b))
