from __future__ import annotations

import json

import pytest

from ladderqa.graph import (
    CATALOG_NAMES,
    CgteSpec,
    Dag,
    GraphError,
    ancestors,
    canonical_name,
    catalog,
    catalog_json,
    d_separated,
    descendants,
    mutilate,
    remove_outgoing,
    topological_order,
)


def test_catalog_has_ten_graphs_within_size_limit():
    assert len(CATALOG_NAMES) == 10
    for name in CATALOG_NAMES:
        c = catalog(name)
        assert 3 <= len(c.dag.nodes) <= 4
        assert c.treatment != c.outcome


def test_cycle_rejected():
    with pytest.raises(GraphError, match="cycle"):
        Dag(["A", "B"], [("A", "B"), ("B", "A")])


def test_unknown_edge_endpoint_rejected():
    with pytest.raises(GraphError):
        Dag(["A"], [("A", "B")])


def test_topological_order_respects_edges():
    for name in CATALOG_NAMES:
        dag = catalog(name).dag
        pos = {v: i for i, v in enumerate(topological_order(dag))}
        for a in dag.nodes:
            for b in dag.children(a):
                assert pos[a] < pos[b]


def test_ancestors_and_descendants():
    dag = catalog("chain").dag
    assert ancestors(dag, "Y") == {"X", "M"}
    assert descendants(dag, "X") == {"M", "Y"}


@pytest.mark.parametrize(
    "graph,a,b,s,expected",
    [
        ("chain", "X", "Y", (), False),
        ("chain", "X", "Y", ("M",), True),
        ("collision", "X", "Y", (), True),
        ("collision", "X", "Y", ("C",), False),
        ("confounding", "X", "Y", ("Z",), False),
        ("fork", "X", "Z", (), True),
        ("fork", "X", "Z", ("Y",), False),
        ("frontdoor", "X", "Y", ("M", "U"), True),
        ("IV", "Z", "Y", ("X",), False),
        ("IV", "Z", "U", (), True),
    ],
)
def test_d_separation_examples(graph, a, b, s, expected):
    assert d_separated(catalog(graph).dag, {a}, {b}, s) is expected


def test_d_separation_is_symmetric():
    for name in CATALOG_NAMES:
        dag = catalog(name).dag
        for a in dag.nodes:
            for b in dag.nodes:
                if a == b:
                    continue
                rest = [v for v in dag.nodes if v not in (a, b)]
                for s in ([], rest[:1], rest):
                    assert d_separated(dag, {a}, {b}, s) == d_separated(dag, {b}, {a}, s)


def test_mutilate_and_remove_outgoing():
    dag = catalog("confounding").dag
    assert mutilate(dag, ["X"]).parents("X") == ()
    assert remove_outgoing(dag, ["X"]).children("X") == ()
    assert dag.parents("X") == ("Z",)  # original untouched


def test_cgte_json_round_trip():
    for name in CATALOG_NAMES:
        c = catalog(name)
        again = CgteSpec.from_json(json.loads(json.dumps(c.to_json())))
        assert again.edge_list() == c.edge_list()
        assert again.unobserved == c.unobserved
    assert len(json.loads(catalog_json())) == 10


def test_canonical_name_aliases():
    assert canonical_name("Confounding") == "confounding"
    with pytest.raises(GraphError):
        canonical_name("nope")


def test_unobserved_nodes():
    assert catalog("frontdoor").unobserved == {"U"}
    assert catalog("IV").unobserved == {"U"}
    assert "U" not in catalog("IV").observed
