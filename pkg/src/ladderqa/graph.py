"""Small causal DAGs, d-separation, graph surgery and the graph catalog."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

MAX_NODES = 4

CATALOG_NAMES = (
    "chain",
    "collision",
    "fork",
    "confounding",
    "mediation",
    "diamond",
    "diamondcut",
    "IV",
    "arrowhead",
    "frontdoor",
)


class GraphError(ValueError):
    pass


class Relatives(NamedTuple):
    parents: frozenset
    children: frozenset
    ancestors: frozenset
    descendants: frozenset


@dataclass(frozen=True)
class Dag:
    """A directed acyclic graph with a fixed node order.

    The node order is used everywhere output order matters (parent bit
    patterns, rendered sentences), so it must be topological.
    """

    nodes: tuple
    edges: frozenset

    def __init__(self, nodes: Iterable[str], edges: Iterable[tuple[str, str]]):
        nodes = tuple(nodes)
        edges = frozenset((str(a), str(b)) for a, b in edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        self._validate()

    def _validate(self) -> None:
        if not self.nodes:
            raise GraphError("a graph needs at least one node")
        if any(not isinstance(n, str) or not n for n in self.nodes):
            raise GraphError(f"node ids must be nonempty strings: {self.nodes!r}")
        if len(set(self.nodes)) != len(self.nodes):
            raise GraphError(f"duplicate node ids in {self.nodes!r}")
        known = set(self.nodes)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise GraphError(f"edge {a}->{b} references an unknown node")
            if a == b:
                raise GraphError(f"self-loop on {a}")
        pos = {n: i for i, n in enumerate(self.nodes)}
        if any(pos[a] > pos[b] for a, b in self.edges):
            # fall back to a real check so the error message is right
            order = topological_order(self)
            raise GraphError(
                f"node order {self.nodes!r} is not topological; use {order!r}"
            )

    def parents(self, v: str) -> tuple:
        """Parents of ``v`` in node order (this order defines CPT bit patterns)."""
        self._require(v)
        return tuple(n for n in self.nodes if (n, v) in self.edges)

    def children(self, v: str) -> tuple:
        self._require(v)
        return tuple(n for n in self.nodes if (v, n) in self.edges)

    def _require(self, v: str) -> None:
        if v not in self.nodes:
            raise GraphError(f"unknown node {v!r}; graph has {list(self.nodes)}")

    def sorted_nodes(self, subset: Iterable[str]) -> tuple:
        subset = set(subset)
        return tuple(n for n in self.nodes if n in subset)


def topological_order(dag_or_nodes, edges=None) -> tuple:
    """Kahn's algorithm; raises GraphError on a cycle."""
    if edges is None:
        nodes, edges = dag_or_nodes.nodes, dag_or_nodes.edges
    else:
        nodes = tuple(dag_or_nodes)
    indeg = {n: 0 for n in nodes}
    for _, b in edges:
        indeg[b] += 1
    queue = deque(n for n in nodes if indeg[n] == 0)
    order = []
    while queue:
        n = queue.popleft()
        order.append(n)
        for a, b in sorted(edges):
            if a == n:
                indeg[b] -= 1
                if indeg[b] == 0:
                    queue.append(b)
    if len(order) != len(nodes):
        raise GraphError("graph contains a cycle")
    return tuple(order)


def _reach(dag: Dag, start: str, forward: bool) -> frozenset:
    seen = set()
    stack = [start]
    while stack:
        n = stack.pop()
        nxt = dag.children(n) if forward else dag.parents(n)
        for m in nxt:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return frozenset(seen)


def relatives(dag: Dag, v: str) -> Relatives:
    dag._require(v)
    return Relatives(
        parents=frozenset(dag.parents(v)),
        children=frozenset(dag.children(v)),
        ancestors=_reach(dag, v, forward=False),
        descendants=_reach(dag, v, forward=True),
    )


def ancestors(dag: Dag, v: str) -> frozenset:
    return _reach(dag, v, forward=False)


def descendants(dag: Dag, v: str) -> frozenset:
    return _reach(dag, v, forward=True)


def d_separated(dag: Dag, a: Iterable[str], b: Iterable[str], s: Iterable[str] = ()) -> bool:
    """True iff every path between ``a`` and ``b`` is blocked given ``s``.

    Reachability ("Bayes ball") over (node, direction) states: a trail may
    pass a collider only if the collider or one of its descendants is in
    ``s``, and may pass any other node only if that node is not in ``s``.
    """
    a, b, s = frozenset(a), frozenset(b), frozenset(s)
    for name, group in (("a", a), ("b", b), ("s", s)):
        for n in group:
            if n not in dag.nodes:
                raise GraphError(f"unknown node {n!r} in set {name}")
    if a & b or a & s or b & s:
        raise GraphError(
            f"sets must be pairwise disjoint: a={sorted(a)} b={sorted(b)} s={sorted(s)}"
        )
    # nodes that are in s or have a descendant in s
    opens_collider = set(s)
    for n in s:
        opens_collider |= ancestors(dag, n)

    # direction "up": arrived from a child; "down": arrived from a parent
    visited = set()
    queue = deque((n, "up") for n in a)
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node in b:
            return False
        if direction == "up" and node not in s:
            for p in dag.parents(node):
                queue.append((p, "up"))
            for c in dag.children(node):
                queue.append((c, "down"))
        elif direction == "down":
            if node not in s:
                for c in dag.children(node):
                    queue.append((c, "down"))
            if node in opens_collider:
                for p in dag.parents(node):
                    queue.append((p, "up"))
    return True


def mutilate(dag: Dag, targets: Iterable[str]) -> Dag:
    """Copy of ``dag`` with every edge pointing into a target removed."""
    targets = frozenset(targets)
    for t in targets:
        dag._require(t)
    return Dag(dag.nodes, (e for e in dag.edges if e[1] not in targets))


def remove_outgoing(dag: Dag, sources: Iterable[str]) -> Dag:
    sources = frozenset(sources)
    for t in sources:
        dag._require(t)
    return Dag(dag.nodes, (e for e in dag.edges if e[0] not in sources))


@dataclass(frozen=True)
class CgteSpec:
    """A catalog graph together with its treatment/outcome pair."""

    name: str
    dag: Dag
    treatment: str
    outcome: str
    unobserved: frozenset = field(default_factory=frozenset)
    mediators: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        nodes = set(self.dag.nodes)
        if self.treatment == self.outcome:
            raise GraphError("treatment and outcome must differ")
        for v in (self.treatment, self.outcome):
            if v not in nodes:
                raise GraphError(f"unknown node {v!r}")
            if v in self.unobserved:
                raise GraphError(f"{v} must be observed")
        if not set(self.unobserved) <= nodes:
            raise GraphError("unobserved nodes must belong to the graph")
        on_path = directed_path_nodes(self.dag, self.treatment, self.outcome)
        if not set(self.mediators) <= on_path:
            raise GraphError(
                f"mediators {sorted(self.mediators)} are not all on a "
                f"{self.treatment}->{self.outcome} path"
            )

    @property
    def observed(self) -> tuple:
        return tuple(n for n in self.dag.nodes if n not in self.unobserved)

    def role(self, v: str) -> str:
        if v == self.treatment:
            return "treatment"
        if v == self.outcome:
            return "outcome"
        return "other"

    def edge_list(self) -> list:
        """Edges sorted by node order of source then target."""
        pos = {n: i for i, n in enumerate(self.dag.nodes)}
        return sorted(self.dag.edges, key=lambda e: (pos[e[0]], pos[e[1]]))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "nodes": [{"id": n, "role": self.role(n)} for n in self.dag.nodes],
            "edges": [list(e) for e in self.edge_list()],
            "unobserved": [n for n in self.dag.nodes if n in self.unobserved],
        }

    @classmethod
    def from_json(cls, data: dict) -> "CgteSpec":
        nodes = [n["id"] for n in data["nodes"]]
        roles = {n["id"]: n["role"] for n in data["nodes"]}
        treatment = next(n for n, r in roles.items() if r == "treatment")
        outcome = next(n for n, r in roles.items() if r == "outcome")
        dag = Dag(nodes, [tuple(e) for e in data["edges"]])
        unobserved = frozenset(data.get("unobserved", ()))
        mediators = directed_path_nodes(dag, treatment, outcome) - unobserved
        return cls(data["name"], dag, treatment, outcome, unobserved, frozenset(mediators))


def directed_path_nodes(dag: Dag, src: str, dst: str) -> frozenset:
    """Nodes strictly between ``src`` and ``dst`` on some directed path."""
    return (descendants(dag, src) & ancestors(dag, dst)) - {src, dst}


_CATALOG_EDGES = {
    "chain": (("X", "M", "Y"), [("X", "M"), ("M", "Y")], ()),
    "collision": (("X", "Y", "C"), [("X", "C"), ("Y", "C")], ()),
    "fork": (("X", "Z", "Y"), [("Z", "Y"), ("X", "Y")], ()),
    "confounding": (("Z", "X", "Y"), [("Z", "X"), ("Z", "Y"), ("X", "Y")], ()),
    "mediation": (("X", "M", "Y"), [("X", "M"), ("M", "Y"), ("X", "Y")], ()),
    "diamond": (
        ("X", "A", "B", "Y"),
        [("X", "A"), ("X", "B"), ("A", "Y"), ("B", "Y")],
        (),
    ),
    "diamondcut": (
        ("Z", "X", "B", "Y"),
        [("Z", "X"), ("Z", "B"), ("X", "Y"), ("B", "Y")],
        (),
    ),
    "IV": (
        ("Z", "U", "X", "Y"),
        [("Z", "X"), ("U", "X"), ("U", "Y"), ("X", "Y")],
        ("U",),
    ),
    # the M-Y confounder is observed; with it hidden NDE/NIE are not identifiable
    "arrowhead": (
        ("X", "Z", "M", "Y"),
        [("X", "M"), ("X", "Y"), ("M", "Y"), ("Z", "M"), ("Z", "Y")],
        (),
    ),
    "frontdoor": (
        ("U", "X", "M", "Y"),
        [("U", "X"), ("U", "Y"), ("X", "M"), ("M", "Y")],
        ("U",),
    ),
}

_CATALOG: dict = {}


def _build(name: str) -> CgteSpec:
    nodes, edges, hidden = _CATALOG_EDGES[name]
    dag = Dag(nodes, edges)
    hidden = frozenset(hidden)
    meds = directed_path_nodes(dag, "X", "Y") - hidden
    if name == "collision":
        meds = frozenset()
    return CgteSpec(name, dag, "X", "Y", hidden, frozenset(meds))


def canonical_name(name: str) -> str:
    for key in CATALOG_NAMES:
        if key.lower() == str(name).lower():
            return key
    raise GraphError(
        f"unknown catalog graph {name!r}; valid keys: {', '.join(CATALOG_NAMES)}"
    )


def catalog(name: str) -> CgteSpec:
    key = canonical_name(name)
    if key not in _CATALOG:
        _CATALOG[key] = _build(key)
    return _CATALOG[key]


def catalog_json(indent: int | None = 2) -> str:
    return json.dumps([catalog(n).to_json() for n in CATALOG_NAMES], indent=indent, ensure_ascii=False)
