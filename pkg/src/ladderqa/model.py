"""Binary causal Bayesian networks and their canonical threshold SCM.

Every node ``v`` carries an exogenous ``U_v ~ Uniform(0, 1)`` and is set by
``v := 1 iff U_v <= theta_v(parent values)``.  This reproduces the Bernoulli
CPTs observationally and makes counterfactuals exactly computable: for each
node the distinct CPT entries cut ``[0, 1]`` into intervals on which the
node's response to its parents is constant, so the exogenous cube splits
into finitely many cells with known volume.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

from .graph import Dag, GraphError, mutilate

log = logging.getLogger(__name__)

GRID = 100  # probabilities live on a 1/GRID grid


class ModelError(ValueError):
    pass


class ZeroProbabilityError(ModelError):
    """Conditioning on an event of probability zero."""


class GenerationError(RuntimeError):
    pass


def bits(config: tuple) -> str:
    return "".join(str(int(b)) for b in config)


@dataclass(frozen=True)
class CbnParams:
    """``tables[v][parent bit pattern] = P(v = 1 | parents)``.

    Bit patterns follow ``dag.parents(v)`` order; a root node uses ``""``.
    """

    tables: tuple  # ((node, ((pattern, p), ...)), ...) -- hashable storage

    def __init__(self, tables: Mapping[str, Mapping[str, float]]):
        frozen = tuple(
            (str(v), tuple(sorted((str(k), float(p)) for k, p in t.items())))
            for v, t in tables.items()
        )
        object.__setattr__(self, "tables", frozen)

    def table(self, v: str) -> dict:
        for node, rows in self.tables:
            if node == v:
                return dict(rows)
        raise ModelError(f"no table for node {v!r}")

    def theta(self, v: str, config: tuple) -> float:
        return self.table(v)[bits(config)]

    def as_dict(self) -> dict:
        return {v: dict(rows) for v, rows in self.tables}

    def validate(self, dag: Dag) -> None:
        have = {v for v, _ in self.tables}
        if have != set(dag.nodes):
            raise ModelError(
                f"params cover {sorted(have)} but graph has {sorted(dag.nodes)}"
            )
        for v in dag.nodes:
            t = self.table(v)
            k = len(dag.parents(v))
            want = {bits(c) for c in itertools.product((0, 1), repeat=k)}
            if set(t) != want:
                raise ModelError(
                    f"table for {v} must have one entry per parent configuration {sorted(want)}"
                )
            for key, p in t.items():
                if not 0.0 <= p <= 1.0:
                    raise ModelError(f"P({v}=1|{key}) = {p} is outside [0, 1]")

    def to_json(self, dag: Dag) -> dict:
        return {
            v: {"parents": list(dag.parents(v)), "table": dict(sorted(self.table(v).items()))}
            for v in dag.nodes
        }

    @classmethod
    def from_json(cls, data: Mapping, dag: Dag | None = None) -> "CbnParams":
        tables = {}
        for v, entry in data.items():
            if isinstance(entry, Mapping) and "table" in entry:
                if dag is not None and list(entry.get("parents", [])) != list(dag.parents(v)):
                    raise ModelError(
                        f"parent order for {v} is {entry.get('parents')}, graph says {list(dag.parents(v))}"
                    )
                tables[v] = entry["table"]
            else:
                tables[v] = entry
        params = cls(tables)
        if dag is not None:
            params.validate(dag)
        return params


def params_from_rows(
    dag: Dag,
    rows: Mapping[str, Union[float, Iterable[float]]],
    orders: Mapping[str, Iterable[str]] | None = None,
) -> CbnParams:
    """Build params from per-node value lists.

    Lists are indexed with the FIRST listed parent varying fastest, e.g. for
    parents (X, Z) the order is (0,0), (1,0), (0,1), (1,1).  ``orders[v]``
    overrides the parent listing order (default: graph node order).
    """
    orders = dict(orders or {})
    tables = {}
    for v in dag.nodes:
        pa = dag.parents(v)
        listed = tuple(orders.get(v, pa))
        if sorted(listed) != sorted(pa):
            raise ModelError(f"order for {v} must list its parents {pa}")
        vals = rows[v]
        vals = [vals] if np.isscalar(vals) else list(vals)
        if len(vals) != 2 ** len(pa):
            raise ModelError(f"{v} needs {2 ** len(pa)} entries, got {len(vals)}")
        table = {}
        for i, p in enumerate(vals):
            by_name = {u: (i >> j) & 1 for j, u in enumerate(listed)}
            table[bits(tuple(by_name[u] for u in pa))] = float(p)
        tables[v] = table
    return CbnParams(tables)


Assignment = Mapping[str, int]


def _check_assignment(dag: Dag, a: Assignment, what: str) -> None:
    for k, val in a.items():
        if k not in dag.nodes:
            raise GraphError(f"unknown node {k!r} in {what}")
        if val not in (0, 1):
            raise ModelError(f"{what}: {k}={val!r} is not binary")


def joint(dag: Dag, params: CbnParams, full_assignment: Assignment) -> float:
    """Probability of a complete assignment under the CBN factorization."""
    missing = [v for v in dag.nodes if v not in full_assignment]
    if missing:
        raise ModelError(f"assignment is incomplete; missing {missing}")
    _check_assignment(dag, full_assignment, "assignment")
    p = 1.0
    for v in dag.nodes:
        theta = params.theta(v, tuple(full_assignment[u] for u in dag.parents(v)))
        p *= theta if full_assignment[v] else 1.0 - theta
    return p


def joint_table(dag: Dag, params: CbnParams) -> list:
    """All ``2**k`` (assignment tuple in node order, probability) pairs."""
    pa_idx = [tuple(dag.nodes.index(u) for u in dag.parents(v)) for v in dag.nodes]
    tables = [params.table(v) for v in dag.nodes]
    out = []
    for values in itertools.product((0, 1), repeat=len(dag.nodes)):
        p = 1.0
        for i, v in enumerate(values):
            theta = tables[i][bits(tuple(values[j] for j in pa_idx[i]))]
            p *= theta if v else 1.0 - theta
        out.append((values, p))
    return out


def _mass(dag: Dag, table: list, event: Assignment) -> float:
    idx = [(dag.nodes.index(k), v) for k, v in event.items()]
    return math.fsum(p for values, p in table if all(values[i] == v for i, v in idx))


def prob(dag: Dag, params: CbnParams, event: Assignment, given: Assignment | None = None) -> float:
    """P(event | given) by enumeration of the joint."""
    given = dict(given or {})
    event = dict(event)
    if not event:
        raise ModelError("event must be nonempty")
    _check_assignment(dag, event, "event")
    _check_assignment(dag, given, "given")
    if set(event) & set(given):
        clash = {k for k in event if k in given}
        # self-conditioning is allowed when values agree
        if any(event[k] != given[k] for k in clash):
            return 0.0 if _mass(dag, joint_table(dag, params), given) > 0 else _zero(given)
        event = {k: v for k, v in event.items() if k not in clash}
        if not event:
            if _mass(dag, joint_table(dag, params), given) == 0:
                _zero(given)
            return 1.0
    table = joint_table(dag, params)
    if not given:
        return _mass(dag, table, event)
    denom = _mass(dag, table, given)
    if denom == 0.0:
        _zero(given)
    return _mass(dag, table, {**event, **given}) / denom


def _zero(given: Assignment):
    raise ZeroProbabilityError(f"conditioning on a zero-probability event {dict(given)}")


def clamp(dag: Dag, params: CbnParams, do: Assignment) -> tuple:
    """Mutilated graph and params with intervened nodes fixed."""
    _check_assignment(dag, do, "do")
    g = mutilate(dag, do)
    tables = params.as_dict()
    for v, val in do.items():
        tables[v] = {"": float(val)}
    return g, CbnParams(tables)


def interventional_prob(
    dag: Dag,
    params: CbnParams,
    do: Assignment,
    event: Assignment,
    given: Assignment | None = None,
) -> float:
    """P(event | do(...), given) via truncated factorization."""
    do = dict(do)
    if set(do) & set(event):
        clash = [k for k in event if k in do]
        if any(event[k] != do[k] for k in clash):
            return 0.0
        event = {k: v for k, v in event.items() if k not in clash}
        if not event:
            return 1.0
    g, p = clamp(dag, params, do)
    return prob(g, p, event, given)


# ---------------------------------------------------------------------------
# counterfactuals


@dataclass(frozen=True)
class Cf:
    """Potential outcome ``node`` under interventions.

    Intervention values are ints or nested ``Cf`` terms evaluated in the same
    unit, e.g. ``Cf("Y", (("X", 1), ("M", Cf("M", (("X", 0),)))))`` is
    ``Y_{X=1, M=M_{X=0}}``.  An empty intervention tuple is the factual value.
    """

    node: str
    do: tuple = ()

    def __str__(self) -> str:
        if not self.do:
            return self.node
        inner = ",".join(f"{k}={v}" for k, v in self.do)
        return f"{self.node}_{{{inner}}}"


def factual(node: str) -> Cf:
    return Cf(node, ())


def cf(node: str, **do) -> Cf:
    return Cf(node, tuple(sorted(do.items())))


Literal = tuple  # (Cf, value)


@dataclass(frozen=True)
class Scm:
    """Canonical monotone threshold SCM induced by a CBN."""

    dag: Dag
    params: CbnParams

    def response_cells(self, v: str) -> list:
        """``[(volume, {parent pattern: value}), ...]`` partitioning U_v."""
        table = self.params.table(v)
        cuts = sorted({0.0, 1.0, *table.values()})
        out = []
        for lo, hi in zip(cuts, cuts[1:]):
            if hi <= lo:
                continue
            out.append((hi - lo, {k: int(th >= hi) for k, th in table.items()}))
        return out


def _world(dag: Dag, responses: Mapping, do: tuple, memo: dict) -> dict:
    key = do
    if key in memo:
        return memo[key]
    fixed = {}
    for k, val in do:
        if isinstance(val, Cf):
            val = _world(dag, responses, val.do, memo)[val.node]
        fixed[k] = val
    values = {}
    for v in dag.nodes:
        if v in fixed:
            values[v] = fixed[v]
        else:
            values[v] = responses[v][bits(tuple(values[u] for u in dag.parents(v)))]
    memo[key] = values
    return values


def _check_literals(dag: Dag, lits: Iterable[Literal]) -> list:
    out = []
    for term, val in lits:
        if not isinstance(term, Cf):
            term = factual(term)
        if term.node not in dag.nodes:
            raise GraphError(f"unknown node {term.node!r}")
        out.append((term, int(val)))
    return out


def cf_joint_prob(scm: Scm, target: Iterable[Literal], given: Iterable[Literal] = ()) -> float:
    """Exact P(target literals | given literals) over the exogenous cube.

    Literals are ``(Cf term, value)`` pairs; bare node names mean factual
    values.  Abduction, action and prediction happen together: a cell is
    kept iff its factual (or counterfactual) worlds satisfy ``given`` and
    counted iff they also satisfy ``target``.
    """
    dag = scm.dag
    target = _check_literals(dag, target)
    given = _check_literals(dag, given)
    per_node = [scm.response_cells(v) for v in dag.nodes]
    num = []
    den = []
    for combo in itertools.product(*per_node):
        w = 1.0
        responses = {}
        for v, (vol, resp) in zip(dag.nodes, combo):
            w *= vol
            responses[v] = resp
        memo: dict = {}
        if all(_world(dag, responses, t.do, memo)[t.node] == val for t, val in given):
            den.append(w)
            if all(_world(dag, responses, t.do, memo)[t.node] == val for t, val in target):
                num.append(w)
    d = math.fsum(den)
    if d == 0.0:
        raise ZeroProbabilityError("counterfactual evidence has probability zero")
    return math.fsum(num) / d


def cf_expectation(scm: Scm, term: Cf, given: Iterable[Literal] = ()) -> float:
    return cf_joint_prob(scm, [(term, 1)], given)


def counterfactual_prob(
    scm: Scm, evidence: Assignment, do: Assignment, target: Assignment
) -> float:
    """P(target_{do} | evidence): evidence is factual, target counterfactual."""
    _check_assignment(scm.dag, evidence, "evidence")
    _check_assignment(scm.dag, do, "do")
    _check_assignment(scm.dag, target, "target")
    if not target:
        raise ModelError("target must be nonempty")
    do_t = tuple(sorted(do.items()))
    lits = [(Cf(k, do_t), v) for k, v in target.items()]
    ev = [(factual(k), v) for k, v in evidence.items()]
    return cf_joint_prob(scm, lits, ev)


def _mc_world(dag, params, u, do, memo):
    if do in memo:
        return memo[do]
    fixed = {}
    for k, val in do:
        if isinstance(val, Cf):
            val = _mc_world(dag, params, u, val.do, memo)[val.node]
        fixed[k] = val
    n = u.shape[0]
    values = {}
    for i, v in enumerate(dag.nodes):
        if v in fixed:
            f = fixed[v]
            values[v] = np.full(n, f, dtype=np.int8) if np.isscalar(f) else f
            continue
        pa = dag.parents(v)
        table = params.table(v)
        lookup = np.array(
            [table[bits(tuple((j >> b) & 1 for b in range(len(pa))))] for j in range(2 ** len(pa))]
        )
        idx = np.zeros(n, dtype=np.int64)
        for b, p in enumerate(pa):
            idx |= values[p].astype(np.int64) << b
        values[v] = (u[:, i] <= lookup[idx]).astype(np.int8)
    memo[do] = values
    return values


def cf_joint_prob_mc(
    scm: Scm,
    target: Iterable[Literal],
    given: Iterable[Literal] = (),
    n_accept: int = 1_000_000,
    seed: int = 0,
    batch: int = 1_000_000,
    max_draws: int = 200_000_000,
) -> tuple:
    """Monte Carlo estimate of :func:`cf_joint_prob`.

    Draws exogenous batches until ``n_accept`` samples satisfy ``given``.
    Returns ``(estimate, standard error, accepted)``.
    """
    dag = scm.dag
    target = _check_literals(dag, target)
    given = _check_literals(dag, given)
    rng = np.random.default_rng(seed)
    hits = 0
    accepted = 0
    drawn = 0
    while accepted < n_accept:
        if drawn >= max_draws:
            raise ZeroProbabilityError("evidence too rare for Monte Carlo")
        u = rng.random((batch, len(dag.nodes)))
        drawn += batch
        memo: dict = {}
        ok = np.ones(batch, dtype=bool)
        for t, val in given:
            ok &= _mc_world(dag, scm.params, u, t.do, memo)[t.node] == val
        hit = ok.copy()
        for t, val in target:
            hit &= _mc_world(dag, scm.params, u, t.do, memo)[t.node] == val
        take = min(int(ok.sum()), n_accept - accepted)
        if take < ok.sum():
            # keep the first `take` accepted rows only
            rows = np.flatnonzero(ok)[:take]
            hits += int(hit[rows].sum())
        else:
            hits += int(hit.sum())
        accepted += take
    est = hits / accepted
    se = math.sqrt(max(est * (1 - est), 1e-300) / accepted)
    return est, se, accepted


# ---------------------------------------------------------------------------
# parameter sampling


@dataclass(frozen=True)
class ParamConfig:
    low: int = 1  # in grid units
    high: int = 99
    max_resamples: int = 1000


def sample_params(
    rng: np.random.Generator,
    dag: Dag,
    config: ParamConfig = ParamConfig(),
    accept: Callable[[CbnParams], bool] | None = None,
) -> CbnParams:
    """Draw every CPT entry uniformly from the 0.01 grid in [0.01, 0.99].

    ``accept`` lets the caller reject degenerate draws; after
    ``config.max_resamples`` rejections a :class:`GenerationError` is raised.
    """
    for _ in range(config.max_resamples + 1):
        tables = {}
        for v in dag.nodes:
            k = len(dag.parents(v))
            draws = rng.integers(config.low, config.high + 1, size=2**k)
            tables[v] = {
                bits(tuple((i >> b) & 1 for b in range(k))): int(d) / GRID
                for i, d in enumerate(draws)
            }
        params = CbnParams(tables)
        if accept is None or accept(params):
            return params
    raise GenerationError(
        f"no acceptable parameters after {config.max_resamples} resamples"
    )


def dumps_params(dag: Dag, params: CbnParams) -> str:
    return json.dumps(params.to_json(dag), ensure_ascii=False, sort_keys=False)
