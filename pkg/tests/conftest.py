"""Shared fixtures and independent brute-force oracles.

The oracles here deliberately avoid the package's own inference code: they
enumerate assignments with exact fractions, or enumerate the exogenous box
cell by cell for parameters on a coarse grid.
"""
from __future__ import annotations

import itertools
import json
from fractions import Fraction

import numpy as np
import pytest

from ladderqa.graph import Dag, catalog, topological_order
from ladderqa.model import CbnParams

CONF_A = {
    "Z": {"parents": [], "table": {"": 0.5}},
    "X": {"parents": ["Z"], "table": {"0": 0.3, "1": 0.7}},
    "Y": {"parents": ["Z", "X"], "table": {"00": 0.4, "01": 0.8, "10": 0.2, "11": 0.6}},
}


def theta(params: CbnParams, dag: Dag, v: str, world: dict) -> Fraction:
    key = "".join(str(world[p]) for p in dag.parents(v))
    return Fraction(params.table(v)[key]).limit_denominator(10_000)


def exact_joint(dag: Dag, params: CbnParams, world: dict, do: dict | None = None) -> Fraction:
    do = do or {}
    out = Fraction(1)
    for v in dag.nodes:
        if v in do:
            if world[v] != do[v]:
                return Fraction(0)
            continue
        t = theta(params, dag, v, world)
        out *= t if world[v] == 1 else 1 - t
    return out


def exact_prob(dag, params, event: dict, given: dict | None = None, do: dict | None = None) -> Fraction:
    given = given or {}
    num = den = Fraction(0)
    for vals in itertools.product((0, 1), repeat=len(dag.nodes)):
        w = dict(zip(dag.nodes, vals))
        p = exact_joint(dag, params, w, do)
        if all(w[k] == v for k, v in given.items()):
            den += p
            if all(w[k] == v for k, v in event.items()):
                num += p
    return num / den


def grid_params(rng: np.random.Generator, dag: Dag, step: int = 10) -> CbnParams:
    """Parameters on a 1/step grid, strictly inside (0, 1)."""
    tables = {}
    for v in dag.nodes:
        k = len(dag.parents(v))
        tables[v] = {
            "".join(str((i >> b) & 1) for b in range(k)): int(rng.integers(1, step)) / step
            for i in range(2**k)
        }
    return CbnParams(tables)


def brute_counterfactual(dag, params, target: list, given: list, step: int = 10) -> Fraction:
    """P(target | given) for literals ``(node, do_dict, value)`` under the
    threshold SCM, by enumerating every exogenous cell of width 1/step.

    With thresholds on the same grid, v is constant on each cell.
    """
    order = topological_order(dag)
    # thresholds in grid units; cell c spans (c/step, (c+1)/step]
    grid = {v: {k: round(t * step) for k, t in params.table(v).items()} for v in order}
    hits = total = 0
    for cells in itertools.product(range(step), repeat=len(order)):
        u = dict(zip(order, cells))

        def world(do):
            w = {}
            for v in order:
                if v in do:
                    w[v] = do[v]
                else:
                    key = "".join(str(w[q]) for q in dag.parents(v))
                    w[v] = int(u[v] + 1 <= grid[v][key])
            return w

        memo = {}

        def val(node, do):
            key = tuple(sorted(do.items()))
            if key not in memo:
                memo[key] = world(do)
            return memo[key][node]

        if all(val(n, d) == x for n, d, x in given):
            total += 1
            if all(val(n, d) == x for n, d, x in target):
                hits += 1
    return Fraction(hits, total)


@pytest.fixture
def conf_a():
    c = catalog("confounding")
    return c, CbnParams.from_json(CONF_A, c.dag)


@pytest.fixture
def conf_a_file(tmp_path):
    p = tmp_path / "conf_a.json"
    p.write_text(json.dumps(CONF_A), encoding="utf-8")
    return p


@pytest.fixture(scope="session")
def small_dataset():
    from ladderqa.dataset import GenConfig, generate

    return list(generate(GenConfig(total=200, seed=7)))
