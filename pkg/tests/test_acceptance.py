"""Acceptance suite: one test per headline requirement, each at its stated tolerance."""
from __future__ import annotations

import itertools
import time
from collections import Counter, defaultdict

import numpy as np
import pytest

from ladderqa import engine, model
from ladderqa.dataset import GenConfig, generate, iv_admissible, verify_records
from ladderqa.engine import DataTerm
from ladderqa.evalharness import MockClient, grade, run
from ladderqa.graph import CATALOG_NAMES, Dag, catalog, d_separated
from ladderqa.model import Cf, Scm, cf_joint_prob, cf_joint_prob_mc, factual, params_from_rows
from ladderqa.query import DegenerateInstance, Q, QueryInstance, applicability, applicable_cells
from ladderqa.verbalize import get_story, render_data_sentence

ALL = set(CATALOG_NAMES)


# ---------------------------------------------------------------------------
# 1. oracle equivalence sweep


def _variants(cgte, q, i):
    if q is Q.COUNTERFACTUAL_PROB:
        return {"treatment_value": i % 2}
    if q is Q.ADJUSTMENT_SET:
        cands = engine.adjustment_candidates(cgte)
        return {"candidate": cands[i % len(cands)]}
    return {}


def test_oracle_equivalence_sweep():
    per_cell = 200
    start = time.perf_counter()
    worst = 0.0
    for g, q in applicable_cells():
        c = catalog(g)
        rng = np.random.default_rng([2024, CATALOG_NAMES.index(g), list(Q).index(q)])
        estimands = {}
        done = 0
        draws = 0
        while done < per_cell:
            draws += 1
            assert draws < 20 * per_cell, f"{g}/{q.value}: too many rejected draws"
            p = model.sample_params(rng, c.dag)
            if g == "IV" and not iv_admissible(c, p):
                continue
            kw = _variants(c, q, done)
            qi = QueryInstance(q, c, **kw)
            key = tuple(sorted(kw.items()))
            if key not in estimands:
                estimands[key] = engine.derive_estimand(c, qi)
            try:
                truth = engine.oracle(c, p, qi)
            except DegenerateInstance:
                continue  # adjustment question with no right answer on these numbers
            got = engine.evaluate_with_params(estimands[key], c, p)
            err = abs(got - truth)
            worst = max(worst, err)
            assert err <= 1e-9, f"{g}/{q.value} {kw}: estimand {got!r} vs oracle {truth!r}"
            done += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"sweep took {elapsed:.1f}s (max abs error {worst:.2e})"


# ---------------------------------------------------------------------------
# 2. worked-instance ledger


def _value(graph, q, params, **kw):
    c = catalog(graph)
    qi = QueryInstance(q, c, strict=False, **kw)
    est = engine.derive_estimand(c, qi)
    return engine.evaluate_with_params(est, c, params), engine.oracle(c, params, qi)


def test_worked_instance_ledger():
    conf = catalog("confounding")
    pc = params_from_rows(conf.dag, {"Z": 0.5, "X": [0.3, 0.7], "Y": [0.4, 0.8, 0.2, 0.6]}, orders={"Y": ["X", "Z"]})
    fd = catalog("frontdoor")
    pf = params_from_rows(
        fd.dag, {"U": 0.5, "X": [0.2, 0.8], "M": [0.1, 0.9], "Y": [0.2, 0.7, 0.4, 0.9]}, orders={"Y": ["M", "U"]}
    )
    med = catalog("mediation")
    pm = params_from_rows(med.dag, {"X": 0.5, "M": [0.2, 0.8], "Y": [0.2, 0.5, 0.5, 0.8]})
    ch = catalog("chain")
    pch = params_from_rows(ch.dag, {"X": 0.5, "M": [0.2, 0.8], "Y": [0.3, 0.9]})

    do_fd = engine.evaluate_with_params(engine.do_estimand(fd, 1), fd, pf)
    ledger = {
        "confounding ATE": (_value("confounding", Q.ATE, pc), 0.40),
        "confounding ATT": (_value("confounding", Q.ATT, pc), 0.40),
        "confounding P(Y=1)": ((model.prob(conf.dag, pc, {"Y": 1}),) * 2, 0.50),
        "confounding P(Y=1|X=1)": ((model.prob(conf.dag, pc, {"Y": 1}, {"X": 1}),) * 2, 0.66),
        "frontdoor P(Y=1|do(X=1))": ((do_fd, model.interventional_prob(fd.dag, pf, {"X": 1}, {"Y": 1})), 0.75),
        "frontdoor ATE": (_value("frontdoor", Q.ATE, pf), 0.40),
        "mediation NDE": (_value("mediation", Q.NDE, pm), 0.30),
        "mediation NIE": (_value("mediation", Q.NIE, pm), 0.18),
        "mediation ATE": (_value("mediation", Q.ATE, pm), 0.48),
        "chain NIE": (_value("chain", Q.NIE, pch), 0.36),
        "chain ATE": (_value("chain", Q.ATE, pch), 0.36),
        "chain NDE": (_value("chain", Q.NDE, pch), 0.0),
    }
    for name, ((identified, oracle), want) in ledger.items():
        assert round(identified, 4) == want, f"{name}: identified {identified}"
        assert round(oracle, 4) == want, f"{name}: oracle {oracle}"


# ---------------------------------------------------------------------------
# 3. counterfactual axioms


def test_counterfactual_axioms():
    # monotone single-edge examples, exact
    edge = Dag(["X", "Y"], [("X", "Y")])
    scm = Scm(edge, model.CbnParams({"X": {"": 0.5}, "Y": {"0": 0.3, "1": 0.9}}))
    assert model.counterfactual_prob(scm, {"X": 0, "Y": 1}, {"X": 1}, {"Y": 1}) == 1.0
    assert model.counterfactual_prob(scm, {"X": 1, "Y": 0}, {"X": 0}, {"Y": 1}) == 0.0
    assert model.counterfactual_prob(scm, {"X": 0, "Y": 1}, {"X": 0}, {"Y": 1}) == 1.0

    # consistency: P(Y_x=y | X=x, e) = P(Y=y | X=x, e)
    rng = np.random.default_rng(99)
    for g in CATALOG_NAMES:
        c = catalog(g)
        x, y = c.treatment, c.outcome
        others = [n for n in c.dag.nodes if n not in (x, y)]
        for _ in range(10):
            p = model.sample_params(rng, c.dag)
            s = Scm(c.dag, p)
            for xv in (0, 1):
                for k in range(len(others) + 1):
                    for ev_nodes in itertools.combinations(others, k):
                        ev = {n: int(rng.integers(2)) for n in ev_nodes}
                        ev[x] = xv
                        got = model.counterfactual_prob(s, ev, {x: xv}, {y: 1})
                        want = model.prob(c.dag, p, {y: 1}, ev)
                        assert abs(got - want) <= 1e-12, (g, ev)

    # Monte Carlo cross-check on 20 instances at 10^6 accepted samples
    graphs = [g for g in CATALOG_NAMES if g != "collision"]
    for i in range(20):
        g = graphs[i % len(graphs)]
        c = catalog(g)
        x, y = c.treatment, c.outcome
        p = model.sample_params(rng, c.dag)
        s = Scm(c.dag, p)
        xv = i % 2
        target = [(Cf(y, ((x, xv),)), 1)]
        given = [(factual(x), 1 - xv), (factual(y), int(rng.integers(2)))]
        exact = cf_joint_prob(s, target, given)
        est, _, n = cf_joint_prob_mc(s, target, given, n_accept=10**6, seed=i)
        assert n == 10**6
        assert abs(est - exact) <= 0.005, (g, exact, est)


# ---------------------------------------------------------------------------
# 4. dataset regeneration at desk scale


def test_dataset_regeneration_desk_scale():
    start = time.perf_counter()
    records = list(generate(GenConfig(total=1056, seed=0, workers=1)))
    elapsed = time.perf_counter() - start
    assert len(records) == 1056
    assert elapsed < 120.0, f"generation took {elapsed:.1f}s"

    cells = defaultdict(Counter)
    for r in records:
        cells[r.meta["cell"]][r.answer] += 1
    for cid, c in cells.items():
        assert abs(c["yes"] - c["no"]) <= 1, f"{cid} unbalanced: {dict(c)}"
    positive = 100.0 * sum(r.answer == "yes" for r in records) / len(records)
    assert abs(positive - 50.0) <= 1.0

    rungs = Counter(r.rung for r in records)
    for rung, share in ((1, 31.1), (2, 31.1), (3, 37.7)):
        assert abs(100.0 * rungs[rung] / len(records) - share) <= 1.0, (rung, rungs)

    bad = verify_records(records)
    assert not bad, f"{len(bad)} records fail verification, e.g. {next(iter(bad.items()))}"

    nodes = float(np.mean([r.meta["nodes"] for r in records]))
    assert abs(nodes - 3.5) <= 0.1, nodes


# ---------------------------------------------------------------------------
# 5. template fidelity

_SKELETON = [
    r'^Step 1\) Extract the causal graph: The causal graph expressed in the context is: "(?P<g>[^"]+)"\.',
    r'^Step 2\) Identify the query type and its symbolic expression: The query type of the above question is '
    r'"(?P<t>[^"]+)", and formally as: "(?P<f>[^"]+)"\.$',
    r'^Step 3\) Derive the estimand: Based on the graph structure and causal query, the question can be '
    r'simplified into estimand "(?P<e>.+)"\.$',
    r'^Step 4\) Collect all the available data: The available data are: "(?P<d>.+)"\.$',
    r'^Step 5\) Solve for the estimand: Plugin available data "(?P<d>.+)" into "(?P<e>.+)"\.$',
]


def test_template_fidelity():
    import re

    from ladderqa.verbalize import STEP_RE

    kidney = get_story("kidney_stones")
    assert render_data_sentence(DataTerm("Y", (), 0.6), kidney) == "The overall probability of recovery is 60%."
    assert (
        render_data_sentence(DataTerm("Y", (("Z", 0),), 0.7), kidney)
        == "For patients who have small kidney stones, the probability of recovery is 70%."
    )

    records = list(generate(GenConfig(total=300, seed=11)))
    seen = set()
    for r in records:
        assert len(STEP_RE.findall(r.reasoning)) == 5, r.id
        steps = [ln for ln in r.reasoning.splitlines() if ln.startswith("Step ")]
        assert len(steps) == 5
        found = [re.match(pat, ln) for pat, ln in zip(_SKELETON, steps)]
        assert all(found), (r.id, steps)
        assert found[3]["d"] == found[4]["d"]
        assert found[2]["e"] == found[4]["e"] == r.estimand
        seen.add(r.query_type)
    assert seen == {q.value for q in Q}


# ---------------------------------------------------------------------------
# 6. applicability matrix

_RULES = [
    # (description, query type, graphs where the rule applies, expected value)
    ("immorality: no correlation question on collision", Q.COND_PROB, {"collision"}, False),
    ("NDE only on IV/arrowhead/confounding/mediation/diamondcut", Q.NDE,
     {"IV", "arrowhead", "confounding", "mediation", "diamondcut"}, True),
    ("NDE nowhere else", Q.NDE, ALL - {"IV", "arrowhead", "confounding", "mediation", "diamondcut"}, False),
    ("NIE only on mediation/frontdoor/arrowhead/diamond/chain", Q.NIE,
     {"mediation", "frontdoor", "arrowhead", "diamond", "chain"}, True),
    ("NIE nowhere else", Q.NIE, ALL - {"mediation", "frontdoor", "arrowhead", "diamond", "chain"}, False),
    ("collider bias on collision", Q.COLLIDER_BIAS, {"collision"}, True),
    ("collider bias nowhere else", Q.COLLIDER_BIAS, ALL - {"collision"}, False),
    ("explaining away on collision", Q.EXPLAINING_AWAY, {"collision"}, True),
    ("explaining away nowhere else", Q.EXPLAINING_AWAY, ALL - {"collision"}, False),
    ("ATE on all but collision", Q.ATE, ALL - {"collision"}, True),
    ("no ATE on collision", Q.ATE, {"collision"}, False),
    ("counterfactuals on all but collision", Q.COUNTERFACTUAL_PROB, ALL - {"collision"}, True),
    ("no counterfactuals on collision", Q.COUNTERFACTUAL_PROB, {"collision"}, False),
    ("ATT on all but collision and IV", Q.ATT, ALL - {"collision", "IV"}, True),
    ("no ATT on collision", Q.ATT, {"collision"}, False),
    ("no ATT on IV", Q.ATT, {"IV"}, False),
]


def test_applicability_matrix():
    assert len(_RULES) == 16
    failures = []
    for desc, q, graphs, want in _RULES:
        assert graphs, desc
        for g in sorted(graphs):
            if applicability(g, q) is not want:
                failures.append(f"{desc}: ({g}, {q.value}) should be {want}")
    assert not failures, failures


# ---------------------------------------------------------------------------
# 7. evaluation harness with mock clients


def _chain_intact(t) -> bool:
    responses = [s["response"] for s in t.steps]
    return all(all(r in s["prompt"] for r in responses[:m]) for m, s in enumerate(t.steps))


def test_eval_harness_with_mock():
    hundred = list(generate(GenConfig(total=100, seed=21)))
    trs = run(hundred, MockClient.from_answers(hundred), parallelism=8)
    rep = grade(trs, hundred, name="oracle")
    assert rep.overall == 100.0
    for strata in (rep.by_rung, rep.by_alignment, rep.by_query):
        assert strata and all(v == 100.0 for v in strata.values()), strata
    assert all(_chain_intact(t) and len(t.steps) == 5 for t in trs)

    thousand = list(generate(GenConfig(total=1000, seed=22)))
    yes = sum(r.answer == "yes" for r in thousand)
    assert abs(yes - 500) <= 10, "set is not balanced"
    trs = run(thousand, MockClient.constant("yes"), parallelism=8)
    rep = grade(trs, thousand, name="majority")
    assert abs(rep.overall - 50.0) <= 1.0, rep.overall
    assert all(_chain_intact(t) for t in trs)


# ---------------------------------------------------------------------------
# 8. d-separation against enumeration


def _joint_array(dag, params) -> np.ndarray:
    """Full joint as an array indexed by node values, built directly from the CPTs."""
    n = len(dag.nodes)
    idx = {v: i for i, v in enumerate(dag.nodes)}
    out = np.ones((2,) * n)
    for v in dag.nodes:
        pa = dag.parents(v)
        f = np.empty((2,) * n)
        for vals in itertools.product((0, 1), repeat=n):
            key = "".join(str(vals[idx[u]]) for u in pa)
            th = params.table(v)[key]
            f[vals] = th if vals[idx[v]] else 1.0 - th
        out *= f
    return out


def _independent(joint, nodes, a, b, s) -> float:
    """Largest |P(a,b,s)P(s) - P(a,s)P(b,s)| over all values."""
    keep = list(a) + list(b) + list(s)
    drop = tuple(i for i, v in enumerate(nodes) if v not in keep)
    m = joint.sum(axis=drop) if drop else joint
    order = [v for v in nodes if v in keep]
    m = np.transpose(m, [order.index(v) for v in keep])
    na, nb = len(a), len(b)
    pabs = m
    pas = m.sum(axis=tuple(range(na, na + nb)), keepdims=True)
    pbs = m.sum(axis=tuple(range(na)), keepdims=True)
    ps = m.sum(axis=tuple(range(na + nb)), keepdims=True)
    return float(np.max(np.abs(pabs * ps - pas * pbs)))


def test_d_separation_soundness():
    for g in CATALOG_NAMES:
        c = catalog(g)
        nodes = list(c.dag.nodes)
        triples = []
        for k in range(1, len(nodes)):
            for a in itertools.combinations(nodes, k):
                rest = [v for v in nodes if v not in a]
                for kb in range(1, len(rest) + 1):
                    for b in itertools.combinations(rest, kb):
                        if min(a) > min(b):
                            continue  # symmetric duplicate
                        others = [v for v in rest if v not in b]
                        for ks in range(len(others) + 1):
                            for s in itertools.combinations(others, ks):
                                triples.append((a, b, s, d_separated(c.dag, a, b, s)))
        dependent_seen = Counter()
        rng = np.random.default_rng([77, CATALOG_NAMES.index(g)])
        for _ in range(500):
            p = model.sample_params(rng, c.dag)
            joint = _joint_array(c.dag, p)
            for a, b, s, sep in triples:
                gap = _independent(joint, nodes, a, b, s)
                if sep:
                    assert gap <= 1e-12, f"{g}: {a} _||_ {b} | {s} is d-separated but gap {gap:.3e}"
                elif gap > 1e-6:
                    dependent_seen[(a, b, s)] += 1
        # every d-connected triple shows dependence on typical parameters
        for a, b, s, sep in triples:
            if not sep:
                assert dependent_seen[(a, b, s)] > 400, f"{g}: {a} vs {b} | {s} rarely dependent"
