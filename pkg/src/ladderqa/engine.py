"""Identification of queries into observational estimands, plus an oracle.

``derive_estimand`` turns a query on a catalog graph into an expression
whose leaves are observational probabilities ``P(V=v | ...)`` over observed
nodes.  ``oracle`` answers the same query without any identification
(enumeration, truncated factorization, exogenous-space integration) so the
two routes can be checked against each other.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Union

from . import model
from .graph import CgteSpec, GraphError, d_separated, descendants, remove_outgoing
from .model import CbnParams, Cf, Scm, ZeroProbabilityError
from .query import DegenerateInstance, Q, QueryInstance, QueryType

ENGINE_VERSION = "1.0.0"

Value = Union[int, str]  # a bit or the name of a summation index


class IdentificationError(RuntimeError):
    """A query reached the engine without an identification strategy."""


class MissingDataError(KeyError):
    pass


# ---------------------------------------------------------------------------
# expression tree


@dataclass(frozen=True)
class Atom:
    """``P(node=value | given)``; values may be summation index names."""

    node: str
    value: Value
    given: tuple = ()


@dataclass(frozen=True)
class Const:
    value: float
    note: str = ""


@dataclass(frozen=True)
class Add:
    terms: tuple


@dataclass(frozen=True)
class Sub:
    a: object
    b: object


@dataclass(frozen=True)
class Mul:
    factors: tuple


@dataclass(frozen=True)
class Div:
    num: object
    den: object


@dataclass(frozen=True)
class SumOver:
    """Sum of ``body`` over ``var`` in {0, 1}; ``var`` indexes ``node``."""

    node: str
    var: str
    body: object


Expr = Union[Atom, Const, Add, Sub, Mul, Div, SumOver]


@dataclass(frozen=True)
class DataTerm:
    """``P(node=1 | given) = value`` with concrete conditioning values."""

    node: str
    given: tuple = ()
    value: float | None = None

    @property
    def key(self) -> tuple:
        return (self.node, self.given)

    def symbol(self) -> str:
        if not self.given:
            return f"P({self.node}=1)"
        cond = ",".join(f"{k}={v}" for k, v in self.given)
        return f"P({self.node}=1|{cond})"

    def with_value(self, value: float) -> "DataTerm":
        return DataTerm(self.node, self.given, value)


@dataclass(frozen=True)
class Estimand:
    qtype: QueryType
    expr: Expr
    strategy: str
    adjustment: tuple = ()
    flags: tuple = ()  # sorted (key, value) pairs, copied into record meta
    override_text: str | None = None

    @property
    def text(self) -> str:
        return self.override_text if self.override_text is not None else render(self.expr)


# ---------------------------------------------------------------------------
# rendering


def _render_value(node: str, value: Value) -> str:
    if isinstance(value, str):
        return value
    return f"{node}={value}"


def render(expr: Expr) -> str:
    """Plain-text normal form, e.g. ``\\sum_{Z} P(Z)*[P(Y=1|X=1,Z)-P(Y=1|X=0,Z)]``."""
    if isinstance(expr, Atom):
        head = _render_value(expr.node, expr.value)
        if not expr.given:
            return f"P({head})"
        cond = ",".join(_render_value(k, v) for k, v in expr.given)
        return f"P({head}|{cond})"
    if isinstance(expr, Const):
        num = _fmt_const(expr.value)
        return f"{num} ({expr.note})" if expr.note else num
    if isinstance(expr, Add):
        return " + ".join(render(t) for t in expr.terms)
    if isinstance(expr, Sub):
        b = render(expr.b)
        if isinstance(expr.b, (Add, Sub)):
            b = f"[{b}]"
        return f"{render(expr.a)}-{b}"
    if isinstance(expr, Mul):
        parts = []
        for f in expr.factors:
            s = render(f)
            if isinstance(f, (Add, Sub)) or (isinstance(f, SumOver) and f is not expr.factors[-1]):
                s = f"[{s}]"
            parts.append(s)
        return "*".join(parts)
    if isinstance(expr, Div):
        num, den = render(expr.num), render(expr.den)
        if not isinstance(expr.num, Atom):
            num = f"[{num}]"
        if not isinstance(expr.den, Atom):
            den = f"[{den}]"
        return f"{num}/{den}"
    if isinstance(expr, SumOver):
        return f"\\sum_{{{expr.var}}} {render(expr.body)}"
    raise TypeError(f"not an expression: {expr!r}")


def _fmt_const(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return f"{v:.4f}"


def fmt_number(v: float) -> str:
    """2 decimals on the 0.01 grid, else 3 (the precision of rendered data)."""
    if abs(round(v * 100) - v * 100) < 1e-9:
        return f"{v:.2f}"
    return f"{v:.3f}"


def substitute(expr: Expr, data: Mapping[tuple, float], env: dict | None = None) -> str:
    """Render ``expr`` with every leaf replaced by its number; sums expanded."""
    env = env or {}
    if isinstance(expr, Atom):
        return fmt_number(_atom_value(expr, data, env))
    if isinstance(expr, Const):
        return _fmt_const(expr.value)
    if isinstance(expr, Add):
        return " + ".join(substitute(t, data, env) for t in expr.terms)
    if isinstance(expr, Sub):
        b = substitute(expr.b, data, env)
        if isinstance(expr.b, (Add, Sub, SumOver)):
            b = f"[{b}]"
        return f"{substitute(expr.a, data, env)}-{b}"
    if isinstance(expr, Mul):
        parts = []
        for f in expr.factors:
            s = substitute(f, data, env)
            if isinstance(f, (Add, Sub, SumOver)):
                s = f"[{s}]"
            parts.append(s)
        return "*".join(parts)
    if isinstance(expr, Div):
        num, den = substitute(expr.num, data, env), substitute(expr.den, data, env)
        if not isinstance(expr.num, Atom):
            num = f"[{num}]"
        if not isinstance(expr.den, Atom):
            den = f"[{den}]"
        return f"{num}/{den}"
    if isinstance(expr, SumOver):
        return " + ".join(
            substitute(expr.body, data, {**env, expr.var: val}) for val in (0, 1)
        )
    raise TypeError(f"not an expression: {expr!r}")


# ---------------------------------------------------------------------------
# evaluation and data extraction


def _bind(value: Value, env: Mapping) -> int:
    if isinstance(value, str):
        if value not in env:
            raise IdentificationError(f"unbound summation index {value!r}")
        return env[value]
    return value


def _atom_key(atom: Atom, env: Mapping) -> tuple:
    return (atom.node, tuple((k, _bind(v, env)) for k, v in atom.given))


def _atom_value(atom: Atom, data: Mapping[tuple, float], env: Mapping) -> float:
    key = _atom_key(atom, env)
    try:
        p = data[key]
    except KeyError:
        raise MissingDataError(f"no data for {DataTerm(*key).symbol()}") from None
    return p if _bind(atom.value, env) == 1 else 1.0 - p


def evaluate(expr: Expr, data: Mapping[tuple, float], env: dict | None = None) -> float:
    """Numeric value of ``expr`` using only the supplied data terms."""
    env = env or {}
    if isinstance(expr, Atom):
        return _atom_value(expr, data, env)
    if isinstance(expr, Const):
        return float(expr.value)
    if isinstance(expr, Add):
        return math.fsum(evaluate(t, data, env) for t in expr.terms)
    if isinstance(expr, Sub):
        return evaluate(expr.a, data, env) - evaluate(expr.b, data, env)
    if isinstance(expr, Mul):
        out = 1.0
        for f in expr.factors:
            out *= evaluate(f, data, env)
        return out
    if isinstance(expr, Div):
        den = evaluate(expr.den, data, env)
        if den == 0.0:
            raise ZeroDivisionError("ratio estimand with zero denominator")
        return evaluate(expr.num, data, env) / den
    if isinstance(expr, SumOver):
        return math.fsum(
            evaluate(expr.body, data, {**env, expr.var: val}) for val in (0, 1)
        )
    raise TypeError(f"not an expression: {expr!r}")


def _leaves(expr: Expr, env: dict, out: dict) -> None:
    if isinstance(expr, Atom):
        out.setdefault(_atom_key(expr, env), None)
    elif isinstance(expr, Const):
        pass
    elif isinstance(expr, Add):
        for t in expr.terms:
            _leaves(t, env, out)
    elif isinstance(expr, Sub):
        _leaves(expr.a, env, out)
        _leaves(expr.b, env, out)
    elif isinstance(expr, Mul):
        for f in expr.factors:
            _leaves(f, env, out)
    elif isinstance(expr, Div):
        _leaves(expr.num, env, out)
        _leaves(expr.den, env, out)
    elif isinstance(expr, SumOver):
        for val in (0, 1):
            _leaves(expr.body, {**env, expr.var: val}, out)
    else:
        raise TypeError(f"not an expression: {expr!r}")


def required_data(estimand) -> list:
    """Distinct ``P(V=1|...)`` terms the estimand reads, first-use order."""
    expr = estimand.expr if isinstance(estimand, Estimand) else estimand
    found: dict = {}
    _leaves(expr, {}, found)
    return [DataTerm(node, given) for node, given in found]


def fill_data(cgte: CgteSpec, params: CbnParams, terms: Iterable[DataTerm]) -> list:
    """Attach each term's value computed from the full (latent-inclusive) CBN."""
    out = []
    for t in terms:
        if t.node in cgte.unobserved or any(k in cgte.unobserved for k, _ in t.given):
            raise IdentificationError(f"{t.symbol()} involves an unobserved node")
        out.append(t.with_value(model.prob(cgte.dag, params, {t.node: 1}, dict(t.given))))
    return out


def evaluate_with_params(estimand: Estimand, cgte: CgteSpec, params: CbnParams) -> float:
    terms = fill_data(cgte, params, required_data(estimand))
    return evaluate(estimand.expr, {t.key: t.value for t in terms})


# ---------------------------------------------------------------------------
# graph criteria


def _order_key(cgte: CgteSpec) -> Callable:
    pos = {n: i for i, n in enumerate(cgte.dag.nodes)}
    return lambda n: (n != cgte.treatment, pos[n])


def is_valid_backdoor_set(cgte: CgteSpec, s: Iterable[str]) -> bool:
    """No descendant of X in ``s`` and ``s`` blocks every backdoor X-Y path."""
    s = frozenset(s)
    x, y = cgte.treatment, cgte.outcome
    if x in s or y in s:
        raise GraphError(f"adjustment set {sorted(s)} may not contain {x} or {y}")
    bad = s - set(cgte.observed)
    if bad:
        raise GraphError(f"adjustment set contains unobserved or unknown nodes {sorted(bad)}")
    if s & descendants(cgte.dag, x):
        return False
    return d_separated(remove_outgoing(cgte.dag, {x}), {x}, {y}, s)


def _subsets(items: tuple) -> Iterable[tuple]:
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def find_minimal_adjustment_sets(cgte: CgteSpec) -> list:
    """Inclusion-minimal observed backdoor sets, smallest first."""
    pool = tuple(n for n in cgte.observed if n not in (cgte.treatment, cgte.outcome))
    valid = [frozenset(c) for c in _subsets(pool) if is_valid_backdoor_set(cgte, c)]
    minimal = [s for s in valid if not any(o < s for o in valid)]
    key = _order_key(cgte)
    return sorted(minimal, key=lambda s: (len(s), [key(n) for n in sorted(s, key=key)]))


def adjustment_candidates(cgte: CgteSpec) -> list:
    """Nonempty observed sets S where exactly one of S and the empty set is admissible."""
    pool = tuple(n for n in cgte.observed if n not in (cgte.treatment, cgte.outcome))
    empty_ok = is_valid_backdoor_set(cgte, ())
    return [
        cgte.dag.sorted_nodes(c)
        for c in _subsets(pool)
        if c and is_valid_backdoor_set(cgte, c) != empty_ok
    ]


def frontdoor_mediators(cgte: CgteSpec) -> tuple | None:
    """The observed mediator set if it satisfies the frontdoor criterion."""
    x, y, dag = cgte.treatment, cgte.outcome, cgte.dag
    meds = tuple(m for m in dag.nodes if m in cgte.mediators)
    if not meds or any(m in cgte.unobserved for m in meds):
        return None
    # every directed X->Y path passes through the mediators
    if (x, y) in dag.edges:
        return None
    cut = remove_outgoing(dag, meds)
    if y in descendants(cut, x):
        return None
    no_x_out = remove_outgoing(dag, {x})
    if not all(d_separated(no_x_out, {x}, {m}, ()) for m in meds):
        return None
    no_m_out = remove_outgoing(dag, meds)
    if not d_separated(no_m_out, set(meds), {y}, {x}):
        return None
    return meds


def instrument(cgte: CgteSpec) -> str | None:
    """An observed parent of X that reaches Y only through X."""
    x, y, dag = cgte.treatment, cgte.outcome, cgte.dag
    cut = remove_outgoing(dag, {x})
    for z in dag.parents(x):
        if z in cgte.unobserved:
            continue
        if d_separated(cut, {z}, {y}, ()):
            return z
    return None


def complier_scope(cgte: CgteSpec) -> bool:
    """Effects on this graph are defined on the instrument's compliers.

    True when X-Y confounding is hidden, no backdoor or frontdoor route
    exists and an instrument does.
    """
    if cgte.outcome not in descendants(cgte.dag, cgte.treatment):
        return False
    if find_minimal_adjustment_sets(cgte) or frontdoor_mediators(cgte):
        return False
    return instrument(cgte) is not None


# ---------------------------------------------------------------------------
# estimand construction helpers


class _Builder:
    def __init__(self, cgte: CgteSpec):
        self.cgte = cgte
        self.key = _order_key(cgte)

    def reduce(self, node: str, given: Iterable[str]) -> tuple:
        """Smallest subset S of ``given`` with node independent of the rest given S."""
        given = tuple(sorted(set(given), key=self.key))
        for r in range(len(given) + 1):
            for keep in itertools.combinations(given, r):
                rest = set(given) - set(keep)
                if not rest or d_separated(self.cgte.dag, {node}, rest, set(keep)):
                    return tuple(sorted(keep, key=self.key))
        return given

    def atom(self, node: str, value: Value, given: Mapping[str, Value] | None = None) -> Atom:
        given = dict(given or {})
        keep = self.reduce(node, given)
        return Atom(node, value, tuple((k, given[k]) for k in keep))

    def chain(self, nodes: Iterable[str], given: Mapping[str, Value] | None = None) -> list:
        """Chain-rule factors P(n1|given) P(n2|n1, given) ... with index values."""
        given = dict(given or {})
        nodes = tuple(sorted(nodes, key=lambda n: self.cgte.dag.nodes.index(n)))
        out = []
        seen: dict = {}
        for n in nodes:
            out.append(self.atom(n, n, {**given, **seen}))
            seen[n] = n
        return out

    def sum_over(self, nodes: Iterable[str], body) -> Expr:
        nodes = tuple(sorted(nodes, key=lambda n: self.cgte.dag.nodes.index(n)))
        for n in reversed(nodes):
            body = SumOver(n, n, body)
        return body


def _mul(*factors) -> Expr:
    flat = []
    for f in factors:
        if isinstance(f, Mul):
            flat.extend(f.factors)
        elif isinstance(f, (list, tuple)):
            flat.extend(f)
        else:
            flat.append(f)
    return flat[0] if len(flat) == 1 else Mul(tuple(flat))


# total-effect style pieces: each returns (expr, strategy, adjustment, flags)


def _backdoor_parts(b: _Builder, s: frozenset):
    c = b.cgte
    x, y = c.treatment, c.outcome
    s_idx = {n: n for n in s}
    return x, y, s_idx


def _total_effect(b: _Builder):
    """ATE-style total effect E[Y|do(X=1)] - E[Y|do(X=0)]."""
    c = b.cgte
    x, y = c.treatment, c.outcome
    if y not in descendants(c.dag, x):
        return Const(0, f"{y} is not a descendant of {x}"), "structural_zero", (), ()
    sets = find_minimal_adjustment_sets(c)
    if sets:
        s = sets[0]
        diff = Sub(b.atom(y, 1, {x: 1, **{n: n for n in s}}), b.atom(y, 1, {x: 0, **{n: n for n in s}}))
        if not s:
            return diff, "backdoor", (), ()
        expr = b.sum_over(s, _mul(b.chain(s), diff))
        return expr, "backdoor", c.dag.sorted_nodes(s), ()
    meds = frontdoor_mediators(c)
    if meds:
        (m,) = meds  # catalog frontdoor graphs have a single mediator
        xp = f"{x}'"
        inner = SumOver(x, xp, _mul(b.atom(x, xp), b.atom(y, 1, {x: xp, m: m})))
        expr = SumOver(m, m, _mul(Sub(b.atom(m, m, {x: 1}), b.atom(m, m, {x: 0})), inner))
        return expr, "frontdoor", meds, ()
    z = instrument(c)
    if z is not None:
        expr = Div(
            Sub(b.atom(y, 1, {z: 1}), b.atom(y, 1, {z: 0})),
            Sub(b.atom(x, 1, {z: 1}), b.atom(x, 1, {z: 0})),
        )
        return expr, "iv_wald", (z,), (("estimand_choice", "iv_complier"),)
    raise IdentificationError(f"no identification strategy for the effect of {x} on {y} in {c.name}")


def _do_prob(b: _Builder, xval: int):
    """P(Y=1 | do(X=xval)) as an observational expression."""
    c = b.cgte
    x, y = c.treatment, c.outcome
    sets = find_minimal_adjustment_sets(c)
    if sets:
        s = sets[0]
        a = b.atom(y, 1, {x: xval, **{n: n for n in s}})
        if not s:
            return a, "backdoor", ()
        return b.sum_over(s, _mul(b.chain(s), a)), "backdoor", c.dag.sorted_nodes(s)
    meds = frontdoor_mediators(c)
    if meds:
        (m,) = meds
        xp = f"{x}'"
        inner = SumOver(x, xp, _mul(b.atom(x, xp), b.atom(y, 1, {x: xp, m: m})))
        return SumOver(m, m, _mul(b.atom(m, m, {x: xval}), inner)), "frontdoor", meds
    raise IdentificationError(f"P({y}|do({x})) is not identifiable in {c.name}")


def _mediation_covariates(b: _Builder) -> tuple | None:
    c = b.cgte
    x, y, dag = c.treatment, c.outcome, c.dag
    meds = tuple(m for m in dag.nodes if m in c.mediators)
    pool = tuple(
        n for n in c.observed if n not in (x, y) and n not in descendants(dag, x)
    )
    no_x_out = remove_outgoing(dag, {x})
    no_m_out = remove_outgoing(dag, meds)
    for w in _subsets(pool):
        w = set(w)
        if not d_separated(no_x_out, {x}, {y}, w):
            continue
        if not all(d_separated(no_x_out, {x}, {m}, w) for m in meds):
            continue
        if not d_separated(no_m_out, set(meds), {y}, w | {x}):
            continue
        return dag.sorted_nodes(w)
    return None


def _mediator_dist(b: _Builder, meds: tuple, w: tuple, xval: int) -> list:
    given = {b.cgte.treatment: xval, **{n: n for n in w}}
    return b.chain(meds, given)


def _mediation(b: _Builder, kind: str, w: tuple):
    c = b.cgte
    x, y = c.treatment, c.outcome
    meds = tuple(m for m in c.dag.nodes if m in c.mediators)
    ctx = {n: n for n in (*meds, *w)}
    if kind == "nde":
        body = _mul(
            _mediator_dist(b, meds, w, 0),
            Sub(b.atom(y, 1, {x: 1, **ctx}), b.atom(y, 1, {x: 0, **ctx})),
        )
    else:
        body = _mul(
            Sub(_mul(_mediator_dist(b, meds, w, 1)), _mul(_mediator_dist(b, meds, w, 0))),
            b.atom(y, 1, {x: 0, **ctx}),
        )
    expr = b.sum_over(meds, body)
    if w:
        expr = b.sum_over(w, _mul(b.chain(w), expr))
    return expr


def _counterfactual_prob(b: _Builder, xval: int):
    """P(Y_{X=xval}=1 | X=1-xval)."""
    c = b.cgte
    x, y = c.treatment, c.outcome
    xe = 1 - xval
    sets = find_minimal_adjustment_sets(c)
    if sets:
        s = sets[0]
        a = b.atom(y, 1, {x: xval, **{n: n for n in s}})
        if not s:
            return a, "backdoor", (), ()
        expr = b.sum_over(s, _mul(b.chain(s, {x: xe}), a))
        return expr, "backdoor", c.dag.sorted_nodes(s), ()
    meds = frontdoor_mediators(c)
    if meds:
        (m,) = meds
        expr = SumOver(m, m, _mul(b.atom(m, m, {x: xval}), b.atom(y, 1, {x: xe, m: m})))
        return expr, "frontdoor", meds, ()
    z = instrument(c)
    if z is not None:
        def joint(zv):
            return _mul(b.atom(x, xval, {z: zv}), b.atom(y, 1, {x: xval, z: zv}))

        num = Sub(joint(1), joint(0)) if xval == 1 else Sub(joint(0), joint(1))
        den = Sub(b.atom(x, 1, {z: 1}), b.atom(x, 1, {z: 0}))
        return Div(num, den), "iv_complier", (z,), (("estimand_choice", "iv_complier"),)
    raise IdentificationError(f"counterfactual on {c.name} is not identifiable")


def _att(b: _Builder):
    c = b.cgte
    x, y = c.treatment, c.outcome
    sets = find_minimal_adjustment_sets(c)
    if sets:
        s = sets[0]
        ctx = {n: n for n in s}
        diff = Sub(b.atom(y, 1, {x: 1, **ctx}), b.atom(y, 1, {x: 0, **ctx}))
        if not s:
            return diff, "backdoor", (), ()
        return b.sum_over(s, _mul(b.chain(s, {x: 1}), diff)), "backdoor", c.dag.sorted_nodes(s), ()
    meds = frontdoor_mediators(c)
    if meds:
        (m,) = meds
        expr = SumOver(
            m, m, _mul(Sub(b.atom(m, m, {x: 1}), b.atom(m, m, {x: 0})), b.atom(y, 1, {x: 1, m: m}))
        )
        return expr, "frontdoor", meds, ()
    raise IdentificationError(f"ATT on {c.name} is not identifiable")


def _explaining_away(b: _Builder):
    c = b.cgte
    x, y = c.treatment, c.outcome
    colliders = [n for n in c.dag.nodes if n in c.dag.children(x) and n in c.dag.children(y)]
    if not colliders:
        raise IdentificationError(f"{c.name} has no collider of {x} and {y}")
    col = colliders[0]

    def cond(xv):
        top = _mul(b.atom(col, 1, {x: xv, y: 1}), b.atom(y, 1, {x: xv}))
        other = _mul(b.atom(col, 1, {x: xv, y: 0}), b.atom(y, 0, {x: xv}))
        return Div(top, Add((top, other)))

    return Sub(cond(1), cond(0)), col


def derive_estimand(cgte: CgteSpec, qinst: QueryInstance) -> Estimand:
    """Rung-1 estimand for ``qinst`` on ``cgte``."""
    if qinst.cgte.name != cgte.name:
        raise IdentificationError("query instance belongs to another graph")
    b = _Builder(cgte)
    x, y = cgte.treatment, cgte.outcome
    q = qinst.qtype
    if q is Q.MARGINAL_PROB:
        anc = [n for n in cgte.observed if n in _ancestors_of(cgte, y)]
        factors = []
        seen: list = []
        for n in anc:
            factors.append(b.atom(n, n, {p: p for p in seen}))
            seen.append(n)
        top = b.atom(y, 1, {p: p for p in seen})
        expr = b.sum_over(anc, _mul(factors, top)) if anc else top
        return Estimand(q, expr, "factorization")
    if q is Q.COND_PROB:
        return Estimand(q, Sub(b.atom(y, 1, {x: 1}), b.atom(y, 1, {x: 0})), "direct")
    if q is Q.EXPLAINING_AWAY:
        expr, col = _explaining_away(b)
        return Estimand(q, expr, "bayes_rule", (col,))
    if q is Q.COLLIDER_BIAS:
        if y in descendants(cgte.dag, x):
            raise IdentificationError("collider_bias needs Y outside X's descendants")
        return Estimand(q, Const(0, f"{y} is not a descendant of {x}"), "structural_zero")
    if q is Q.ATE:
        expr, strategy, adj, flags = _total_effect(b)
        return Estimand(q, expr, strategy, adj, flags)
    if q is Q.ADJUSTMENT_SET:
        cand = tuple(qinst.candidate)
        s_ok = is_valid_backdoor_set(cgte, cand)
        empty_ok = is_valid_backdoor_set(cgte, ())
        names = "{" + ", ".join(cand) + "}"
        if s_ok and not empty_ok:
            text = f"{names} blocks every backdoor path from {x} to {y}; the empty set does not"
            value = 1.0
        elif empty_ok and not s_ok:
            text = f"the empty set is admissible for {x}->{y}; {names} is not"
            value = 0.0
        else:
            raise IdentificationError(f"candidate {names} does not separate the two methods")
        return Estimand(q, Const(value), "backdoor_criterion", cand, override_text=text)
    if q is Q.COUNTERFACTUAL_PROB:
        expr, strategy, adj, flags = _counterfactual_prob(b, qinst.treatment_value)
        return Estimand(q, expr, strategy, adj, flags)
    if q is Q.ATT:
        expr, strategy, adj, flags = _att(b)
        return Estimand(q, expr, strategy, adj, flags)
    if q in (Q.NDE, Q.NIE):
        direct = (x, y) in cgte.dag.edges
        if not cgte.mediators:
            if q is Q.NIE:
                return Estimand(q, Const(0, f"no mediator between {x} and {y}"), "structural_zero")
            expr, strategy, adj, flags = _total_effect(b)
            return Estimand(q, expr, strategy, adj, flags)
        if q is Q.NDE and not direct:
            return Estimand(q, Const(0, f"no direct edge from {x} to {y}"), "structural_zero")
        w = _mediation_covariates(b)
        if w is not None:
            return Estimand(q, _mediation(b, q.value, w), "mediation_formula", w)
        if q is Q.NIE and not direct:
            expr, strategy, adj, flags = _total_effect(b)
            return Estimand(q, expr, strategy, adj, flags)
        raise IdentificationError(f"{q.value} on {cgte.name} is not identifiable")
    raise IdentificationError(f"unsupported query type {q}")


def _ancestors_of(cgte: CgteSpec, v: str) -> frozenset:
    from .graph import ancestors

    return ancestors(cgte.dag, v)


def do_estimand(cgte: CgteSpec, xval: int) -> Estimand:
    expr, strategy, adj = _do_prob(_Builder(cgte), xval)
    return Estimand(Q.ATE, expr, strategy, adj)


# ---------------------------------------------------------------------------
# oracle


def _complier_literals(cgte: CgteSpec, params: CbnParams) -> list:
    z = instrument(cgte)
    x = cgte.treatment
    table = params.table(x)
    pa = cgte.dag.parents(x)
    zi = pa.index(z)
    ups = set()
    for key, p in table.items():
        if key[zi] == "1":
            other = key[:zi] + "0" + key[zi + 1:]
            diff = p - table[other]
            if diff:
                ups.add(diff > 0)
    if len(ups) != 1:
        raise ZeroProbabilityError("instrument is not monotone or has no compliers")
    up = ups.pop()
    return [(Cf(x, ((z, 1),)), int(up)), (Cf(x, ((z, 0),)), int(not up))]


def _mediator_do(cgte: CgteSpec, xval: int) -> tuple:
    x = cgte.treatment
    meds = [m for m in cgte.dag.nodes if m in cgte.mediators]
    return tuple(sorted([(m, Cf(m, ((x, xval),))) for m in meds], key=lambda kv: kv[0]))


def oracle(cgte: CgteSpec, params: CbnParams, qinst: QueryInstance) -> float:
    """Ground truth without identification.

    Rung 1 by enumeration, rung 2 by truncated factorization on the full
    graph (latents included), rung 3 by exact integration over the
    exogenous cube of the threshold SCM.
    """
    dag = cgte.dag
    x, y = cgte.treatment, cgte.outcome
    q = qinst.qtype
    scm = Scm(dag, params)
    scope = _complier_literals(cgte, params) if complier_scope(cgte) else []

    def effect(do1, do0, given=()):
        given = list(given) + scope
        p1 = model.cf_joint_prob(scm, [(Cf(y, do1), 1)], given)
        p0 = model.cf_joint_prob(scm, [(Cf(y, do0), 1)], given)
        return p1 - p0

    if q is Q.MARGINAL_PROB:
        return model.prob(dag, params, {y: 1})
    if q is Q.COND_PROB:
        return model.prob(dag, params, {y: 1}, {x: 1}) - model.prob(dag, params, {y: 1}, {x: 0})
    if q is Q.EXPLAINING_AWAY:
        col = next(n for n in dag.children(x) if n in dag.children(y))
        return model.prob(dag, params, {y: 1}, {x: 1, col: 1}) - model.prob(
            dag, params, {y: 1}, {x: 0, col: 1}
        )
    if q in (Q.ATE, Q.COLLIDER_BIAS):
        if scope:
            return effect(((x, 1),), ((x, 0),))
        return model.interventional_prob(dag, params, {x: 1}, {y: 1}) - model.interventional_prob(
            dag, params, {x: 0}, {y: 1}
        )
    if q is Q.ADJUSTMENT_SET:
        return _adjustment_oracle(cgte, params, tuple(qinst.candidate))
    if q is Q.COUNTERFACTUAL_PROB:
        xv = qinst.treatment_value
        given = [(Cf(x), 1 - xv)] + scope
        return model.cf_joint_prob(scm, [(Cf(y, ((x, xv),)), 1)], given)
    if q is Q.ATT:
        return effect(((x, 1),), ((x, 0),), [(Cf(x), 1)])
    if q is Q.NDE:
        meds0 = _mediator_do(cgte, 0)
        do1 = tuple(sorted(((x, 1), *meds0), key=lambda kv: kv[0]))
        do0 = tuple(sorted(((x, 0), *meds0), key=lambda kv: kv[0]))
        return effect(do1, do0)
    if q is Q.NIE:
        do_m1 = tuple(sorted(((x, 0), *_mediator_do(cgte, 1)), key=lambda kv: kv[0]))
        do_m0 = tuple(sorted(((x, 0), *_mediator_do(cgte, 0)), key=lambda kv: kv[0]))
        return effect(do_m1, do_m0)
    raise IdentificationError(f"unsupported query type {q}")


def _adjusted(cgte: CgteSpec, params: CbnParams, s: tuple, xval: int) -> float:
    dag, x, y = cgte.dag, cgte.treatment, cgte.outcome
    total = []
    for vals in itertools.product((0, 1), repeat=len(s)):
        ctx = dict(zip(s, vals))
        ps = model.prob(dag, params, ctx) if ctx else 1.0
        total.append(ps * model.prob(dag, params, {y: 1}, {x: xval, **ctx}))
    return math.fsum(total)


def _adjustment_oracle(cgte: CgteSpec, params: CbnParams, s: tuple) -> float:
    """1.0 if adjusting for ``s`` recovers P(y|do(x)) and the raw contrast does not."""
    dag, x, y = cgte.dag, cgte.treatment, cgte.outcome
    truth = [model.interventional_prob(dag, params, {x: v}, {y: 1}) for v in (0, 1)]

    def matches(ss):
        return all(abs(_adjusted(cgte, params, ss, v) - truth[v]) < 1e-9 for v in (0, 1))

    s_ok, empty_ok = matches(s), matches(())
    if s_ok and not empty_ok:
        return 1.0
    if empty_ok and not s_ok:
        return 0.0
    raise DegenerateInstance("candidate and empty set agree numerically on these parameters")
