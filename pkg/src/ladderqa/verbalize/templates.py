"""Turn graphs, data terms, queries and solutions into text."""
from __future__ import annotations

import re

from ..engine import DataTerm, Estimand, evaluate, fmt_number, substitute
from ..graph import CgteSpec
from ..query import Q, QueryInstance, symbolic_form
from .stories import Story, StoryError


def _cap(text: str) -> str:
    return text[:1].upper() + text[1:]


def _join(items: list) -> str:
    if len(items) <= 2:
        return " and ".join(items)
    return ", ".join(items[:-1]) + " and " + items[-1]


def render_graph_text(cgte: CgteSpec, story: Story) -> str:
    story.check_graph(cgte)
    parts = []
    for n in cgte.dag.nodes:
        kids = cgte.dag.children(n)
        if kids:
            names = [story.form("overall", k) for k in kids]
            parts.append(f"{_cap(story.form('overall', n))} has a direct effect on {_join(names)}.")
    for n in cgte.dag.nodes:
        if n in cgte.unobserved:
            parts.append(f"{_cap(story.form('overall', n))} is unobserved.")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# numbers


def quantize(p: float) -> float:
    """The value a reader recovers from the rendered percentage."""
    pct = p * 100
    if abs(pct - round(pct)) < 1e-6:
        return round(pct) / 100
    return round(round(pct, 1) * 10) / 1000


def format_percent(p: float) -> str:
    """Whole percent on the 0.01 grid, otherwise one decimal."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    pct = p * 100
    if abs(pct - round(pct)) < 1e-6:
        return f"{round(pct)}%"
    return f"{pct:.1f}%"


def _conditions(story: Story, given: tuple) -> str:
    head = story.head + " "
    attrs = [story.form("attr", n, v) for n, v in given]
    rest = []
    for a in attrs[1:]:
        if not a.startswith(head):
            raise StoryError(f"attr form {a!r} does not share the prefix {head!r}")
        rest.append(a[len(head):])
    return " and ".join([attrs[0], *rest])


def render_data_sentence(term: DataTerm, story: Story) -> str:
    if term.value is None:
        raise ValueError(f"{term.symbol()} has no value")
    noun = story.form("noun", term.node, 1)
    pct = format_percent(term.value)
    if not term.given:
        return f"The overall probability of {noun} is {pct}."
    return f"For {_conditions(story, term.given)}, the probability of {noun} is {pct}."


def render_data_text(terms, story: Story) -> str:
    return " ".join(render_data_sentence(t, story) for t in terms)


_DATA_RE = re.compile(
    r"(?:The overall probability of (?P<mnoun>.+?) is (?P<mpct>\d+(?:\.\d)?)%\.)"
    r"|(?:For (?P<cond>.+?), the probability of (?P<cnoun>.+?) is (?P<cpct>\d+(?:\.\d)?)%\.)"
)


def parse_data_text(text: str) -> list:
    """``[(condition text or None, noun, value), ...]`` in order of appearance."""
    out = []
    for m in _DATA_RE.finditer(text):
        if m.group("mnoun") is not None:
            out.append((None, m.group("mnoun"), float(m.group("mpct")) / 100))
        else:
            out.append((m.group("cond"), m.group("cnoun"), float(m.group("cpct")) / 100))
    return out


# ---------------------------------------------------------------------------
# questions


def _names(story: Story, nodes) -> str:
    return _join([story.form("overall", n) for n in nodes])


def render_question(qinst: QueryInstance, story: Story) -> str:
    """Yes/no question text; ``qinst.negate`` selects the flipped direction."""
    c = qinst.cgte
    story.check_graph(c)
    x, y = c.treatment, c.outcome
    neg = qinst.negate
    f = story.form
    q = qinst.qtype
    if q is Q.MARGINAL_PROB:
        word = "less" if neg else "greater"
        return f"Is the overall likelihood of {f('noun', y, 1)} {word} than chance?"
    if q is Q.COND_PROB:
        word = "smaller" if neg else "larger"
        return f"Is the chance of {f('noun', y, 1)} {word} when observing {f('noun', x, 1)}?"
    if q is Q.ATE:
        word = "decrease" if neg else "increase"
        return f"Will {f('noun', x, 1)} {word} the chance of {f('noun', y, 1)}?"
    if q is Q.ADJUSTMENT_SET:
        direct = f"We look directly at how {f('overall', x)} correlates with {f('overall', y)} in general."
        split = (
            f"We look at how {f('overall', x)} correlates with {f('overall', y)} "
            f"case by case according to {_names(story, qinst.candidate)}."
        )
        first, second = (split, direct) if neg else (direct, split)
        return (
            f"Method 1: {first} Method 2: {second} "
            f"To understand how {f('overall', x)} affects {f('overall', y)}, "
            f"is it more correct to use the Method 2 than Method 1?"
        )
    if q in (Q.COLLIDER_BIAS, Q.EXPLAINING_AWAY):
        col = next(n for n in c.dag.children(x) if n in c.dag.children(y))
        lead = f"If we look at {f('attr', col, 1)},"
        if q is Q.COLLIDER_BIAS:
            verb = "does not affect" if neg else "affects"
            return f"{lead} does it mean that {f('overall', x)} {verb} {f('overall', y)}?"
        word = "smaller" if neg else "larger"
        return f"{lead} is the chance of {f('noun', y, 1)} {word} when observing {f('noun', x, 1)}?"
    if q is Q.COUNTERFACTUAL_PROB:
        xv = qinst.treatment_value
        target = f("noun", y, 0 if neg else 1)
        return (
            f"For {f('attr', x, 1 - xv)}, would it be more likely than not to see "
            f"{target} {f('cond', x, xv)}?"
        )
    if q is Q.ATT:
        word = "more" if neg else "less"
        return (
            f"For {f('attr', x, 1)}, would it be {word} likely to see "
            f"{f('noun', y, 1)} {f('cond', x, 0)}?"
        )
    meds = [n for n in c.dag.nodes if n in c.mediators]
    sign = "negatively" if neg else "positively"
    if q is Q.NDE:
        if meds:
            return (
                f"If we disregard the mediation effect through {_names(story, meds)}, "
                f"would {f('noun', x, 1)} still {sign} affect {f('noun', y, 1)}?"
            )
        return f"Considering only its direct effect, does {f('noun', x, 1)} {sign} affect {f('noun', y, 1)}?"
    if q is Q.NIE:
        return (
            f"Does {f('overall', x)} {sign} affect {f('overall', y)} "
            f"through {_names(story, meds)}?"
        )
    raise StoryError(f"no template for {q}")


# ---------------------------------------------------------------------------
# explanations


def graph_edge_text(cgte: CgteSpec) -> str:
    return ",".join(f"{a}->{b}" for a, b in cgte.edge_list())


def query_formula(qinst: QueryInstance) -> str:
    if qinst.qtype is Q.COUNTERFACTUAL_PROB:
        xv = qinst.treatment_value
        return f"P(Y_{{X={xv}}}=1|X={1 - xv})"
    return symbolic_form(qinst.qtype)


def render_explanation(
    qinst: QueryInstance, story: Story, estimand: Estimand, terms, answer: str
) -> str:
    """Five numbered steps: graph, query, estimand, data, solution.

    ``terms`` carry the values as rendered in the prompt, so the numbers in
    step 5 can be reproduced from the question text alone.
    """
    c = qinst.cgte
    legend = "; ".join(f"{n} = {story.form('overall', n)}" for n in c.dag.nodes)
    data = {t.key: t.value for t in terms}
    data_text = ", ".join(f"{t.symbol()}={fmt_number(t.value)}" for t in terms) or "none needed"
    shown = evaluate(estimand.expr, data)
    est = estimand.text
    lines = [
        f'Step 1) Extract the causal graph: The causal graph expressed in the context is: "{graph_edge_text(c)}". Here {legend}.',
        f'Step 2) Identify the query type and its symbolic expression: The query type of the above question is "{qinst.qtype.label}", and formally as: "{query_formula(qinst)}".',
        f'Step 3) Derive the estimand: Based on the graph structure and causal query, the question can be simplified into estimand "{est}".',
        f'Step 4) Collect all the available data: The available data are: "{data_text}".',
        f'Step 5) Solve for the estimand: Plugin available data "{data_text}" into "{est}".',
        f"= {substitute(estimand.expr, data)}",
        f"≈ {shown:.4f}",
        f"Since the estimate for the estimand is {shown:.4f}, the overall answer to the question is {answer.capitalize()}.",
    ]
    return "\n".join(lines)


STEP_RE = re.compile(r"^Step [1-5]\) ", re.M)
