"""Benchmark generation, serialization, statistics and record verification."""
from __future__ import annotations

import json
import logging
import math
import re
import zlib
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import engine, model
from .graph import CATALOG_NAMES, CgteSpec, catalog
from .model import CbnParams, GenerationError, ZeroProbabilityError
from .query import EPS, DegenerateInstance, Q, QueryInstance, QueryType, applicable_cells, decide_answer
from .verbalize import (
    Alignment,
    apply_variant,
    get_story,
    quantize,
    render_data_text,
    render_explanation,
    render_graph_text,
    render_question,
    stories_for,
    transform_alignment,
)

log = logging.getLogger(__name__)

FULL_TOTAL = 10_560
FULL_RUNG_COUNTS = (3288, 3288, 3984)
ORACLE_TOL = 1e-9
MIN_COMPLIANCE = 0.05


class DatasetError(ValueError):
    pass


class OracleMismatch(RuntimeError):
    """The identified estimand disagrees with the oracle: an engine bug."""


@dataclass(frozen=True)
class GenConfig:
    """Generation settings.

    ``rung_weights`` splits ``total`` across rungs (largest remainder), and
    each rung's share is split evenly across its (graph, query, story)
    cells.  ``quota`` bounds the per-cell count; it is only enforced when
    ``enforce_quota`` is set (the bounds cannot hold at small totals).
    """

    total: int = 1056
    seed: int = 0
    alignment_mix: tuple = (1 / 3, 1 / 3, 1 / 3)
    eps: float = EPS
    max_resamples: int = 1000
    rung_weights: tuple = FULL_RUNG_COUNTS
    quota: tuple = (50, 100)
    enforce_quota: bool | None = None  # None: only at full scale
    workers: int = 1

    def __post_init__(self):
        if self.total < 0:
            raise DatasetError("total must be nonnegative")
        if len(self.alignment_mix) != 3 or any(f < 0 for f in self.alignment_mix):
            raise DatasetError("alignment_mix needs three nonnegative fractions")
        if abs(math.fsum(self.alignment_mix) - 1.0) > 1e-9:
            raise DatasetError(f"alignment fractions must sum to 1, got {sum(self.alignment_mix)}")
        lo, hi = self.quota
        if not 0 < lo <= hi:
            raise DatasetError(f"bad quota bounds {self.quota}")
        if self.max_resamples < 1:
            raise DatasetError("max_resamples must be positive")


RECORD_FIELDS = (
    "id",
    "graph",
    "story_id",
    "alignment",
    "query_type",
    "rung",
    "given_info",
    "question",
    "answer",
    "value",
    "estimand",
    "reasoning",
    "meta",
)


@dataclass
class QuestionRecord:
    id: str
    graph: str
    story_id: str
    alignment: str
    query_type: str
    rung: int
    given_info: str
    question: str
    answer: str
    value: float
    estimand: str
    reasoning: str
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in RECORD_FIELDS}

    @classmethod
    def from_json(cls, data: dict) -> "QuestionRecord":
        missing = [k for k in RECORD_FIELDS if k not in data]
        if missing:
            raise DatasetError(f"record missing fields {missing}")
        extra = sorted(set(data) - set(RECORD_FIELDS))
        if extra:
            raise DatasetError(f"record has unknown fields {extra}")
        return cls(**{k: data[k] for k in RECORD_FIELDS})

    @property
    def prompt(self) -> str:
        return f"{self.given_info} {self.question}"


# ---------------------------------------------------------------------------
# planning


@dataclass(frozen=True)
class Cell:
    cell_id: str
    graph: str
    qtype: QueryType
    story_id: str
    count: int
    first_yes: bool = True  # answer of the first record; alternates after that


def _largest_remainder(total: int, weights) -> list:
    s = math.fsum(weights)
    raw = [total * w / s for w in weights]
    base = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[: total - sum(base)]:
        base[i] += 1
    return base


def plan_cells(config: GenConfig) -> list:
    """Cells in output order (sorted cell id) with their record counts."""
    by_rung: dict = {1: [], 2: [], 3: []}
    for g, q in applicable_cells():
        for story in stories_for(g):
            by_rung[q.rung].append((f"{g}/{q.value}/{story.id}", g, q, story.id))
    rung_totals = _largest_remainder(config.total, config.rung_weights)
    cells = []
    for rung, total in zip((1, 2, 3), rung_totals):
        group = sorted(by_rung[rung])
        k = len(group)
        base, extra = divmod(total, k)
        # spread the remainder evenly over the sorted cells
        bonus = {(i * k) // extra for i in range(extra)} if extra else set()
        for i, (cid, g, q, sid) in enumerate(group):
            cells.append(Cell(cid, g, q, sid, base + (1 if i in bonus else 0)))
    enforce = config.enforce_quota
    if enforce is None:
        enforce = config.total >= FULL_TOTAL
    if enforce:
        lo, hi = config.quota
        bad = [c for c in cells if not lo <= c.count <= hi]
        if bad:
            raise DatasetError(
                f"{len(bad)} cells fall outside quota {config.quota}, e.g. {bad[0].cell_id}={bad[0].count}"
            )
    cells.sort(key=lambda c: c.cell_id)
    # odd cells take turns starting with "yes" so the whole set stays balanced
    flip = True
    out = []
    for c in cells:
        if c.count % 2:
            c = Cell(c.cell_id, c.graph, c.qtype, c.story_id, c.count, flip)
            flip = not flip
        out.append(c)
    return out


def cell_rng(seed: int, cell_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(cell_id.encode("utf-8"))])


# ---------------------------------------------------------------------------
# instance construction


@lru_cache(maxsize=None)
def _estimand(graph: str, qtype: QueryType, treatment_value, candidate) -> engine.Estimand:
    c = catalog(graph)
    return engine.derive_estimand(c, QueryInstance(qtype, c, treatment_value=treatment_value, candidate=candidate))


@lru_cache(maxsize=None)
def _candidates(graph: str) -> tuple:
    return tuple(engine.adjustment_candidates(catalog(graph)))


@lru_cache(maxsize=None)
def _complier(graph: str) -> bool:
    return engine.complier_scope(catalog(graph))


def iv_admissible(cgte: CgteSpec, params: CbnParams) -> bool:
    """Monotone instrument with compliance of at least MIN_COMPLIANCE."""
    z = engine.instrument(cgte)
    x = cgte.treatment
    pa = cgte.dag.parents(x)
    zi = pa.index(z)
    table = params.table(x)
    diffs = []
    for key, p in table.items():
        if key[zi] == "1":
            diffs.append(p - table[key[:zi] + "0" + key[zi + 1:]])
    if not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
        return False
    px1 = model.prob(cgte.dag, params, {x: 1}, {z: 1})
    px0 = model.prob(cgte.dag, params, {x: 1}, {z: 0})
    return abs(px1 - px0) >= MIN_COMPLIANCE


def data_terms(est: engine.Estimand, cgte: CgteSpec, params: CbnParams) -> tuple:
    """(exact terms, terms with the values shown in the prompt)."""
    exact = engine.fill_data(cgte, params, engine.required_data(est))
    shown = [t.with_value(quantize(t.value)) for t in exact]
    return exact, shown


@dataclass
class Solved:
    qinst: QueryInstance
    estimand: engine.Estimand
    value: float
    answer: str
    shown_terms: list
    shown_value: float


def solve(cgte: CgteSpec, params: CbnParams, qinst: QueryInstance, eps: float = EPS) -> Solved:
    """Estimand, value, oracle check and answer for one instance.

    Raises DegenerateInstance when the instance must be resampled and
    OracleMismatch when identification and oracle disagree.
    """
    if _complier(cgte.name) and not iv_admissible(cgte, params):
        raise DegenerateInstance("instrument is not monotone or too weak")
    est = _estimand(cgte.name, qinst.qtype, qinst.treatment_value, qinst.candidate)
    try:
        value = engine.evaluate_with_params(est, cgte, params)
        truth = engine.oracle(cgte, params, qinst)
        _, shown = data_terms(est, cgte, params)
        shown_value = engine.evaluate(est.expr, {t.key: t.value for t in shown})
    except (ZeroProbabilityError, ZeroDivisionError) as exc:
        raise DegenerateInstance(str(exc)) from exc
    if abs(value - truth) > ORACLE_TOL:
        raise OracleMismatch(
            f"{cgte.name}/{qinst.qtype.value}: estimand {value!r} vs oracle {truth!r}"
        )
    answer = decide_answer(qinst.qtype, value, qinst.negate, eps)
    # the reader only sees rounded data; the answer must survive rounding
    if decide_answer(qinst.qtype, shown_value, qinst.negate, eps) != answer:
        raise DegenerateInstance("answer changes when recomputed from rendered data")
    return Solved(qinst, est, value, answer, shown, shown_value)


def _draw_query(rng, cgte: CgteSpec, qtype: QueryType, desired: str) -> QueryInstance:
    negate = bool(rng.integers(2))
    tv = int(rng.integers(2)) if qtype is Q.COUNTERFACTUAL_PROB else None
    cand = None
    if qtype is Q.ADJUSTMENT_SET:
        opts = _candidates(cgte.name)
        cand = opts[int(rng.integers(len(opts)))]
        base = _estimand(cgte.name, qtype, None, cand).expr.value == 1.0
        negate = base != (desired == "yes")
    elif qtype is Q.COLLIDER_BIAS:
        negate = desired == "yes"
    return QueryInstance(qtype, cgte, negate=negate, treatment_value=tv, candidate=cand)


def build_record(
    cell: Cell,
    index: int,
    story,
    cgte: CgteSpec,
    params: CbnParams,
    sol: Solved,
    seed: int,
) -> QuestionRecord:
    q = sol.qinst
    given_info = f"{render_graph_text(cgte, story)} {render_data_text(sol.shown_terms, story)}".strip()
    meta = {
        "seed": seed,
        "cell": cell.cell_id,
        "index": index,
        "engine_version": engine.ENGINE_VERSION,
        "params": params.to_json(cgte.dag),
        "negate": q.negate,
        "treatment_value": q.treatment_value,
        "candidate": list(q.candidate) if q.candidate else None,
        "strategy": sol.estimand.strategy,
        "adjustment": list(sol.estimand.adjustment),
        "flags": dict(sol.estimand.flags),
        "story_variant": story.variant,
        "data": [{"term": t.symbol(), "value": t.value} for t in sol.shown_terms],
        "shown_value": sol.shown_value,
        "nodes": len(cgte.dag.nodes),
        "edges": len(cgte.dag.edges),
    }
    return QuestionRecord(
        id=f"{cell.cell_id}/{index:04d}",
        graph=cgte.name,
        story_id=story.id,
        alignment=story.alignment.value,
        query_type=q.qtype.value,
        rung=q.rung,
        given_info=given_info,
        question=render_question(q, story),
        answer=sol.answer,
        value=sol.value,
        estimand=sol.estimand.text,
        reasoning=render_explanation(q, story, sol.estimand, sol.shown_terms, sol.answer),
        meta=meta,
    )


def _alignment_sequence(rng, n: int, mix) -> list:
    # largest remainder with random tie-breaks, so small cells do not all
    # favour the first alignment
    raw = [n * w for w in mix]
    counts = [int(math.floor(r)) for r in raw]
    ties = rng.random(len(raw))
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), ties[i]))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    seq = [a for a, k in zip(Alignment, counts) for _ in range(k)]
    return [seq[i] for i in rng.permutation(len(seq))] if seq else []


def generate_cell(cell: Cell, config: GenConfig) -> list:
    rng = cell_rng(config.seed, cell.cell_id)
    cgte = catalog(cell.graph)
    base = get_story(cell.story_id)
    aligns = _alignment_sequence(rng, cell.count, config.alignment_mix)
    records = []
    for k in range(cell.count):
        desired = "yes" if (k % 2 == 0) == cell.first_yes else "no"
        story = transform_alignment(base, aligns[k], rng, cgte)
        for _ in range(config.max_resamples):
            qinst = _draw_query(rng, cgte, cell.qtype, desired)
            params = model.sample_params(rng, cgte.dag)
            try:
                sol = solve(cgte, params, qinst, config.eps)
            except DegenerateInstance:
                continue
            if sol.answer == desired:
                records.append(build_record(cell, k, story, cgte, params, sol, config.seed))
                break
        else:
            raise GenerationError(
                f"cell {cell.cell_id}: no acceptable instance after {config.max_resamples} resamples"
            )
    return records


def _generate_cell_job(args):
    return generate_cell(*args)


def generate(config: GenConfig) -> Iterator[QuestionRecord]:
    """Records in deterministic order: sorted cell id, then index within cell."""
    cells = [c for c in plan_cells(config) if c.count]
    if config.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for recs in pool.map(_generate_cell_job, [(c, config) for c in cells]):
                yield from recs
    else:
        for c in cells:
            yield from generate_cell(c, config)


# ---------------------------------------------------------------------------
# serialization


def dumps_record(record: QuestionRecord) -> str:
    return json.dumps(record.to_json(), ensure_ascii=False)


def write_jsonl(records: Iterable[QuestionRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(dumps_record(r) + "\n")
            n += 1
    return n


def read_jsonl(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(QuestionRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, DatasetError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc})") from None
    return out


# ---------------------------------------------------------------------------
# statistics


_SENT_RE = re.compile(r"[.!?](?=\s|$)")


def count_sentences(text: str) -> int:
    return len(_SENT_RE.findall(text))


def count_words(text: str) -> int:
    return len(text.split())


@dataclass
class DatasetStats:
    total: int = 0
    by_rung: dict = field(default_factory=dict)
    by_query: dict = field(default_factory=dict)
    by_graph: dict = field(default_factory=dict)
    by_alignment: dict = field(default_factory=dict)
    positive_fraction: float = 0.0
    sentences_per_question: float = 0.0
    words_per_question: float = 0.0
    sentences_per_explanation: float = 0.0
    words_per_explanation: float = 0.0
    nodes_per_graph: float = 0.0
    edges_per_graph: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [("total", self.total)]
        rows += [(f"rung {k}", v) for k, v in sorted(self.by_rung.items())]
        rows += [
            ("positive class (%)", f"{100 * self.positive_fraction:.2f}"),
            ("sentences/question", f"{self.sentences_per_question:.2f}"),
            ("words/question", f"{self.words_per_question:.2f}"),
            ("sentences/explanation", f"{self.sentences_per_explanation:.2f}"),
            ("words/explanation", f"{self.words_per_explanation:.2f}"),
            ("nodes/graph", f"{self.nodes_per_graph:.2f}"),
            ("edges/graph", f"{self.edges_per_graph:.2f}"),
        ]
        rows += [(f"alignment {k}", v) for k, v in sorted(self.by_alignment.items())]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _mean(xs: list) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def compute_stats(records: Iterable[QuestionRecord]) -> DatasetStats:
    records = list(records)
    if not records:
        return DatasetStats()
    questions = [r.prompt for r in records]
    return DatasetStats(
        total=len(records),
        by_rung={str(k): v for k, v in sorted(Counter(r.rung for r in records).items())},
        by_query=dict(sorted(Counter(r.query_type for r in records).items())),
        by_graph=dict(sorted(Counter(r.graph for r in records).items())),
        by_alignment=dict(sorted(Counter(r.alignment for r in records).items())),
        positive_fraction=sum(r.answer == "yes" for r in records) / len(records),
        sentences_per_question=_mean([count_sentences(q) for q in questions]),
        words_per_question=_mean([count_words(q) for q in questions]),
        sentences_per_explanation=_mean([count_sentences(r.reasoning) for r in records]),
        words_per_explanation=_mean([count_words(r.reasoning) for r in records]),
        nodes_per_graph=_mean([r.meta.get("nodes", len(catalog(r.graph).dag.nodes)) for r in records]),
        edges_per_graph=_mean([r.meta.get("edges", len(catalog(r.graph).dag.edges)) for r in records]),
    )


# ---------------------------------------------------------------------------
# verification


def rebuild_instance(record: QuestionRecord) -> tuple:
    """(cgte, params, query instance) from a record's metadata."""
    cgte = catalog(record.graph)
    meta = record.meta
    params = CbnParams.from_json(meta["params"], cgte.dag)
    cand = tuple(meta["candidate"]) if meta.get("candidate") else None
    qinst = QueryInstance(
        QueryType.parse(record.query_type),
        cgte,
        negate=bool(meta["negate"]),
        treatment_value=meta.get("treatment_value"),
        candidate=cand,
    )
    return cgte, params, qinst


def verify_record(record: QuestionRecord, eps: float = EPS) -> list:
    """Re-derive a record from its metadata; returns a list of problems."""
    try:
        cgte, params, qinst = rebuild_instance(record)
        sol = solve(cgte, params, qinst, eps)
    except (KeyError, TypeError, ValueError, OracleMismatch) as exc:
        return [f"cannot re-derive: {exc}"]
    problems = []
    if sol.value != record.value:
        problems.append(f"value {record.value!r} != recomputed {sol.value!r}")
    if sol.answer != record.answer:
        problems.append(f"answer {record.answer!r} != recomputed {sol.answer!r}")
    if sol.estimand.text != record.estimand:
        problems.append("estimand text differs")
    if qinst.rung != record.rung:
        problems.append(f"rung {record.rung} != {qinst.rung}")
    try:
        story = apply_variant(get_story(record.story_id), record.meta.get("story_variant") or {})
    except ValueError as exc:
        return problems + [f"story: {exc}"]
    if story.alignment.value != record.alignment:
        problems.append("alignment does not match story variant")
    given = f"{render_graph_text(cgte, story)} {render_data_text(sol.shown_terms, story)}".strip()
    if given != record.given_info:
        problems.append("given_info differs from re-rendered text")
    if render_question(qinst, story) != record.question:
        problems.append("question differs from re-rendered text")
    if render_explanation(qinst, story, sol.estimand, sol.shown_terms, sol.answer) != record.reasoning:
        problems.append("reasoning differs from re-rendered text")
    return problems


def verify_records(records: Iterable[QuestionRecord]) -> dict:
    """``{record id: problems}`` for every failing record."""
    return {r.id: p for r in records if (p := verify_record(r))}
