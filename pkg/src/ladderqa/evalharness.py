"""CausalCoT prompt chains, model clients, answer parsing and grading."""
from __future__ import annotations

import json
import logging
import os
import re
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .dataset import QuestionRecord
from .graph import catalog
from .query import QueryType
from .verbalize import apply_variant, get_story

log = logging.getLogger(__name__)

ENV_ENDPOINT = "LADDERQA_ENDPOINT"
ENV_TOKEN = "LADDERQA_API_KEY"
ENV_MODEL = "LADDERQA_MODEL"
MAX_ATTEMPTS = 5

_TYPE_LABELS = ", ".join(f'"{q.label}"' for q in QueryType)

SUBQUESTIONS = (
    'Extract the causal graph: Identify the causal graph that depicts the relationships in the scenario. '
    'List its edges in "V1 -> V2" form, separated by commas.',
    f"Identify the query type: Which type of query does the main question ask? Choose one of {_TYPE_LABELS} "
    "and give it in quotation marks.",
    'Formalize the query and derive the estimand: Write the query in formal notation, using "do(.)" or '
    "counterfactual notation as needed, and derive an estimand that only uses observational probabilities.",
    'Collect the available data: List every probability given in the scenario as "P(...)=..." or '
    '"P(...|...)=...", separated by semicolons.',
    "Given all the information above, solve for the query. Answer step by step. "
    'End with "Final answer: yes" or "Final answer: no".',
)


class ConfigError(ValueError):
    """Missing or invalid client configuration."""


class GradeError(ValueError):
    pass


class TransientError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# prompts


def record_question(record: QuestionRecord) -> str:
    return f"{record.given_info}\n{record.question}"


def causalcot_prompts(record: QuestionRecord, drop_steps: Iterable[int] = ()) -> list:
    """The ordered subquestions for ``record``; ``drop_steps`` ablates steps 1-4."""
    drop = set(drop_steps)
    if 5 in drop:
        raise ValueError("the final step cannot be dropped")
    return [s for i, s in enumerate(SUBQUESTIONS, 1) if i not in drop]


def chain_prompt(question: str, subquestions: Sequence[str], responses: Sequence[str]) -> str:
    """concat(q, s_1, r_1, ..., s_{m-1}, r_{m-1}, s_m) with m = len(responses) + 1."""
    m = len(responses) + 1
    if m > len(subquestions):
        raise ValueError("more responses than subquestions")
    parts = [question]
    for s, r in zip(subquestions, responses):
        parts.append(f"{s}\n{r}")
    parts.append(subquestions[m - 1])
    return "\n\n".join(parts)


# ---------------------------------------------------------------------------
# clients


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float = 0.0
    max_tokens: int = 1024
    system: str = "You are an expert in causal inference. Answer the questions precisely."


@dataclass
class Completion:
    text: str
    usage: dict = field(default_factory=dict)


class ModelClient(Protocol):
    name: str

    def send(self, prompt: str, config: DecodingConfig) -> Completion: ...


class HttpClient:
    """OpenAI-compatible chat endpoint (one POST per call).

    Transient failures (connection errors, HTTP 429 and 5xx) are retried
    with exponential backoff, at most ``MAX_ATTEMPTS`` attempts in total.
    The underlying ``httpx.Client`` is thread-safe and shared.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        token: str | None = None,
        model: str | None = None,
        timeout: float = 60.0,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        transport=None,
    ):
        import httpx

        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
        self.token = token if token is not None else os.environ.get(ENV_TOKEN)
        self.model = model or os.environ.get(ENV_MODEL)
        if not self.endpoint:
            raise ConfigError(f"no endpoint: pass one or set {ENV_ENDPOINT}")
        if not self.endpoint.startswith(("http://", "https://")):
            raise ConfigError(f"endpoint must be an http(s) URL, got {self.endpoint!r}")
        if not self.model:
            raise ConfigError(f"no model name: pass one or set {ENV_MODEL}")
        self.name = self.model
        self.backoff = backoff
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._httpx = httpx

    def close(self) -> None:
        self._http.close()

    def _post(self, payload: dict) -> dict:
        httpx = self._httpx
        try:
            resp = self._http.post(self.endpoint, json=payload)
        except httpx.TransportError as exc:
            raise TransientError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}")
        resp.raise_for_status()
        return resp.json()

    def send(self, prompt: str, config: DecodingConfig = DecodingConfig()) -> Completion:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": config.system},
                {"role": "user", "content": prompt},
            ],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        for attempt in range(1, MAX_ATTEMPTS + 1):
            try:
                data = self._post(payload)
                break
            except TransientError as exc:
                if attempt == MAX_ATTEMPTS:
                    raise
                delay = self.backoff * 2 ** (attempt - 1)
                log.warning("attempt %d failed (%s); retrying in %.1fs", attempt, exc, delay)
                self._sleep(delay)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise RuntimeError(f"unexpected response shape: {str(data)[:200]}") from exc
        return Completion(text or "", dict(data.get("usage") or {}))


class MockClient:
    """Deterministic scripted client.

    ``script(prompt, step)`` returns the reply; ``step`` is the 1-based
    position of the subquestion in the chain being asked.
    """

    def __init__(self, script: Callable[[str, int], str], name: str = "mock"):
        self.script = script
        self.name = name

    def send(self, prompt: str, config: DecodingConfig = DecodingConfig()) -> Completion:
        step = prompt.count("\n\n")  # one separator per chained part
        return Completion(self.script(prompt, step))

    @classmethod
    def constant(cls, answer: str, name: str = "majority") -> "MockClient":
        return cls(lambda p, s: f"Step {s} noted. Final answer: {answer}", name)

    @classmethod
    def from_answers(cls, records: Iterable[QuestionRecord], name: str = "oracle-mock") -> "MockClient":
        """Answers every record with its stored ground truth (keyed by question text)."""
        by_q = {record_question(r): r.answer for r in records}

        def script(prompt: str, step: int) -> str:
            a = by_q.get(prompt.split("\n\n", 1)[0])
            if a is None:
                return "I cannot tell."
            return f"Reasoning for step {step}. Final answer: {a}"

        return cls(script, name)


# ---------------------------------------------------------------------------
# running


@dataclass
class Transcript:
    record_id: str
    steps: list = field(default_factory=list)  # [{"subquestion", "prompt", "response"}]
    final_answer: str = "unknown"
    errored: bool = False
    error: str | None = None
    elapsed: float = 0.0
    usage: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "Transcript":
        return cls(**data)


_VERDICTS = (
    re.compile(r"final answer\s*(?:is)?\s*[:\-]?\s*[\"'*]*\s*(yes|no)\b", re.I),
    re.compile(r"answer (?:to the question )?is\s*[:\-]?\s*[\"'*]*\s*(yes|no)\b", re.I),
)
_LEADING = re.compile(r"^\W*(yes|no)\b", re.I)
_TRAILING = re.compile(r"\b(yes|no)\W*$", re.I)


def parse_final_answer(text: str) -> str:
    """yes/no from a verdict phrase or a leading/trailing yes/no, else unknown."""
    if not text:
        return "unknown"
    for pat in _VERDICTS:
        hits = pat.findall(text)
        if hits:
            return hits[-1].lower()
    for pat in (_LEADING, _TRAILING):
        m = pat.search(text.strip())
        if m:
            return m.group(1).lower()
    return "unknown"


def run_record(
    record: QuestionRecord,
    client: ModelClient,
    config: DecodingConfig = DecodingConfig(),
    drop_steps: Iterable[int] = (),
) -> Transcript:
    """Ask the chain for one record; failures are captured, not raised."""
    subs = causalcot_prompts(record, drop_steps)
    q = record_question(record)
    tr = Transcript(record.id)
    start = time.perf_counter()
    responses: list = []
    try:
        for s in subs:
            prompt = chain_prompt(q, subs, responses)
            comp = client.send(prompt, config)
            responses.append(comp.text)
            tr.steps.append({"subquestion": s, "prompt": prompt, "response": comp.text})
            for k, v in comp.usage.items():
                if isinstance(v, (int, float)):
                    tr.usage[k] = tr.usage.get(k, 0) + v
        tr.final_answer = parse_final_answer(responses[-1])
    except Exception as exc:  # noqa: BLE001 - one bad record must not stop the batch
        tr.errored = True
        tr.error = f"{type(exc).__name__}: {exc}"
        tr.final_answer = "unknown"
    tr.elapsed = time.perf_counter() - start
    return tr


def run(
    records: Sequence[QuestionRecord],
    client: ModelClient,
    parallelism: int = 4,
    config: DecodingConfig = DecodingConfig(),
    drop_steps: Iterable[int] = (),
) -> list:
    """Transcripts in input order; at most ``parallelism`` records in flight."""
    drop = tuple(drop_steps)
    if not records:
        return []
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(lambda r: run_record(r, client, config, drop), records))


def write_transcripts(transcripts: Iterable[Transcript], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in transcripts:
            fh.write(json.dumps(t.to_json(), ensure_ascii=False) + "\n")


def read_transcripts(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [Transcript.from_json(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# grading


@dataclass
class Report:
    name: str
    n: int
    overall: float
    by_rung: dict
    by_alignment: dict
    by_query: dict
    unknown_rate: float
    errored: int

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [("overall", self.overall)]
        rows += [(f"rung {k}", v) for k, v in self.by_rung.items()]
        rows += [(f"{k}", v) for k, v in self.by_alignment.items()]
        rows += [(f"{k}", v) for k, v in self.by_query.items()]
        width = max(len(r[0]) for r in rows)
        lines = [f"{self.name}: {self.overall:.2f} overall (n={self.n})"]
        lines += [f"  {k:<{width}}  {v:6.2f}" for k, v in rows]
        lines.append(f"  {'unknown rate':<{width}}  {100 * self.unknown_rate:6.2f}")
        lines.append(f"  {'errored':<{width}}  {self.errored:6d}")
        return "\n".join(lines)


def _pct(hits: list) -> float:
    return round(100.0 * sum(hits) / len(hits), 2) if hits else 0.0


def grade(transcripts: Sequence[Transcript], records: Sequence[QuestionRecord], name: str = "model") -> Report:
    """Accuracy overall and by rung, alignment and query type; unknown counts as wrong."""
    by_id = {r.id: r for r in records}
    if len(by_id) != len(records):
        raise GradeError("duplicate record ids")
    seen = set()
    for t in transcripts:
        if t.record_id not in by_id:
            raise GradeError(f"transcript for unknown record {t.record_id!r}")
        if t.record_id in seen:
            raise GradeError(f"two transcripts for record {t.record_id!r}")
        seen.add(t.record_id)
    missing = set(by_id) - seen
    if missing:
        raise GradeError(f"{len(missing)} records have no transcript, e.g. {sorted(missing)[0]!r}")
    hits, rung, align, qtype = [], defaultdict(list), defaultdict(list), defaultdict(list)
    for t in transcripts:
        r = by_id[t.record_id]
        ok = t.final_answer == r.answer
        hits.append(ok)
        rung[str(r.rung)].append(ok)
        align[r.alignment].append(ok)
        qtype[r.query_type].append(ok)
    return Report(
        name=name,
        n=len(hits),
        overall=_pct(hits),
        by_rung={k: _pct(v) for k, v in sorted(rung.items())},
        by_alignment={k: _pct(v) for k, v in sorted(align.items())},
        by_query={k: _pct(v) for k, v in sorted(qtype.items())},
        unknown_rate=(sum(t.final_answer == "unknown" for t in transcripts) / len(hits)) if hits else 0.0,
        errored=sum(t.errored for t in transcripts),
    )


# ---------------------------------------------------------------------------
# optional step scoring (steps 1 and 2 only)


_EDGE_RE = re.compile(r"([A-Za-z][\w' ]*?)\s*->\s*([A-Za-z][\w' ]*)")


def _f1(pred: set, gold: set) -> float:
    if not pred and not gold:
        return 1.0
    tp = len(pred & gold)
    if tp == 0:
        return 0.0
    p, r = tp / len(pred), tp / len(gold)
    return 2 * p * r / (p + r)


def _response(t: Transcript, sub_index: int) -> str | None:
    target = SUBQUESTIONS[sub_index]
    for s in t.steps:
        if s["subquestion"] == target:
            return s["response"]
    return None


def score_steps(transcripts: Sequence[Transcript], records: Sequence[QuestionRecord]) -> dict:
    """Node/edge F1 for step 1 and query-type accuracy for step 2 (means)."""
    by_id = {r.id: r for r in records}
    node_f1, edge_f1, type_hits = [], [], []
    labels = {q.label: q.value for q in QueryType}
    for t in transcripts:
        r = by_id.get(t.record_id)
        if r is None:
            raise GradeError(f"transcript for unknown record {t.record_id!r}")
        cgte = catalog(r.graph)
        story = apply_variant(get_story(r.story_id), r.meta.get("story_variant") or {})
        alias = {n.lower(): n for n in cgte.dag.nodes}
        alias.update({story.form("overall", n).lower(): n for n in cgte.dag.nodes})
        step1 = _response(t, 0)
        if step1 is not None:
            edges = set()
            for a, b in _EDGE_RE.findall(step1):
                a, b = alias.get(a.strip().lower()), alias.get(b.strip().lower())
                if a and b:
                    edges.add((a, b))
            nodes = {n for e in edges for n in e}
            edge_f1.append(_f1(edges, set(cgte.dag.edges)))
            node_f1.append(_f1(nodes, set(cgte.dag.nodes)))
        step2 = _response(t, 1)
        if step2 is not None:
            found = [labels[m] for m in re.findall(r'"([^"]+)"', step2.lower()) if m in labels]
            type_hits.append(bool(found) and found[0] == r.query_type)

    def mean(xs):
        return round(sum(xs) / len(xs), 4) if xs else None

    return {
        "step1": {"node_f1": mean(node_f1), "edge_f1": mean(edge_f1), "n": len(edge_f1)},
        "step2": {"accuracy": mean(type_hits), "n": len(type_hits)},
    }
