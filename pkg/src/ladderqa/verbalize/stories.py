"""Story registry and alignment transforms."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from importlib import resources

import numpy as np

from ..graph import CgteSpec, canonical_name


class StoryError(ValueError):
    pass


class Alignment(str, Enum):
    COMMONSENSICAL = "commonsensical"
    ANTI_COMMONSENSICAL = "anti_commonsensical"
    NONSENSICAL = "nonsensical"

    @classmethod
    def parse(cls, text) -> "Alignment":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        for a in cls:
            if a.value == key or a.name.lower() == key:
                return a
        raise StoryError(f"unknown alignment {text!r}; valid: {[a.value for a in cls]}")


FORMS = ("noun", "sent", "attr", "cond")


@dataclass(frozen=True)
class Binding:
    """Surface forms of one binary concept; tuples are indexed by value."""

    overall: str
    noun: tuple
    sent: tuple
    attr: tuple
    cond: tuple

    @classmethod
    def from_json(cls, data: dict, where: str) -> "Binding":
        missing = [k for k in ("overall", *FORMS) if k not in data]
        if missing:
            raise StoryError(f"{where}: missing forms {missing}")
        vals = {}
        for k in FORMS:
            pair = data[k]
            if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(s, str) and s for s in pair):
                raise StoryError(f"{where}: form {k!r} needs two nonempty strings")
            vals[k] = tuple(pair)
        return cls(overall=data["overall"], **vals)

    def to_json(self) -> dict:
        return {"overall": self.overall, **{k: list(getattr(self, k)) for k in FORMS}}


@dataclass(frozen=True)
class Story:
    id: str
    alignment: Alignment
    graphs: tuple
    head: str  # shared prefix of every attr form, e.g. "patients who"
    subject: str  # subject used in sentence forms, e.g. "the patient"
    bindings: dict = field(hash=False)
    variant: dict = field(default_factory=dict, hash=False)

    def binding(self, node: str) -> Binding:
        try:
            return self.bindings[node]
        except KeyError:
            raise StoryError(f"story {self.id!r} has no binding for node {node!r}") from None

    def form(self, kind: str, node: str, value: int | None = None) -> str:
        b = self.binding(node)
        if kind == "overall":
            return b.overall
        if value not in (0, 1):
            raise StoryError(f"form {kind!r} needs a value 0 or 1")
        return getattr(b, kind)[value]

    def check_graph(self, cgte: CgteSpec) -> None:
        if cgte.name not in self.graphs:
            raise StoryError(f"story {self.id!r} is not written for graph {cgte.name!r}")
        for n in cgte.dag.nodes:
            self.binding(n)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "alignment": self.alignment.value,
            "graphs": list(self.graphs),
            "head": self.head,
            "subject": self.subject,
            "bindings": {n: b.to_json() for n, b in self.bindings.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "Story":
        sid = data.get("id")
        if not sid:
            raise StoryError("story without id")
        bindings = {
            n: Binding.from_json(b, f"story {sid}, node {n}") for n, b in data["bindings"].items()
        }
        story = cls(
            id=sid,
            alignment=Alignment.parse(data.get("alignment", "commonsensical")),
            graphs=tuple(canonical_name(g) for g in data["graphs"]),
            head=data["head"],
            subject=data["subject"],
            bindings=bindings,
        )
        prefix = story.head + " "
        for n, b in bindings.items():
            for s in b.attr:
                if not s.startswith(prefix):
                    raise StoryError(f"story {sid}, node {n}: attr form {s!r} must start with {prefix!r}")
        return story


def _package_files():
    return resources.files("ladderqa.verbalize")


@lru_cache(maxsize=None)
def load_registry() -> dict:
    """All shipped stories keyed by id (loaded once)."""
    out = {}
    folder = _package_files() / "stories"
    for entry in sorted(folder.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            story = Story.from_json(json.loads(entry.read_text(encoding="utf-8")))
            if story.id in out:
                raise StoryError(f"duplicate story id {story.id!r}")
            out[story.id] = story
    return out


def stories_for(graph_name: str) -> list:
    name = canonical_name(graph_name)
    return [s for s in load_registry().values() if name in s.graphs]


def get_story(story_id: str) -> Story:
    try:
        return load_registry()[story_id]
    except KeyError:
        raise StoryError(f"unknown story {story_id!r}") from None


@lru_cache(maxsize=None)
def load_pools() -> dict:
    return json.loads((_package_files() / "pools.json").read_text(encoding="utf-8"))


def _clause_binding(story: Story, entry: dict) -> Binding:
    return Binding(
        overall=entry["overall"],
        noun=tuple(entry["noun"]),
        sent=tuple(f"{story.subject} {c}" for c in entry["singular"]),
        attr=tuple(f"{story.head} {c}" for c in entry["plural"]),
        cond=tuple(f"if {story.subject} {c}" for c in entry["past"]),
    )


def _nonsense_binding(word: str) -> Binding:
    return Binding(
        overall=word,
        noun=(f"not being {word}", f"being {word}"),
        sent=(f"it is not {word}", f"it is {word}"),
        attr=(f"those who are not {word}", f"those who are {word}"),
        cond=(f"had it not been {word}", f"had it been {word}"),
    )


def apply_variant(story: Story, variant: dict) -> Story:
    """Rebuild a transformed story from its recorded variant description."""
    if not variant:
        return story
    kind = variant.get("kind")
    pools = load_pools()
    if kind in ("outcome", "treatment"):
        pool = pools["outcomes" if kind == "outcome" else "treatments"]
        match = [e for e in pool if e["overall"] == variant["concept"]]
        if not match:
            raise StoryError(f"unknown replacement concept {variant['concept']!r}")
        bindings = dict(story.bindings)
        bindings[variant["node"]] = _clause_binding(story, match[0])
        return replace(
            story, alignment=Alignment.ANTI_COMMONSENSICAL, bindings=bindings, variant=dict(variant)
        )
    if kind == "nonsense":
        words = variant["words"]
        if set(words) != set(story.bindings):
            raise StoryError("nonsense variant must rename every node")
        bindings = {n: _nonsense_binding(words[n]) for n in story.bindings}
        return replace(
            story,
            alignment=Alignment.NONSENSICAL,
            head="those who",
            subject="it",
            bindings=bindings,
            variant=dict(variant),
        )
    raise StoryError(f"unknown story variant {variant!r}")


def transform_alignment(
    story: Story, level, rng: np.random.Generator, cgte: CgteSpec | None = None
) -> Story:
    """Return ``story`` re-verbalized at alignment ``level``.

    Anti-commonsensical stories swap either the outcome or the treatment
    concept (chosen with equal probability) for one from a fixed pool of
    unrelated attributes.  Nonsensical stories rename every node with
    distinct invented words.
    """
    level = Alignment.parse(level)
    if story.alignment is not Alignment.COMMONSENSICAL:
        raise StoryError("only commonsensical stories can be transformed")
    if level is Alignment.COMMONSENSICAL:
        return story
    treatment = cgte.treatment if cgte else "X"
    outcome = cgte.outcome if cgte else "Y"
    pools = load_pools()
    if level is Alignment.ANTI_COMMONSENSICAL:
        kind = "outcome" if rng.integers(2) == 0 else "treatment"
        pool = pools["outcomes" if kind == "outcome" else "treatments"]
        taken = {b.overall.lower() for b in story.bindings.values()}
        options = [e["overall"] for e in pool if e["overall"].lower() not in taken]
        if not options:
            raise StoryError(f"replacement pool exhausted for story {story.id!r}")
        concept = options[int(rng.integers(len(options)))]
        node = outcome if kind == "outcome" else treatment
        return apply_variant(story, {"kind": kind, "node": node, "concept": concept})
    words = pools["nonsense_words"]
    nodes = list(story.bindings)
    if len(nodes) > len(words):
        raise StoryError("nonsense word pool exhausted")
    picks = rng.choice(len(words), size=len(nodes), replace=False)
    return apply_variant(
        story, {"kind": "nonsense", "words": {n: words[int(i)] for n, i in zip(nodes, picks)}}
    )
