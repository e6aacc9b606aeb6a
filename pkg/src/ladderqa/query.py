"""Query types, where they apply, and how a number becomes yes/no."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .graph import CATALOG_NAMES, CgteSpec, canonical_name

EPS = 0.005  # tie guard around every decision threshold


class DegenerateInstance(ValueError):
    """The value sits within the tie guard of its decision threshold."""


class QueryError(ValueError):
    pass


class QueryType(str, Enum):
    MARGINAL_PROB = "marginal_prob"
    COND_PROB = "cond_prob"
    ATE = "ate"
    ADJUSTMENT_SET = "adjustment_set"
    COLLIDER_BIAS = "collider_bias"
    EXPLAINING_AWAY = "explaining_away"
    COUNTERFACTUAL_PROB = "counterfactual_prob"
    ATT = "att"
    NDE = "nde"
    NIE = "nie"

    @property
    def rung(self) -> int:
        return _RUNG[self]

    @property
    def label(self) -> str:
        return _LABEL[self]

    @classmethod
    def parse(cls, text) -> "QueryType":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_").replace(" ", "_")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(q.value for q in cls)
            raise QueryError(f"unknown query type {text!r}; valid: {valid}") from None


Q = QueryType

_RUNG = {
    Q.MARGINAL_PROB: 1,
    Q.COND_PROB: 1,
    # collider questions contrast conditioning with intervening; kept on rung 2
    Q.ATE: 2,
    Q.ADJUSTMENT_SET: 2,
    Q.COLLIDER_BIAS: 2,
    Q.EXPLAINING_AWAY: 2,
    Q.COUNTERFACTUAL_PROB: 3,
    Q.ATT: 3,
    Q.NDE: 3,
    Q.NIE: 3,
}

_LABEL = {
    Q.MARGINAL_PROB: "marginal probability",
    Q.COND_PROB: "conditional probability",
    Q.ATE: "average treatment effect",
    Q.ADJUSTMENT_SET: "backdoor adjustment set",
    Q.COLLIDER_BIAS: "collider bias",
    Q.EXPLAINING_AWAY: "explaining away effect",
    Q.COUNTERFACTUAL_PROB: "counterfactual probability",
    Q.ATT: "average treatment effect on treated",
    Q.NDE: "natural direct effect",
    Q.NIE: "natural indirect effect",
}

_ALIASES = {
    "marginal": "marginal_prob",
    "marginal_probability": "marginal_prob",
    "conditional": "cond_prob",
    "conditional_probability": "cond_prob",
    "adjustment": "adjustment_set",
    "backadj": "adjustment_set",
    "counterfactual": "counterfactual_prob",
    "det_counterfactual": "counterfactual_prob",
    "exp_away": "explaining_away",
    "collider": "collider_bias",
}

_ALL = frozenset(CATALOG_NAMES)

_APPLICABLE = {
    Q.MARGINAL_PROB: _ALL,
    # X and Y are independent on the collision graph: the association is 0
    Q.COND_PROB: _ALL - {"collision"},
    Q.ATE: _ALL - {"collision"},
    # graphs with a candidate set where exactly one of {S, empty set} is admissible
    Q.ADJUSTMENT_SET: frozenset(
        {"chain", "collision", "confounding", "mediation", "diamond", "diamondcut", "arrowhead"}
    ),
    Q.COLLIDER_BIAS: frozenset({"collision"}),
    Q.EXPLAINING_AWAY: frozenset({"collision"}),
    Q.COUNTERFACTUAL_PROB: _ALL - {"collision"},
    Q.ATT: _ALL - {"collision", "IV"},
    Q.NDE: frozenset({"IV", "arrowhead", "confounding", "mediation", "diamondcut"}),
    Q.NIE: frozenset({"mediation", "frontdoor", "arrowhead", "diamond", "chain"}),
}


def applicability(graph_name: str, qtype) -> bool:
    return canonical_name(graph_name) in _APPLICABLE[QueryType.parse(qtype)]


def applicable_cells() -> list:
    """All admissible (graph, query type) pairs in catalog x enum order."""
    return [(g, q) for q in QueryType for g in CATALOG_NAMES if applicability(g, q)]


_SYMBOLIC = {
    Q.MARGINAL_PROB: "P(Y)",
    Q.COND_PROB: "P(Y|X)",
    Q.ATE: "E[Y|do(X=1)] - E[Y|do(X=0)]",
    Q.ADJUSTMENT_SET: "P(Y|do(X)) = \\sum_{S} P(S) P(Y|X,S)",
    Q.COLLIDER_BIAS: "E[Y|do(X=1)] - E[Y|do(X=0)]",
    Q.EXPLAINING_AWAY: "P(Y=1|X=1,C=1) - P(Y=1|X=0,C=1)",
    Q.COUNTERFACTUAL_PROB: "P(Y_x=y)",
    Q.ATT: "E[Y_1 - Y_0|X=1]",
    Q.NDE: "E[Y_{1,M_0} - Y_{0,M_0}]",
    Q.NIE: "E[Y_{0,M_1} - Y_{0,M_0}]",
}


def symbolic_form(qtype) -> str:
    return _SYMBOLIC[QueryType.parse(qtype)]


# decision threshold per type; None means the answer is structural
_THRESHOLD = {
    Q.MARGINAL_PROB: 0.5,
    Q.COND_PROB: 0.0,
    Q.ATE: 0.0,
    Q.EXPLAINING_AWAY: 0.0,
    Q.COUNTERFACTUAL_PROB: 0.5,
    Q.ATT: 0.0,
    Q.NDE: 0.0,
    Q.NIE: 0.0,
    Q.ADJUSTMENT_SET: None,
    Q.COLLIDER_BIAS: None,
}


def threshold(qtype) -> float | None:
    return _THRESHOLD[QueryType.parse(qtype)]


def decide_answer(qtype, value: float, negate: bool = False, eps: float = EPS) -> str:
    """Map a ground-truth value to "yes"/"no".

    Numeric types answer "yes" iff the value exceeds the type's threshold
    (0.5 for probabilities, 0 for differences and effects); ``negate`` is
    the flipped question direction ("decrease", "less likely", ...).

    ``adjustment_set`` takes 1.0 when the candidate set is admissible and
    the empty set is not, 0.0 in the reverse case.  ``collider_bias`` takes
    the causal effect, which is structurally 0, so the plain question
    ("does it mean X affects Y?") is always "no".
    """
    qtype = QueryType.parse(qtype)
    cut = _THRESHOLD[qtype]
    if qtype is Q.ADJUSTMENT_SET:
        if value not in (0.0, 1.0):
            raise QueryError(f"adjustment_set value must be 0 or 1, got {value}")
        yes = value == 1.0
    elif qtype is Q.COLLIDER_BIAS:
        if abs(value) > 1e-12:
            raise QueryError(f"collider_bias effect must be 0, got {value}")
        yes = False
    else:
        if abs(value - cut) < eps:
            raise DegenerateInstance(
                f"{qtype.value}: value {value:.6f} within {eps} of threshold {cut}"
            )
        yes = value > cut
    return "yes" if yes != bool(negate) else "no"


@dataclass(frozen=True)
class QueryInstance:
    """One concrete question before verbalization.

    ``treatment_value`` is the counterfactual treatment for
    ``counterfactual_prob`` (evidence is the opposite value); ``candidate``
    is the adjustment candidate; ``negate`` flips the question direction.
    """

    qtype: QueryType
    cgte: CgteSpec
    negate: bool = False
    treatment_value: int | None = None
    candidate: tuple | None = None
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "qtype", QueryType.parse(self.qtype))
        if self.strict and not applicability(self.cgte.name, self.qtype):
            raise QueryError(f"{self.qtype.value} is not asked on the {self.cgte.name} graph")
        if self.qtype is Q.COUNTERFACTUAL_PROB:
            if self.treatment_value not in (0, 1):
                raise QueryError("counterfactual_prob needs treatment_value 0 or 1")
        elif self.treatment_value is not None:
            raise QueryError(f"{self.qtype.value} takes no treatment_value")
        if self.qtype is Q.ADJUSTMENT_SET:
            if not self.candidate:
                raise QueryError("adjustment_set needs a nonempty candidate set")
            cand = self.cgte.dag.sorted_nodes(self.candidate)
            if len(cand) != len(set(self.candidate)):
                raise QueryError(f"candidate {self.candidate} has unknown nodes")
            object.__setattr__(self, "candidate", cand)
        elif self.candidate is not None:
            raise QueryError(f"{self.qtype.value} takes no candidate set")

    @property
    def rung(self) -> int:
        return self.qtype.rung

    @property
    def evidence_value(self) -> int | None:
        if self.treatment_value is None:
            return None
        return 1 - self.treatment_value
