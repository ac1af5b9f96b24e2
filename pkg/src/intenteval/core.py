"""Domain types and the deterministic scoring arithmetic.

Everything here is a pure function over immutable values. Arithmetic is exact
(``fractions.Fraction``); rounding to display precision happens only when a
record is serialized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

from .errors import (
    DomainError,
    EmptyConstraintSet,
    EmptyInput,
    LabelMismatch,
)

Rational = Union[int, str, float, Fraction]


class Tier(str, Enum):
    MANDATORY = "Mandatory"
    IMPORTANT = "Important"
    OPTIONAL = "Optional"


class Category(str, Enum):
    LOCATION = "Location"
    TIME = "Time"
    SUBJECT = "Subject"
    ACTION = "Action"
    QUALIFIER = "Qualifier"
    QUANTITY = "Quantity"
    OTHER = "Other"


class Band(str, Enum):
    STRONG = "Strong"
    PARTIAL = "Partial"
    MAJOR = "Major"


class Difficulty(str, Enum):
    EASY = "Easy"
    HARD = "Hard"


#: Category fully determines the tier a constraint belongs to.
TIER_FOR_CATEGORY: Mapping[Category, Tier] = {
    Category.LOCATION: Tier.MANDATORY,
    Category.TIME: Tier.MANDATORY,
    Category.SUBJECT: Tier.MANDATORY,
    Category.ACTION: Tier.MANDATORY,
    Category.QUALIFIER: Tier.IMPORTANT,
    Category.QUANTITY: Tier.IMPORTANT,
    Category.OTHER: Tier.OPTIONAL,
}

#: Total constraint counts at or below this are Easy; above it, Hard.
EASY_MAX_CONSTRAINTS = 4


def as_fraction(value: Rational) -> Fraction:
    """Convert to an exact Fraction.

    Floats go through their shortest decimal repr so that ``0.1`` becomes
    ``1/10`` rather than the binary expansion.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def render_two_decimals(value: Rational) -> str:
    """Fixed two-decimal rendering used at every serialization boundary."""
    frac = as_fraction(value)
    dec = Decimal(frac.numerator) / Decimal(frac.denominator)
    return str(dec.quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntentConstraint:
    """One atomic requirement a response must address."""

    id: str
    text: str
    tier: Tier
    category: Category

    def __post_init__(self) -> None:
        if not self.id:
            raise DomainError("constraint id must be non-empty")
        if not self.text.strip():
            raise DomainError("constraint text must be non-empty")
        expected = TIER_FOR_CATEGORY[self.category]
        if self.tier is not expected:
            raise DomainError(
                f"category {self.category.value} implies tier {expected.value}, "
                f"got {self.tier.value}"
            )

    @classmethod
    def from_category(cls, id: str, text: str, category: Category) -> IntentConstraint:
        """Build a constraint with the tier implied by its category."""
        return cls(id=id, text=text, tier=TIER_FOR_CATEGORY[category], category=category)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "tier": self.tier.value,
            "category": self.category.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> IntentConstraint:
        return cls(
            id=data["id"],
            text=data["text"],
            tier=Tier(data["tier"]),
            category=Category(data["category"]),
        )


@dataclass(frozen=True)
class ConstraintSet:
    """Tier-grouped constraints extracted from one query."""

    query_id: str
    mandatory: tuple[IntentConstraint, ...] = ()
    important: tuple[IntentConstraint, ...] = ()
    optional: tuple[IntentConstraint, ...] = ()
    sufficient: bool = True
    clarification: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mandatory", tuple(self.mandatory))
        object.__setattr__(self, "important", tuple(self.important))
        object.__setattr__(self, "optional", tuple(self.optional))
        if not self.sufficient:
            if self.mandatory or self.important or self.optional:
                raise DomainError("insufficient set must carry no constraints")
            if not (self.clarification or "").strip():
                raise DomainError("insufficient set must carry a clarification")
            return
        if not (self.mandatory or self.important or self.optional):
            raise EmptyConstraintSet(f"query {self.query_id!r} mapped to no constraints")
        ids = [c.id for c in self.all_constraints()]
        if len(ids) != len(set(ids)):
            raise DomainError("constraint ids must be unique within a set")

    @classmethod
    def insufficient(cls, query_id: str, clarification: str) -> ConstraintSet:
        return cls(query_id=query_id, sufficient=False, clarification=clarification)

    @classmethod
    def from_constraints(
        cls, query_id: str, constraints: Iterable[IntentConstraint]
    ) -> ConstraintSet:
        """Group constraints into tiers, preserving order of appearance."""
        grouped: dict[Tier, list[IntentConstraint]] = {t: [] for t in Tier}
        for constraint in constraints:
            grouped[constraint.tier].append(constraint)
        return cls(
            query_id=query_id,
            mandatory=tuple(grouped[Tier.MANDATORY]),
            important=tuple(grouped[Tier.IMPORTANT]),
            optional=tuple(grouped[Tier.OPTIONAL]),
        )

    def all_constraints(self) -> tuple[IntentConstraint, ...]:
        return self.mandatory + self.important + self.optional

    def by_tier(self, tier: Tier) -> tuple[IntentConstraint, ...]:
        return {
            Tier.MANDATORY: self.mandatory,
            Tier.IMPORTANT: self.important,
            Tier.OPTIONAL: self.optional,
        }[tier]

    @property
    def size(self) -> int:
        return len(self.mandatory) + len(self.important) + len(self.optional)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "mandatory": [c.to_dict() for c in self.mandatory],
            "important": [c.to_dict() for c in self.important],
            "optional": [c.to_dict() for c in self.optional],
            "sufficient": self.sufficient,
            "clarification": self.clarification,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> ConstraintSet:
        return cls(
            query_id=data["query_id"],
            mandatory=tuple(IntentConstraint.from_dict(c) for c in data["mandatory"]),
            important=tuple(IntentConstraint.from_dict(c) for c in data["important"]),
            optional=tuple(IntentConstraint.from_dict(c) for c in data["optional"]),
            sufficient=data["sufficient"],
            clarification=data.get("clarification"),
        )

    @classmethod
    def from_json_line(cls, line: str) -> ConstraintSet:
        return cls.from_dict(json.loads(line))


@dataclass(frozen=True)
class WeightConfig:
    """Importance weights per tier. Strictly positive; ordering is advisory only,
    since ablation configurations deliberately invert it."""

    alpha_mandatory: Fraction = Fraction(3)
    alpha_important: Fraction = Fraction(2)
    alpha_optional: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        for name in ("alpha_mandatory", "alpha_important", "alpha_optional"):
            value = as_fraction(getattr(self, name))
            if value <= 0:
                raise DomainError(f"{name} must be strictly positive")
            object.__setattr__(self, name, value)

    def weight_for(self, tier: Tier) -> Fraction:
        return {
            Tier.MANDATORY: self.alpha_mandatory,
            Tier.IMPORTANT: self.alpha_important,
            Tier.OPTIONAL: self.alpha_optional,
        }[tier]

    def scaled(self, factor: Rational) -> WeightConfig:
        f = as_fraction(factor)
        if f <= 0:
            raise DomainError("scale factor must be strictly positive")
        return WeightConfig(
            self.alpha_mandatory * f, self.alpha_important * f, self.alpha_optional * f
        )

    def label(self) -> str:
        def fmt(x: Fraction) -> str:
            return str(x) if x.denominator == 1 else str(float(x))

        return f"({fmt(self.alpha_mandatory)},{fmt(self.alpha_important)},{fmt(self.alpha_optional)})"


DEFAULT_WEIGHTS = WeightConfig()


@dataclass(frozen=True)
class SatisfactionLabel:
    """Binary verdict for one constraint against one response."""

    constraint_id: str
    satisfied: bool
    judge_rationale: str | None = None

    def to_dict(self) -> dict:
        return {
            "constraint_id": self.constraint_id,
            "satisfied": self.satisfied,
            "judge_rationale": self.judge_rationale,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> SatisfactionLabel:
        return cls(
            constraint_id=data["constraint_id"],
            satisfied=bool(data["satisfied"]),
            judge_rationale=data.get("judge_rationale"),
        )


@dataclass(frozen=True)
class ScoreReport:
    """Per-response scoring result. ``score`` is exactly 10 * satisfied / total."""

    query_id: str
    response_id: str
    labels: tuple[SatisfactionLabel, ...]
    total_weight: Fraction
    satisfied_weight: Fraction
    score: Fraction
    band: Band
    perfect: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "total_weight", as_fraction(self.total_weight))
        object.__setattr__(self, "satisfied_weight", as_fraction(self.satisfied_weight))
        object.__setattr__(self, "score", as_fraction(self.score))
        if self.total_weight <= 0:
            raise DomainError("total_weight must be positive")
        if not 0 <= self.satisfied_weight <= self.total_weight:
            raise DomainError("satisfied_weight must lie in [0, total_weight]")
        if self.score != self.satisfied_weight / self.total_weight * 10:
            raise DomainError("score must equal 10 * satisfied_weight / total_weight")
        all_satisfied = all(label.satisfied for label in self.labels)
        if self.perfect != (self.score == 10) or all_satisfied != self.perfect:
            raise DomainError("perfect must hold exactly when score is 10 and all labels satisfied")

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "response_id": self.response_id,
            "labels": [label.to_dict() for label in self.labels],
            "total_weight": render_two_decimals(self.total_weight),
            "satisfied_weight": render_two_decimals(self.satisfied_weight),
            "score": render_two_decimals(self.score),
            "band": self.band.value,
            "perfect": self.perfect,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


# ---------------------------------------------------------------------------
# Scoring operations
# ---------------------------------------------------------------------------

def _require_sufficient(cs: ConstraintSet) -> None:
    if not cs.sufficient:
        raise DomainError(f"constraint set for {cs.query_id!r} is marked insufficient")


def total_weight(cs: ConstraintSet, w: WeightConfig = DEFAULT_WEIGHTS) -> Fraction:
    """Sum of tier weights times tier sizes."""
    _require_sufficient(cs)
    if cs.size == 0:
        raise EmptyConstraintSet(f"query {cs.query_id!r} has no constraints")
    return (
        w.alpha_mandatory * len(cs.mandatory)
        + w.alpha_important * len(cs.important)
        + w.alpha_optional * len(cs.optional)
    )


def satisfied_weight(
    cs: ConstraintSet,
    labels: Sequence[SatisfactionLabel],
    w: WeightConfig = DEFAULT_WEIGHTS,
) -> Fraction:
    """Sum of tier weights over satisfied constraints.

    Labels must cover the constraint ids exactly, once each.
    """
    _require_sufficient(cs)
    by_id = {label.constraint_id: label for label in labels}
    if len(by_id) != len(labels):
        raise LabelMismatch("duplicate labels for the same constraint")
    known = {c.id for c in cs.all_constraints()}
    unknown = set(by_id) - known
    if unknown:
        raise LabelMismatch(f"labels reference unknown constraints: {sorted(unknown)}")
    unlabeled = known - set(by_id)
    if unlabeled:
        raise LabelMismatch(f"constraints left unlabeled: {sorted(unlabeled)}")
    result = Fraction(0)
    for tier in Tier:
        weight = w.weight_for(tier)
        result += weight * sum(1 for c in cs.by_tier(tier) if by_id[c.id].satisfied)
    return result


def constraint_score(satisfied: Rational, total: Rational) -> Fraction:
    """Satisfied weight normalized by total weight, scaled to [0, 10]."""
    ws, wt = as_fraction(satisfied), as_fraction(total)
    if wt <= 0:
        raise DomainError("total weight must be positive")
    if not 0 <= ws <= wt:
        raise DomainError("satisfied weight must lie in [0, total weight]")
    return ws / wt * 10


def score_band(score: Rational) -> Band:
    """Strong for scores >= 9, Partial for [7, 9), Major below 7."""
    value = as_fraction(score)
    if not 0 <= value <= 10:
        raise DomainError(f"score {value} outside [0, 10]")
    if value >= 9:
        return Band.STRONG
    if value >= 7:
        return Band.PARTIAL
    return Band.MAJOR


def classify_difficulty(cs: ConstraintSet) -> Difficulty:
    """Easy for at most four constraints, Hard above that."""
    _require_sufficient(cs)
    return Difficulty.EASY if cs.size <= EASY_MAX_CONSTRAINTS else Difficulty.HARD


def build_score_report(
    cs: ConstraintSet,
    labels: Sequence[SatisfactionLabel],
    w: WeightConfig = DEFAULT_WEIGHTS,
    response_id: str = "",
) -> ScoreReport:
    """Assemble a full report from judged labels."""
    wt = total_weight(cs, w)
    ws = satisfied_weight(cs, labels, w)
    score = constraint_score(ws, wt)
    ordered = _order_labels(cs, labels)
    return ScoreReport(
        query_id=cs.query_id,
        response_id=response_id,
        labels=ordered,
        total_weight=wt,
        satisfied_weight=ws,
        score=score,
        band=score_band(score),
        perfect=score == 10,
    )


def _order_labels(
    cs: ConstraintSet, labels: Sequence[SatisfactionLabel]
) -> tuple[SatisfactionLabel, ...]:
    by_id = {label.constraint_id: label for label in labels}
    return tuple(by_id[c.id] for c in cs.all_constraints())


def perfect_rate(reports: Sequence[ScoreReport]) -> Fraction:
    """Fraction of reports with a perfect score."""
    if not reports:
        raise EmptyInput("no reports to aggregate")
    return Fraction(sum(1 for r in reports if r.perfect), len(reports))
