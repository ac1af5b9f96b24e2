"""Small builders shared across test modules."""

from __future__ import annotations

from intenteval.core import (
    Category,
    ConstraintSet,
    IntentConstraint,
    SatisfactionLabel,
)

_TIER_CATEGORIES = {
    "m": (Category.SUBJECT, Category.ACTION, Category.TIME, Category.LOCATION),
    "i": (Category.QUANTITY, Category.QUALIFIER),
    "o": (Category.OTHER,),
}


def make_set(m: int = 0, i: int = 0, o: int = 0, query_id: str = "q") -> ConstraintSet:
    """Constraint set with the given tier sizes and generated texts."""
    constraints = []
    for prefix, count in (("m", m), ("i", i), ("o", o)):
        categories = _TIER_CATEGORIES[prefix]
        for k in range(count):
            category = categories[k % len(categories)]
            constraints.append(
                IntentConstraint.from_category(
                    id=f"{query_id}-{prefix}{k}",
                    text=f"{category.value} requirement {prefix}{k}",
                    category=category,
                )
            )
    return ConstraintSet.from_constraints(query_id, constraints)


def label_all(cs: ConstraintSet, satisfied: bool = True) -> list[SatisfactionLabel]:
    return [
        SatisfactionLabel(constraint_id=c.id, satisfied=satisfied)
        for c in cs.all_constraints()
    ]


def label_by_flags(cs: ConstraintSet, flags: list[bool]) -> list[SatisfactionLabel]:
    constraints = cs.all_constraints()
    assert len(flags) == len(constraints)
    return [
        SatisfactionLabel(constraint_id=c.id, satisfied=flag)
        for c, flag in zip(constraints, flags)
    ]
