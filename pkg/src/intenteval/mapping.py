"""Query-to-constraint decomposition.

Builds the decomposition prompt, parses the model's terminal "START:" listing
into a :class:`~intenteval.core.ConstraintSet`, and runs the whole mapping
step through the gateway.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .core import (
    Category,
    ConstraintSet,
    IntentConstraint,
    TIER_FOR_CATEGORY,
    Tier,
)
from .errors import DomainError, MalformedOutput, MappingFailed, UnknownTier
from .gateway import (
    DEFAULT_MAX_OUTPUT,
    DEFAULT_TEMPERATURE,
    CompletionRequest,
    Gateway,
)

START_MARKER = "START:"

MAPPING_PROMPT_PREFIX = (
    "You are an advanced linguist tasked with processing queries using a "
    "constraint-based approach. Decompose the given query step by step, "
    "following the instructions below.\n"
    "\n"
    "Query: "
)

MAPPING_PROMPT_SUFFIX = """

0. Preliminary Check:
   - Focus solely on the TASK QUERY.
   - Check if any external content, documents, or data are provided.
   - Verify if ALL NECESSARY external contents are provided. If ANYTHING is missing, request clarification.
   Example: If the user asks you to evaluate a response based on a given article but forgets to provide it, you should request the missing information.
   If the Preliminary Check fails, IGNORE the following steps and politely ask for clarification. Use "START:" to begin the final listing.

1. Identify Core Elements:
   - Determine the main subject, action, and context of the query. Focus on the query's intent, but not the task itself (e.g., put words like "name/list" as an action).
   - Ensure the necessary content is available if the action involves processing external content.
   - DECOMPOSE AS THOROUGHLY AS YOU CAN. EACH ELEMENT MUST BE A SINGLE OBJECT, NOT MULTIPLE. Do not overanalyze the query; if the query is simple, then it would not have many constraints.

2. Decompose into Constraints:
   a) Essential Components Extraction:
      - Identify all explicit conditions, requirements, or limitations in the query.
      - Map each to one of the following components: Location, Time, Subject, Action, Qualifiers, Quantity.
      - Treat each condition as a separate constraint.
   b) Constraint Prioritization and Formulation:
      - For each constraint, assess its importance:
        - Mandatory: Critical elements that must be addressed. Include all Location, Time, Subject, Action.
        - Important: Elements that should be addressed if possible. Include all Qualifiers, Quantity.
        - Optional: Elements that can be addressed if convenient. Include all others.
      - Formulate constraints for each component, specifying the priority, using the template:
        "[Priority Level]: [Component] must/should [condition]"

At the end, provide the list of constraints a response should cover, grouped by priority levels ONLY. Use "START:" to begin the final listing.
YOU MUST ONLY LIST THE FINAL CONSTRAINTS AT THE END, AFTER START. NOTHING ELSE."""


def build_mapping_prompt(query_text: str) -> str:
    """Prefix + query + suffix, exactly as the decomposition template prescribes."""
    if not query_text.strip():
        raise DomainError("query text must be non-empty")
    return f"{MAPPING_PROMPT_PREFIX}{query_text}{MAPPING_PROMPT_SUFFIX}"


@dataclass(frozen=True)
class MappingOutcome:
    """A parsed constraint set together with the raw model text and parse notes."""

    constraint_set: ConstraintSet
    raw_text: str
    parse_notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "query_id": self.constraint_set.query_id,
            "constraint_set": self.constraint_set.to_dict(),
            "raw_text": self.raw_text,
            "parse_notes": list(self.parse_notes),
        }


_TIER_BY_LABEL = {
    "mandatory": Tier.MANDATORY,
    "important": Tier.IMPORTANT,
    "optional": Tier.OPTIONAL,
}

# Labels models commonly substitute for the three tier names. An entry using
# one of these is a broken listing, not a clarification request.
_PRIORITY_LIKE_LABELS = {
    "critical",
    "essential",
    "required",
    "must",
    "should",
    "high",
    "medium",
    "low",
    "priority",
    "desirable",
    "nice",
}

_ENTRY_RE = re.compile(r"^\s*(?:[-*•]\s*|\d+[.)]\s*)?\[?([A-Za-z]+)\]?\s*:\s*(.+?)\s*$")

_CATEGORY_KEYWORDS: tuple[tuple[Category, tuple[str, ...]], ...] = (
    (Category.LOCATION, ("location", "locations")),
    (Category.TIME, ("time", "times", "timeframe", "date", "dates", "period")),
    (Category.SUBJECT, ("subject", "subjects")),
    (Category.ACTION, ("action", "actions")),
    (Category.QUALIFIER, ("qualifier", "qualifiers")),
    (Category.QUANTITY, ("quantity", "quantities", "number", "count")),
)


def infer_category(text: str) -> Category:
    """Keyword-based category inference with an Other fallback.

    The component name usually leads the templated constraint text, so a
    leading keyword wins over one buried later in the sentence.
    """
    lowered = text.lower()
    for category, keywords in _CATEGORY_KEYWORDS:
        for keyword in keywords:
            if lowered.startswith(keyword):
                return category
    for category, keywords in _CATEGORY_KEYWORDS:
        for keyword in keywords:
            if re.search(rf"\b{keyword}\b", lowered):
                return category
    return Category.OTHER


def parse_mapping_output(raw: str, query_id: str = "query") -> MappingOutcome:
    """Parse everything after the final "START:" marker into a constraint set.

    Tier-tagged lines become constraints; a block with no tier-tagged lines is
    a clarification request (sufficient=false). Declared tiers that contradict
    the inferred category are normalized to the category's tier, with a note.
    """
    notes: list[str] = []
    occurrences = raw.count(START_MARKER)
    if occurrences == 0:
        raise MalformedOutput("no START: marker in mapping output")
    if occurrences > 1:
        notes.append(f"{occurrences} START: markers; using the last one")
    block = raw[raw.rfind(START_MARKER) + len(START_MARKER):].strip()
    if not block:
        raise MalformedOutput("nothing follows the START: marker")

    entries: list[tuple[Tier, str]] = []
    labeled_unknown: list[str] = []
    prose: list[str] = []
    for line in block.splitlines():
        if not line.strip():
            continue
        match = _ENTRY_RE.match(line)
        if match:
            label = match.group(1).lower()
            if label in _TIER_BY_LABEL:
                entries.append((_TIER_BY_LABEL[label], match.group(2)))
                continue
            if label in _PRIORITY_LIKE_LABELS:
                labeled_unknown.append(match.group(1))
                continue
        prose.append(line.strip())

    if labeled_unknown:
        raise UnknownTier(f"unrecognized priority labels: {labeled_unknown}")
    if not entries:
        # No listing at all: the model asked for clarification.
        return MappingOutcome(
            constraint_set=ConstraintSet.insufficient(query_id, block),
            raw_text=raw,
            parse_notes=tuple(notes),
        )
    if prose:
        notes.append(f"ignored {len(prose)} non-entry line(s) after the marker")

    constraints: list[IntentConstraint] = []
    for n, (declared_tier, text) in enumerate(entries, start=1):
        category = infer_category(text)
        tier = TIER_FOR_CATEGORY[category]
        if tier is not declared_tier:
            notes.append(
                f"normalized tier of entry {n} from {declared_tier.value} to "
                f"{tier.value} (category {category.value})"
            )
        constraints.append(
            IntentConstraint(id=f"{query_id}-c{n}", text=text, tier=tier, category=category)
        )
    return MappingOutcome(
        constraint_set=ConstraintSet.from_constraints(query_id, constraints),
        raw_text=raw,
        parse_notes=tuple(notes),
    )


def count_by_category(cs: ConstraintSet) -> dict[Category, int]:
    """Per-category constraint counts (all seven categories, zero-filled)."""
    if not cs.sufficient:
        raise DomainError("cannot count categories of an insufficient set")
    counts = {category: 0 for category in Category}
    for constraint in cs.all_constraints():
        counts[constraint.category] += 1
    return counts


class ConstraintMapper:
    """Runs the decomposition prompt through the gateway and parses the result."""

    def __init__(
        self,
        gateway: Gateway,
        model_name: str,
        temperature: float = DEFAULT_TEMPERATURE,
        max_output: int = DEFAULT_MAX_OUTPUT,
        consistency_runs: int = 1,
    ):
        if consistency_runs not in (1, 2):
            raise DomainError("consistency_runs must be 1 or 2")
        self.gateway = gateway
        self.model_name = model_name
        self.temperature = temperature
        self.max_output = max_output
        self.consistency_runs = consistency_runs

    def _request(self, query_text: str) -> CompletionRequest:
        return CompletionRequest(
            model_name=self.model_name,
            user_text=build_mapping_prompt(query_text),
            temperature=self.temperature,
            max_output=self.max_output,
        )

    def decompose(self, query_text: str, query_id: str = "query") -> MappingOutcome:
        """Map one query to its constraint set, re-asking once on malformed output."""
        req = self._request(query_text)
        next_index = 0

        def attempt(note: str | None) -> MappingOutcome:
            nonlocal next_index
            result = self.gateway.complete(req, sample_index=next_index)
            next_index += 1
            outcome = parse_mapping_output(result.text, query_id=query_id)
            if note:
                outcome = MappingOutcome(
                    constraint_set=outcome.constraint_set,
                    raw_text=outcome.raw_text,
                    parse_notes=(note,) + outcome.parse_notes,
                )
            return outcome

        try:
            outcome = attempt(None)
        except MalformedOutput as first_error:
            try:
                outcome = attempt(f"re-asked after malformed output: {first_error}")
            except MalformedOutput as second_error:
                raise MappingFailed(
                    f"mapping failed twice for {query_id!r}: {second_error}"
                ) from second_error

        if self.consistency_runs == 2 and outcome.constraint_set.sufficient:
            second = attempt(None)
            if not self._tier_counts_match(outcome, second):
                raise MappingFailed(
                    f"consistency check failed for {query_id!r}: tier counts differ"
                )
        return outcome

    @staticmethod
    def _tier_counts_match(a: MappingOutcome, b: MappingOutcome) -> bool:
        if a.constraint_set.sufficient != b.constraint_set.sufficient:
            return False
        ca, cb = a.constraint_set, b.constraint_set
        return (
            len(ca.mandatory) == len(cb.mandatory)
            and len(ca.important) == len(cb.important)
            and len(ca.optional) == len(cb.optional)
        )
