"""Per-constraint satisfaction judging and the holistic 1-10 judge baseline.

The per-constraint judge issues one verdict per constraint and assembles a
:class:`~intenteval.core.ScoreReport` through the exact scoring arithmetic; a
batched mode asks for one tier-ratio listing per response instead, trading
per-constraint attribution for a single call.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .core import (
    Category,
    ConstraintSet,
    DEFAULT_WEIGHTS,
    IntentConstraint,
    SatisfactionLabel,
    ScoreReport,
    Tier,
    WeightConfig,
    build_score_report,
)
from .errors import DomainError, LabelMismatch, UnparseableVerdict
from .gateway import (
    DEFAULT_MAX_OUTPUT,
    DEFAULT_TEMPERATURE,
    CompletionRequest,
    Gateway,
)

SATISFACTION_PROMPT = """Given a query and a response, evaluate if the response addresses all constraints derived from the query.

QUERY: {query}
CONSTRAINTS:
{constraints}
RESPONSE: {response}

Evaluation Steps:
1. Manual Constraint Evaluation:
   - Evaluate each constraint individually
   - Determine if each constraint is satisfied in the response
2. Verdict:
   - Answer YES if the constraint above is satisfied by the response, NO otherwise.
   - Give the verdict first, then one sentence of rationale."""

STRICT_REMINDER = "\n\nReply with exactly one word first: YES or NO."

BATCH_SATISFACTION_PROMPT = """Given a query and a response, evaluate if the response addresses all constraints derived from the query.

QUERY: {query}
CONSTRAINTS:
{constraints}
RESPONSE: {response}

Evaluation Steps:
1. Manual Constraint Evaluation:
   - Evaluate each constraint individually
   - Determine if each constraint is satisfied in the response
2. Constraint Satisfaction Summary:
   - Group constraints by priority levels
   - Calculate satisfaction ratio for each group
   - Format as "[Priority Level]: X/Y"

Output Format:
- Begin with "START:"
- List satisfaction ratios by priority groups
- No additional content after the listing"""

BASELINE_JUDGE_PROMPT = """Your goal is to evaluate whether a response from a language model fully and accurately satisfies the requirements of a given query. A query can be broken down into smaller, specific requirements called intent constraints, which represent distinct conditions that must be addressed in the response.

Intent constraints can be categorized as:
- Mandatory: must be addressed with the highest priority.
- Important: should be addressed but are slightly less critical.
- Optional: nice to have but not essential.

A response hallucinates the intent of the query when it omits one or more intent constraints, or when it misinterprets the query by addressing concepts or actions that were not asked for.

Query:
{query}

Response:
{response}

On a scale from 1 to 10, to what extent does the response address the query? Consider whether all mandatory constraints are fulfilled, important constraints are reasonably covered, and nothing was invented. Reply with a single integer from 1 to 10 on the first line, then a brief justification."""

_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_RATING_RE = re.compile(r"\b(10|[1-9])\b")
_RATIO_RE = re.compile(r"^\s*\[?(Mandatory|Important|Optional)\]?\s*:\s*(\d+)\s*/\s*(\d+)\s*$", re.IGNORECASE)


def extract_yes_no(text: str) -> bool:
    """First standalone yes/no in the judge output."""
    match = _YES_NO_RE.search(text)
    if not match:
        raise UnparseableVerdict(f"no yes/no verdict in: {text[:120]!r}")
    return match.group(1).lower() == "yes"


def extract_rating(text: str) -> int:
    """First standalone integer in [1, 10] in the judge output."""
    match = _RATING_RE.search(text)
    if not match:
        raise UnparseableVerdict(f"no 1-10 rating in: {text[:120]!r}")
    return int(match.group(1))


@dataclass(frozen=True)
class BaselineVerdict:
    """Agreed holistic rating from the zero-shot judge baseline."""

    score: int
    attempts: int
    raw_texts: tuple[str, ...]

    def __post_init__(self) -> None:
        if not 1 <= self.score <= 10:
            raise DomainError("baseline score must be in [1, 10]")
        if self.attempts < 2:
            raise DomainError("self-consistency requires at least two samples")

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "attempts": self.attempts,
            "raw_texts": list(self.raw_texts),
        }


def _constraint_line(constraint: IntentConstraint) -> str:
    return f"{constraint.tier.value}: {constraint.text}"


def violated_categories(report: ScoreReport, cs: ConstraintSet) -> dict[Category, bool]:
    """Mark each category violated when at least one of its constraints failed.

    A response may violate several categories at once, so the marks are
    independent of each other.
    """
    by_id = {c.id: c for c in cs.all_constraints()}
    if set(by_id) != {label.constraint_id for label in report.labels}:
        raise LabelMismatch("report labels do not match the constraint set")
    marks = {category: False for category in Category}
    for label in report.labels:
        if not label.satisfied:
            marks[by_id[label.constraint_id].category] = True
    return marks


def tier_ratios(report: ScoreReport, cs: ConstraintSet) -> dict[str, str]:
    """Per-tier satisfied/total ratios in "X/Y" form."""
    by_id = {label.constraint_id: label for label in report.labels}
    ratios: dict[str, str] = {}
    for tier in Tier:
        members = cs.by_tier(tier)
        satisfied = sum(1 for c in members if by_id[c.id].satisfied)
        ratios[tier.value] = f"{satisfied}/{len(members)}"
    return ratios


class ConstraintScorer:
    """Judges constraint satisfaction against responses through the gateway."""

    def __init__(
        self,
        gateway: Gateway,
        model_name: str,
        temperature: float = DEFAULT_TEMPERATURE,
        max_output: int = DEFAULT_MAX_OUTPUT,
    ):
        self.gateway = gateway
        self.model_name = model_name
        self.temperature = temperature
        self.max_output = max_output

    def _complete(self, prompt: str, sample_index: int = 0) -> str:
        req = CompletionRequest(
            model_name=self.model_name,
            user_text=prompt,
            temperature=self.temperature,
            max_output=self.max_output,
        )
        return self.gateway.complete(req, sample_index=sample_index).text

    def judge_constraint(
        self,
        constraint: IntentConstraint,
        query_text: str,
        response_text: str,
    ) -> SatisfactionLabel:
        """One binary verdict for one constraint, with a single re-ask."""
        if not response_text.strip():
            raise DomainError("response text must be non-empty")
        prompt = SATISFACTION_PROMPT.format(
            query=query_text,
            constraints=_constraint_line(constraint),
            response=response_text,
        )
        text = self._complete(prompt)
        try:
            satisfied = extract_yes_no(text)
        except UnparseableVerdict:
            text = self._complete(prompt + STRICT_REMINDER)
            satisfied = extract_yes_no(text)
        return SatisfactionLabel(
            constraint_id=constraint.id,
            satisfied=satisfied,
            judge_rationale=text.strip(),
        )

    def score_response(
        self,
        cs: ConstraintSet,
        query_text: str,
        response_text: str,
        w: WeightConfig = DEFAULT_WEIGHTS,
        response_id: str = "",
        batched: bool = False,
    ) -> ScoreReport:
        """Judge every constraint and assemble the weighted report."""
        if not cs.sufficient:
            raise DomainError("cannot score against an insufficient constraint set")
        if batched:
            labels = self._batched_labels(cs, query_text, response_text)
        else:
            labels = [
                self.judge_constraint(constraint, query_text, response_text)
                for constraint in cs.all_constraints()
            ]
        return build_score_report(cs, labels, w, response_id=response_id)

    def _batched_labels(
        self, cs: ConstraintSet, query_text: str, response_text: str
    ) -> list[SatisfactionLabel]:
        """One tier-ratio listing for the whole set.

        Ratios carry no per-constraint attribution, so labels are assigned
        positionally within each tier; the weighted score is unaffected
        because constraints share their tier's weight.
        """
        listing = "\n".join(_constraint_line(c) for c in cs.all_constraints())
        prompt = BATCH_SATISFACTION_PROMPT.format(
            query=query_text, constraints=listing, response=response_text
        )
        text = self._complete(prompt)
        ratios = self._parse_ratios(text)
        labels: list[SatisfactionLabel] = []
        for tier in Tier:
            members = cs.by_tier(tier)
            satisfied_count = ratios.get(tier, (0, len(members)))[0]
            if satisfied_count > len(members):
                raise UnparseableVerdict(
                    f"{tier.value} ratio exceeds constraint count: "
                    f"{satisfied_count}/{len(members)}"
                )
            for position, constraint in enumerate(members):
                labels.append(
                    SatisfactionLabel(
                        constraint_id=constraint.id,
                        satisfied=position < satisfied_count,
                        judge_rationale="tier-ratio mode: positional assignment",
                    )
                )
        return labels

    @staticmethod
    def _parse_ratios(text: str) -> dict[Tier, tuple[int, int]]:
        if "START:" not in text:
            raise UnparseableVerdict("no START: marker in tier-ratio output")
        block = text[text.rfind("START:") + len("START:"):]
        ratios: dict[Tier, tuple[int, int]] = {}
        for line in block.splitlines():
            match = _RATIO_RE.match(line)
            if match:
                tier = Tier(match.group(1).capitalize())
                ratios[tier] = (int(match.group(2)), int(match.group(3)))
        if not ratios:
            raise UnparseableVerdict("no tier ratios in output")
        return ratios

    def baseline_judge(self, query_text: str, response_text: str) -> BaselineVerdict:
        """Zero-shot 1-10 rating with consecutive-agreement self-consistency."""
        if not response_text.strip():
            raise DomainError("response text must be non-empty")
        prompt = BASELINE_JUDGE_PROMPT.format(query=query_text, response=response_text)
        req = CompletionRequest(
            model_name=self.model_name,
            user_text=prompt,
            temperature=self.temperature,
            max_output=self.max_output,
        )
        try:
            agreed = self.gateway.sample_agree(req, extract_rating, k_init=2)
        except UnparseableVerdict:
            strict = CompletionRequest(
                model_name=self.model_name,
                user_text=prompt + "\n\nReply with only the integer on the first line.",
                temperature=self.temperature,
                max_output=self.max_output,
            )
            agreed = self.gateway.sample_agree(strict, extract_rating, k_init=2)
        return BaselineVerdict(
            score=agreed.outcome,
            attempts=agreed.attempts,
            raw_texts=agreed.raw_texts,
        )


def serialize_score_record(
    report: ScoreReport, cs: ConstraintSet, judge_model: str
) -> dict:
    """Ledger record: the report fields plus tier ratios and the judge key."""
    record = report.to_dict()
    record["tier_ratios"] = tier_ratios(report, cs)
    record["judge_model"] = judge_model
    return record
