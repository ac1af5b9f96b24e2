"""Benchmark task synthesis.

Omission tasks (fact QA and creative writing) probe whether models skip query
conditions; misinterpretation tasks are RAG prompts with one content slot
deliberately withheld. All randomness is seeded, so identical inputs produce
identical tasks.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import Category, Difficulty, EASY_MAX_CONSTRAINTS, classify_difficulty
from .errors import (
    DomainError,
    GenerationRejected,
    InsufficientArticles,
    PoolTooSmall,
)
from .gateway import (
    DEFAULT_MAX_OUTPUT,
    DEFAULT_TEMPERATURE,
    CompletionRequest,
    Gateway,
)
from .mapping import ConstraintMapper
from .scoring import extract_yes_no

MIN_POOL_SIZE = 8


class TaskFamily(str, Enum):
    FACT_QA = "FactQA"
    CREATIVE_STORY = "CreativeStory"
    CREATIVE_POEM = "CreativePoem"
    RESPONSE_EVAL = "ResponseEval"
    CONTENT_RELATIONSHIP = "ContentRelationship"
    CONTENT_SUMMARY = "ContentSummary"


class Topic(str, Enum):
    TECH = "Tech"
    CULTURE = "Culture"
    HISTORY = "History"
    HEALTH = "Health"


class SlotStatus(str, Enum):
    PRESENT = "Present"
    MISSING = "Missing"


OMISSION_FAMILIES = frozenset(
    {TaskFamily.FACT_QA, TaskFamily.CREATIVE_STORY, TaskFamily.CREATIVE_POEM}
)
MISINTERPRETATION_FAMILIES = frozenset(
    {TaskFamily.RESPONSE_EVAL, TaskFamily.CONTENT_RELATIONSHIP, TaskFamily.CONTENT_SUMMARY}
)


@dataclass(frozen=True)
class Slot:
    """A named content region of a RAG prompt, present or withheld."""

    name: str
    status: SlotStatus
    content: str | None = None

    def __post_init__(self) -> None:
        if self.status is SlotStatus.PRESENT and not self.content:
            raise DomainError(f"present slot {self.name!r} must carry content")
        if self.status is SlotStatus.MISSING and self.content is not None:
            raise DomainError(f"missing slot {self.name!r} must carry no content")

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status.value, "content": self.content}

    @classmethod
    def from_dict(cls, data: Mapping) -> Slot:
        return cls(
            name=data["name"], status=SlotStatus(data["status"]), content=data.get("content")
        )


@dataclass(frozen=True)
class TaskRecord:
    """One benchmark item."""

    id: str
    family: TaskFamily
    topic: Topic
    difficulty: Difficulty
    prompt_text: str
    slots: tuple[Slot, ...] = ()
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "slots", tuple(self.slots))
        object.__setattr__(self, "provenance", dict(self.provenance))
        if self.family in MISINTERPRETATION_FAMILIES:
            if len(self.slots) < 3:
                raise DomainError("misinterpretation tasks need at least three slots")
            missing = [s for s in self.slots if s.status is SlotStatus.MISSING]
            if len(missing) != 1:
                raise DomainError("misinterpretation tasks withhold exactly one slot")
        elif self.slots:
            raise DomainError("omission tasks carry no slots")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "family": self.family.value,
            "topic": self.topic.value,
            "difficulty": self.difficulty.value,
            "prompt_text": self.prompt_text,
            "slots": [slot.to_dict() for slot in self.slots],
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> TaskRecord:
        return cls(
            id=data["id"],
            family=TaskFamily(data["family"]),
            topic=Topic(data["topic"]),
            difficulty=Difficulty(data["difficulty"]),
            prompt_text=data["prompt_text"],
            slots=tuple(Slot.from_dict(s) for s in data.get("slots", [])),
            provenance=data.get("provenance", {}),
        )


@dataclass(frozen=True)
class PoolEntry:
    text: str
    category: Category


@dataclass(frozen=True)
class ConstraintPool:
    """Reusable creative-writing constraints to sample prompts from."""

    entries: tuple[PoolEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) < MIN_POOL_SIZE:
            raise DomainError(f"constraint pool needs at least {MIN_POOL_SIZE} entries")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ValidationVerdict:
    accepted: bool
    reason: str | None = None


def _parse_tagged_lines(text: str) -> list[tuple[str, str]]:
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tag, _, value = line.partition("|")
        rows.append((tag.strip(), value.strip()))
    return rows


def load_default_pool() -> ConstraintPool:
    """The packaged 40-entry creative constraint pool."""
    text = resources.files("intenteval.data").joinpath("creative_constraints.txt").read_text("utf-8")
    entries = tuple(
        PoolEntry(text=value, category=Category(tag)) for tag, value in _parse_tagged_lines(text)
    )
    return ConstraintPool(entries=entries)


def load_pool(path: str | Path) -> ConstraintPool:
    rows = _parse_tagged_lines(Path(path).read_text(encoding="utf-8"))
    return ConstraintPool(
        entries=tuple(PoolEntry(text=value, category=Category(tag)) for tag, value in rows)
    )


def load_default_concepts() -> list[tuple[Topic, str]]:
    """The packaged desk-scale concept list."""
    text = resources.files("intenteval.data").joinpath("concepts.txt").read_text("utf-8")
    return [(Topic(tag), value) for tag, value in _parse_tagged_lines(text)]


def load_concepts(path: str | Path) -> list[tuple[Topic, str]]:
    rows = _parse_tagged_lines(Path(path).read_text(encoding="utf-8"))
    return [(Topic(tag), value) for tag, value in rows]


def load_articles(directory: str | Path) -> dict[str, str]:
    """Read a local article corpus: title (from file name) to body text."""
    root = Path(directory)
    if not root.is_dir():
        raise DomainError(f"article directory missing: {root}")
    return {
        path.stem.replace("_", " "): path.read_text(encoding="utf-8")
        for path in sorted(root.glob("*.txt"))
    }


def _task_id(family: TaskFamily, topic: Topic, prompt_text: str, seed: int) -> str:
    digest = hashlib.sha256(f"{family.value}|{topic.value}|{seed}|{prompt_text}".encode()).hexdigest()
    return f"{family.value.lower()}-{topic.value.lower()}-{digest[:12]}"


def _difficulty_for(count: int) -> Difficulty:
    return Difficulty.EASY if count <= EASY_MAX_CONSTRAINTS else Difficulty.HARD


FACTQA_GENERATION_PROMPT = """Compose one open-answer question about the concept "{concept}".

Rules:
- The question must ask for a list of subjects that meet all stated criteria.
- It must contain exactly {n} distinct conditions (for example a time window, a place of origin, a quantity, or an exclusion).
- Ask the question directly; do not answer it.
- Output only the question text."""

RESPONSE_EVAL_PROMPT = "How well does the given response answer the given query following the provided article?"
RELATIONSHIP_PROMPT = (
    "For the following three articles, explain how Article 1 contradicts Article 2 "
    "but supports Article 3."
)
SUMMARY_PROMPT = "Summarize the following three articles and compare their main points."

VALIDATION_PROMPT = """You are reviewing a benchmark task before it enters a test set.

Task prompt:
{prompt}

Can this task be answered as specified, and is it internally consistent?
Reply YES or NO on the first line, then one sentence of reasoning."""


class BenchGenerator:
    """Synthesizes benchmark tasks, optionally validating them for answerability."""

    def __init__(
        self,
        gateway: Gateway | None = None,
        model_name: str = "",
        temperature: float = DEFAULT_TEMPERATURE,
        max_output: int = DEFAULT_MAX_OUTPUT,
        mapper: ConstraintMapper | None = None,
    ):
        self.gateway = gateway
        self.model_name = model_name
        self.temperature = temperature
        self.max_output = max_output
        self.mapper = mapper

    def _complete(self, prompt: str, sample_index: int) -> str:
        if self.gateway is None or not self.model_name:
            raise DomainError("this operation needs a gateway and a generation model")
        req = CompletionRequest(
            model_name=self.model_name,
            user_text=prompt,
            temperature=self.temperature,
            max_output=self.max_output,
        )
        return self.gateway.complete(req, sample_index=sample_index).text

    # -- omission -----------------------------------------------------------

    def gen_factqa(
        self,
        concept: str,
        topic: Topic,
        target_constraints: int,
        seed: int,
        validate: bool = False,
    ) -> TaskRecord:
        """Model-generated open-answer listing query with a fixed condition count.

        Well-known concepts should be given small targets; the target is the
        single source of truth for the declared difficulty either way.
        """
        if not concept.strip():
            raise DomainError("concept must be non-empty")
        if target_constraints < 2:
            raise DomainError("target_constraints must be at least 2")
        prompt = FACTQA_GENERATION_PROMPT.format(concept=concept, n=target_constraints)
        rejections: list[str] = []
        for attempt in range(2):
            query_text = self._complete(prompt, sample_index=seed * 2 + attempt).strip()
            task = TaskRecord(
                id=_task_id(TaskFamily.FACT_QA, topic, query_text, seed),
                family=TaskFamily.FACT_QA,
                topic=topic,
                difficulty=_difficulty_for(target_constraints),
                prompt_text=query_text,
                provenance={
                    "concept": concept,
                    "seed": seed,
                    "target_constraints": target_constraints,
                    "generation_attempt": attempt,
                    "human_review": "not_performed",
                },
            )
            if not validate:
                return task
            verdict = self.validate_task(task)
            if verdict.accepted:
                return task
            rejections.append(verdict.reason or "rejected")
        raise GenerationRejected(f"fact QA generation for {concept!r} rejected twice: {rejections}")

    def gen_creative(
        self,
        format: TaskFamily,
        pool: ConstraintPool,
        n_constraints: int,
        seed: int,
        topic: Topic = Topic.CULTURE,
    ) -> TaskRecord:
        """Seeded sample of pool constraints composed into a writing prompt."""
        if format not in (TaskFamily.CREATIVE_STORY, TaskFamily.CREATIVE_POEM):
            raise DomainError("format must be a creative family")
        if n_constraints < 1:
            raise DomainError("n_constraints must be positive")
        if n_constraints > len(pool):
            raise PoolTooSmall(f"asked for {n_constraints} constraints, pool has {len(pool)}")
        rng = random.Random(seed)
        indexes = sorted(rng.sample(range(len(pool)), n_constraints))
        chosen = [pool.entries[i] for i in indexes]
        kind = "story" if format is TaskFamily.CREATIVE_STORY else "poem"
        lines = [f"{i}. {entry.text}" for i, entry in enumerate(chosen, start=1)]
        prompt_text = (
            f"Write a {kind} that satisfies every requirement below.\n"
            "Requirements:\n" + "\n".join(lines)
        )
        return TaskRecord(
            id=_task_id(format, topic, prompt_text, seed),
            family=format,
            topic=topic,
            difficulty=_difficulty_for(n_constraints),
            prompt_text=prompt_text,
            provenance={
                "pool_indexes": indexes,
                "seed": seed,
                "human_review": "not_performed",
            },
        )

    # -- misinterpretation ----------------------------------------------------

    def gen_misinterpretation(
        self,
        family: TaskFamily,
        articles: Sequence[str],
        topic: Topic,
        seed: int,
        difficulty: Difficulty = Difficulty.EASY,
    ) -> TaskRecord:
        """RAG prompt with one slot withheld, chosen uniformly under the seed."""
        if family not in MISINTERPRETATION_FAMILIES:
            raise DomainError(f"{family.value} is not a misinterpretation family")
        if len(articles) < 3:
            raise InsufficientArticles(f"need at least 3 articles, got {len(articles)}")
        rng = random.Random(seed)
        if len(articles) > 3:
            chosen = [articles[i] for i in sorted(rng.sample(range(len(articles)), 3))]
        else:
            chosen = list(articles)
        missing_index = rng.randrange(3)

        if family is TaskFamily.RESPONSE_EVAL:
            slot_names = ("Query", "Article", "Response")
            header = RESPONSE_EVAL_PROMPT
        else:
            slot_names = ("Article 1", "Article 2", "Article 3")
            header = (
                RELATIONSHIP_PROMPT
                if family is TaskFamily.CONTENT_RELATIONSHIP
                else SUMMARY_PROMPT
            )

        slots = tuple(
            Slot(
                name=name,
                status=SlotStatus.MISSING if i == missing_index else SlotStatus.PRESENT,
                content=None if i == missing_index else chosen[i],
            )
            for i, name in enumerate(slot_names)
        )
        sections = [header]
        for slot in slots:
            body = slot.content if slot.status is SlotStatus.PRESENT else ""
            sections.append(f"{slot.name}:{' ' + body if body else ''}")
        prompt_text = "\n\n".join(sections)
        return TaskRecord(
            id=_task_id(family, topic, prompt_text, seed),
            family=family,
            topic=topic,
            difficulty=difficulty,
            prompt_text=prompt_text,
            slots=slots,
            provenance={
                "seed": seed,
                "missing_slot": slot_names[missing_index],
                "human_review": "not_performed",
            },
        )

    # -- validation -----------------------------------------------------------

    def validate_task(self, task: TaskRecord) -> ValidationVerdict:
        """Judge answerability; for omission tasks also check the difficulty band
        against the mapped constraint count."""
        text = self._complete(VALIDATION_PROMPT.format(prompt=task.prompt_text), sample_index=0)
        if not extract_yes_no(text):
            return ValidationVerdict(accepted=False, reason=f"judged unanswerable: {text.strip()[:200]}")
        if task.family in OMISSION_FAMILIES and self.mapper is not None:
            outcome = self.mapper.decompose(task.prompt_text, query_id=task.id)
            if not outcome.constraint_set.sufficient:
                return ValidationVerdict(accepted=False, reason="mapping flagged insufficient input")
            mapped = classify_difficulty(outcome.constraint_set)
            if mapped is not task.difficulty:
                return ValidationVerdict(
                    accepted=False,
                    reason=(
                        f"difficulty mismatch: declared {task.difficulty.value}, "
                        f"mapped {outcome.constraint_set.size} constraints ({mapped.value})"
                    ),
                )
        return ValidationVerdict(accepted=True)


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------

def write_tasks(path: str | Path, tasks: Iterable[TaskRecord]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for task in tasks:
            handle.write(json.dumps(task.to_dict(), ensure_ascii=False) + "\n")


def read_tasks(path: str | Path) -> list[TaskRecord]:
    tasks = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                tasks.append(TaskRecord.from_dict(json.loads(line)))
    return tasks
