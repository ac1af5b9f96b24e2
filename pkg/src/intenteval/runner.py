"""Batch evaluation runner.

Runs model-under-test generation over a task corpus, then mapping, scoring,
baseline judging, and (for fact QA) fact checking. Items are isolated: a
stage failure marks the item failed without aborting the run. Ledger writes
happen in deterministic submission order, so an interrupted-and-resumed run
produces the same bytes as an uninterrupted one.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .benchgen import TaskFamily, TaskRecord, Topic, read_tasks
from .core import ConstraintSet, DEFAULT_WEIGHTS, Difficulty, WeightConfig
from .errors import CellTooSmall, DomainError, ResumeConflict
from .factcheck import FactChecker, FactVerdict, LocalSnapshotClient
from .gateway import CompletionRequest, Gateway
from .ledger import (
    BASELINE_FILE,
    FACTCHECK_FILE,
    MAPPINGS_FILE,
    RESPONSES_FILE,
    SCORES_FILE,
    TASKS_FILE,
    RunLedger,
)
from .mapping import ConstraintMapper, MappingOutcome
from .scoring import BaselineVerdict, ConstraintScorer, serialize_score_record

logger = logging.getLogger(__name__)

DEFAULT_STAGE_TEMPERATURES: Mapping[str, float] = {
    "generate": 0.3,
    "map": 0.3,
    "judge": 0.3,
    "baseline": 0.3,
    "factcheck": 0.3,
}

GENERATION_MAX_OUTPUT = 2048


@dataclass(frozen=True)
class RunConfig:
    """Configuration for one batch run."""

    corpus_path: str
    models_under_test: tuple[str, ...]
    judge_model: str
    weights: WeightConfig = DEFAULT_WEIGHTS
    temperatures: Mapping[str, float] = field(default_factory=dict)
    sample_size: int | None = None
    seed: int = 0
    parallelism: int = 1
    knowledge_path: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "models_under_test", tuple(self.models_under_test))
        merged = dict(DEFAULT_STAGE_TEMPERATURES)
        merged.update(self.temperatures)
        object.__setattr__(self, "temperatures", merged)
        if not self.models_under_test:
            raise DomainError("at least one model under test is required")
        if not self.judge_model:
            raise DomainError("a judge model is required")
        if self.parallelism < 1:
            raise DomainError("parallelism must be at least 1")
        if self.sample_size is not None and self.sample_size < 1:
            raise DomainError("sample_size must be positive when set")

    def to_config_dict(self) -> dict:
        return {
            "corpus_path": self.corpus_path,
            "models_under_test": list(self.models_under_test),
            "judge_model": self.judge_model,
            "weights": [
                str(self.weights.alpha_mandatory),
                str(self.weights.alpha_important),
                str(self.weights.alpha_optional),
            ],
            "temperatures": dict(sorted(self.temperatures.items())),
            "sample_size": self.sample_size,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "knowledge_path": self.knowledge_path,
        }

    def config_digest(self) -> str:
        # Parallelism affects throughput, never results; keep it out of the digest.
        payload = {k: v for k, v in self.to_config_dict().items() if k != "parallelism"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def to_manifest(self) -> dict:
        config = {k: v for k, v in self.to_config_dict().items() if k != "parallelism"}
        return {
            "config": config,
            "config_digest": self.config_digest(),
            "seed": self.seed,
        }

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base_dir: str | Path | None = None) -> RunConfig:
        """Build a config from the flat key=value file the CLI reads."""
        base = Path(base_dir) if base_dir else Path(".")

        def resolve(key: str) -> str | None:
            raw = values.get(key)
            if raw is None:
                return None
            path = Path(raw)
            return str(path if path.is_absolute() else base / path)

        corpus = resolve("corpus")
        if corpus is None:
            raise DomainError("config is missing the corpus path")
        models = tuple(m.strip() for m in values.get("models", "").split(",") if m.strip())
        weights = values.get("weights")
        temperatures = {
            stage: float(values[f"temperature_{stage}"])
            for stage in DEFAULT_STAGE_TEMPERATURES
            if f"temperature_{stage}" in values
        }
        return cls(
            corpus_path=corpus,
            models_under_test=models,
            judge_model=values.get("judge_model", ""),
            weights=parse_weights(weights) if weights else DEFAULT_WEIGHTS,
            temperatures=temperatures,
            sample_size=int(values["sample_size"]) if values.get("sample_size") else None,
            seed=int(values.get("seed", "0")),
            parallelism=int(values.get("parallelism", "1")),
            knowledge_path=resolve("knowledge"),
        )


def parse_weights(text: str) -> WeightConfig:
    """Parse "m,i,o" decimal triples, e.g. "3,2,1" or "2,1.5,1"."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise DomainError(f"weights must be three comma-separated values, got {text!r}")
    return WeightConfig(Fraction(parts[0]), Fraction(parts[1]), Fraction(parts[2]))


@dataclass(frozen=True)
class AggregateRow:
    """One aggregation cell in the run report."""

    model: str
    family: str
    topic: str
    difficulty: str
    n: int
    perfect: Fraction
    mean_cs: Fraction
    fact: Fraction | None

    def __post_init__(self) -> None:
        if self.n <= 0:
            raise DomainError("aggregate rows require n > 0")
        if not 0 <= self.perfect <= 1:
            raise DomainError("perfect rate must lie in [0, 1]")
        if not 0 <= self.mean_cs <= 10:
            raise DomainError("mean constraint score must lie in [0, 10]")


def sample_cell(
    corpus: Sequence[TaskRecord],
    family: TaskFamily,
    topic: Topic,
    difficulty: Difficulty,
    k: int,
    seed: int,
) -> list[TaskRecord]:
    """Seeded uniform sample without replacement from one corpus cell."""
    cell = [
        t
        for t in corpus
        if t.family is family and t.topic is topic and t.difficulty is difficulty
    ]
    if k > len(cell):
        raise CellTooSmall(
            f"cell ({family.value}, {topic.value}, {difficulty.value}) has "
            f"{len(cell)} tasks, need {k}"
        )
    token = f"{seed}|{family.value}|{topic.value}|{difficulty.value}"
    rng = random.Random(int(hashlib.sha256(token.encode()).hexdigest()[:16], 16))
    indexes = sorted(rng.sample(range(len(cell)), k))
    return [cell[i] for i in indexes]


@dataclass
class ItemResult:
    """Everything one (task, model) item produced, committed in one batch."""

    task: TaskRecord
    model: str
    response_id: str
    response_text: str | None = None
    request_digest: str | None = None
    mapping: MappingOutcome | None = None
    score_record: dict | None = None
    baseline: BaselineVerdict | None = None
    fact: FactVerdict | None = None
    failed_stage: str | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.failed_stage is not None


class EvalRunner:
    """Orchestrates the full pipeline over a corpus with a single ledger writer."""

    def __init__(self, config: RunConfig, gateway: Gateway):
        self.config = config
        self.gateway = gateway
        t = config.temperatures
        self.mapper = ConstraintMapper(gateway, config.judge_model, temperature=t["map"])
        self.scorer = ConstraintScorer(gateway, config.judge_model, temperature=t["judge"])
        self.baseline_scorer = ConstraintScorer(
            gateway, config.judge_model, temperature=t["baseline"]
        )
        knowledge = (
            LocalSnapshotClient(config.knowledge_path) if config.knowledge_path else None
        )
        self.factchecker = FactChecker(
            gateway, config.judge_model, knowledge=knowledge, temperature=t["factcheck"]
        )
        self._mappings: dict[str, MappingOutcome | Exception] = {}
        self._map_lock = threading.Lock()

    # -- pipeline stages ------------------------------------------------------

    def _mapping_for(self, task: TaskRecord) -> MappingOutcome:
        with self._map_lock:
            entry = self._mappings.get(task.id)
            if entry is None:
                try:
                    entry = self.mapper.decompose(task.prompt_text, query_id=task.id)
                except Exception as exc:
                    entry = exc
                self._mappings[task.id] = entry
        if isinstance(entry, Exception):
            raise entry
        return entry

    def _process_item(self, task: TaskRecord, model: str) -> ItemResult:
        result = ItemResult(task=task, model=model, response_id=f"{task.id}__{model}")
        stage = "response"
        try:
            completion = self.gateway.complete(
                CompletionRequest(
                    model_name=model,
                    user_text=task.prompt_text,
                    temperature=self.config.temperatures["generate"],
                    max_output=GENERATION_MAX_OUTPUT,
                )
            )
            result.response_text = completion.text
            result.request_digest = completion.request_digest

            stage = "mapping"
            result.mapping = self._mapping_for(task)

            stage = "score"
            cs = result.mapping.constraint_set
            if not cs.sufficient:
                raise DomainError("mapping flagged insufficient input; response cannot be scored")
            report = self.scorer.score_response(
                cs,
                task.prompt_text,
                result.response_text,
                w=self.config.weights,
                response_id=result.response_id,
            )
            result.score_record = serialize_score_record(report, cs, self.config.judge_model)

            stage = "baseline"
            result.baseline = self.baseline_scorer.baseline_judge(
                task.prompt_text, result.response_text
            )

            if task.family is TaskFamily.FACT_QA:
                stage = "factcheck"
                result.fact = self.factchecker.check_response(
                    task.prompt_text, result.response_text, result.response_id
                )
        except Exception as exc:
            result.failed_stage = stage
            result.error = f"{type(exc).__name__}: {exc}"
        return result

    # -- ledger bookkeeping -----------------------------------------------------

    @staticmethod
    def _recover(ledger: RunLedger) -> None:
        """Drop records of items whose commit was interrupted mid-flush.

        The response record is the last write of each item's commit, so any
        stage record without a matching response record is an orphan.
        """
        responses = ledger.records(RESPONSES_FILE)
        committed_tasks = {r["task_id"] for r in responses}
        committed_responses = {r["response_id"] for r in responses}
        keep = {
            MAPPINGS_FILE: lambda r: r["query_id"] in committed_tasks,
            SCORES_FILE: lambda r: r["response_id"] in committed_responses,
            BASELINE_FILE: lambda r: r["response_id"] in committed_responses,
            FACTCHECK_FILE: lambda r: r["response_id"] in committed_responses,
            TASKS_FILE: lambda r: True,
            RESPONSES_FILE: lambda r: True,
        }
        for filename, predicate in keep.items():
            records = [r for r in ledger.records(filename) if predicate(r)]
            rendered = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
            path = ledger.root / filename
            current = path.read_text(encoding="utf-8") if path.exists() else ""
            if records and rendered != current:
                ledger.rewrite(filename, records)
            elif not records and current:
                ledger.rewrite(filename, [])
        ledger.sync_seq()

    def _sample(self, corpus: Sequence[TaskRecord]) -> list[TaskRecord]:
        if self.config.sample_size is None:
            return list(corpus)
        cells = sorted(
            {(t.family, t.topic, t.difficulty) for t in corpus},
            key=lambda c: (c[0].value, c[1].value, c[2].value),
        )
        sampled: list[TaskRecord] = []
        for family, topic, difficulty in cells:
            sampled.extend(
                sample_cell(corpus, family, topic, difficulty, self.config.sample_size, self.config.seed)
            )
        return sampled

    @staticmethod
    def _ensure_tasks(ledger: RunLedger, sampled: Sequence[TaskRecord]) -> None:
        existing = ledger.records(TASKS_FILE)
        expected_ids = [t.id for t in sampled]
        existing_ids = [r["id"] for r in existing]
        if existing_ids != expected_ids[: len(existing_ids)]:
            raise ResumeConflict("ledger task list does not match the sampled corpus")
        for task in sampled[len(existing_ids):]:
            ledger.append(TASKS_FILE, task.to_dict())

    def _commit(self, ledger: RunLedger, result: ItemResult, mapped_tasks: set[str]) -> None:
        if result.mapping is not None and result.task.id not in mapped_tasks:
            ledger.append(MAPPINGS_FILE, result.mapping.to_dict())
            mapped_tasks.add(result.task.id)
        if result.score_record is not None:
            ledger.append(SCORES_FILE, result.score_record)
        if result.baseline is not None:
            ledger.append(
                BASELINE_FILE,
                {
                    "query_id": result.task.id,
                    "response_id": result.response_id,
                    "judge_model": self.config.judge_model,
                    **result.baseline.to_dict(),
                },
            )
        if result.fact is not None:
            ledger.append(
                FACTCHECK_FILE,
                {
                    "query_id": result.task.id,
                    "judge_model": self.config.judge_model,
                    **result.fact.to_dict(),
                },
            )
        response_record = {
            "task_id": result.task.id,
            "model": result.model,
            "response_id": result.response_id,
            "text": result.response_text,
            "request_digest": result.request_digest,
            "status": "failed" if result.failed else "ok",
        }
        if result.failed:
            response_record["failed_stage"] = result.failed_stage
            response_record["error"] = result.error
        ledger.append(RESPONSES_FILE, response_record)

    # -- entry point --------------------------------------------------------------

    def run(
        self,
        ledger_root: str | Path,
        on_item_committed: Callable[[ItemResult], None] | None = None,
    ) -> RunLedger:
        """Process every sampled (task, model) item, then seal the ledger.

        Re-invoking against an unsealed ledger resumes after the last fully
        committed item; re-invoking against a sealed one raises ResumeConflict.
        """
        ledger = RunLedger.create_or_resume(ledger_root, self.config.to_manifest())
        self._recover(ledger)
        corpus = read_tasks(self.config.corpus_path)
        sampled = self._sample(corpus)
        self._ensure_tasks(ledger, sampled)

        for record in ledger.records(MAPPINGS_FILE):
            outcome = MappingOutcome(
                constraint_set=ConstraintSet.from_dict(record["constraint_set"]),
                raw_text=record["raw_text"],
                parse_notes=tuple(record.get("parse_notes", [])),
            )
            self._mappings[record["query_id"]] = outcome
        mapped_tasks = set(self._mappings)
        committed = {
            (r["task_id"], r["model"]) for r in ledger.records(RESPONSES_FILE)
        }

        items = [
            (task, model)
            for task in sampled
            for model in self.config.models_under_test
            if (task.id, model) not in committed
        ]
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            for result in pool.map(lambda item: self._process_item(*item), items):
                self._commit(ledger, result, mapped_tasks)
                if on_item_committed is not None:
                    on_item_committed(result)

        rows = aggregate(ledger, allow_partial=True)
        ledger.write_aggregates(render_aggregates_csv(rows))
        ledger.seal()
        return ledger


def failed_items(ledger: RunLedger) -> list[dict]:
    """Response records of items that failed at some stage."""
    return [r for r in ledger.records(RESPONSES_FILE) if r.get("status") == "failed"]


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

GROUP_DIMENSIONS = ("model", "family", "topic", "difficulty")


def _record_factually_clean(fact_record: Mapping) -> bool:
    return (
        fact_record.get("screen_verdict") == "Clean"
        or fact_record.get("retrieval_verdict") == "Supported"
    )


def aggregate(
    ledger: RunLedger,
    group_by: Sequence[str] = GROUP_DIMENSIONS,
    allow_partial: bool = False,
) -> list[AggregateRow]:
    """Perfect rate and mean constraint score per group; fact rate for fact QA.

    Failed items never enter the denominators. Groups with no scored items
    are skipped with a log note.
    """
    if not ledger.sealed and not allow_partial:
        raise DomainError("ledger is not sealed; pass allow_partial to aggregate anyway")
    unknown = [d for d in group_by if d not in GROUP_DIMENSIONS]
    if unknown:
        raise DomainError(f"unknown grouping dimensions: {unknown}")

    tasks = {r["id"]: r for r in ledger.records(TASKS_FILE)}
    scores = {r["response_id"]: r for r in ledger.records(SCORES_FILE)}
    facts = {r["response_id"]: r for r in ledger.records(FACTCHECK_FILE)}

    groups: dict[tuple, list[dict]] = {}
    for response in ledger.records(RESPONSES_FILE):
        task = tasks[response["task_id"]]
        dims = {
            "model": response["model"],
            "family": task["family"],
            "topic": task["topic"],
            "difficulty": task["difficulty"],
        }
        key = tuple(dims[d] if d in group_by else "all" for d in GROUP_DIMENSIONS)
        groups.setdefault(key, []).append(response)

    rows: list[AggregateRow] = []
    for key in sorted(groups):
        bucket = groups[key]
        scored = [r for r in bucket if r["status"] == "ok" and r["response_id"] in scores]
        if not scored:
            logger.warning("group %s has no scored items; skipped", key)
            continue
        cs_values = [Fraction(scores[r["response_id"]]["score"]) for r in scored]
        n = len(scored)
        perfect = Fraction(
            sum(1 for r in scored if scores[r["response_id"]]["perfect"]), n
        )
        mean_cs = sum(cs_values, Fraction(0)) / n

        fact: Fraction | None = None
        model, family, topic, difficulty = key
        if family == TaskFamily.FACT_QA.value:
            hallucinated = [
                r for r in scored if not scores[r["response_id"]]["perfect"]
            ]
            verdicts = [
                facts[r["response_id"]]
                for r in hallucinated
                if r["response_id"] in facts
            ]
            if verdicts:
                fact = Fraction(
                    sum(1 for v in verdicts if _record_factually_clean(v)), len(verdicts)
                )
        rows.append(
            AggregateRow(
                model=model,
                family=family,
                topic=topic,
                difficulty=difficulty,
                n=n,
                perfect=perfect,
                mean_cs=mean_cs,
                fact=fact,
            )
        )
    return rows


def render_aggregates_csv(rows: Sequence[AggregateRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["model", "family", "topic", "difficulty", "n", "perfect", "mean_cs", "fact"])
    for row in rows:
        writer.writerow(
            [
                row.model,
                row.family,
                row.topic,
                row.difficulty,
                row.n,
                f"{float(row.perfect):.4f}",
                f"{float(row.mean_cs):.4f}",
                f"{float(row.fact):.4f}" if row.fact is not None else "",
            ]
        )
    return buffer.getvalue()
