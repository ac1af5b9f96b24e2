from __future__ import annotations

import dataclasses
from pathlib import Path

import pytest

from intenteval.benchgen import write_tasks
from intenteval.gateway import Gateway, RecordBackend, ReplayBackend
from intenteval.runner import EvalRunner, RunConfig

from scripted import (
    JUDGE_MODEL,
    MODELS_UNDER_TEST,
    ScriptedModelBackend,
    build_demo_corpus,
    write_knowledge_snapshot,
)


@dataclasses.dataclass(frozen=True)
class DemoEnv:
    """Session-wide replay environment: corpus, fixtures, and a primed ledger digest."""

    root: Path
    fixtures: Path
    corpus: Path
    knowledge: Path
    config: RunConfig
    prime_digest: str

    def replay_gateway(self, max_in_flight: int = 4) -> Gateway:
        return Gateway(ReplayBackend(self.fixtures), max_in_flight)


@pytest.fixture()
def scripted_gateway() -> Gateway:
    """Gateway straight onto the scripted model, no fixture files involved."""
    return Gateway(ScriptedModelBackend())


@pytest.fixture(scope="session")
def demo_env(tmp_path_factory) -> DemoEnv:
    root = tmp_path_factory.mktemp("demo")
    fixtures = root / "fixtures"
    corpus = root / "tasks.jsonl"
    knowledge = root / "knowledge"
    write_knowledge_snapshot(knowledge)

    record = Gateway(RecordBackend(ScriptedModelBackend(), fixtures))
    write_tasks(corpus, build_demo_corpus(record))
    config = RunConfig(
        corpus_path=str(corpus),
        models_under_test=MODELS_UNDER_TEST,
        judge_model=JUDGE_MODEL,
        parallelism=2,
        knowledge_path=str(knowledge),
    )
    ledger = EvalRunner(config, record).run(root / "ledger-prime")
    return DemoEnv(
        root=root,
        fixtures=fixtures,
        corpus=corpus,
        knowledge=knowledge,
        config=config,
        prime_digest=ledger.digest(),
    )
