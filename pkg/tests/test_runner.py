from __future__ import annotations

import json
from fractions import Fraction

import pytest

from intenteval.benchgen import TaskFamily, Topic, read_tasks
from intenteval.core import Difficulty, WeightConfig
from intenteval.errors import CellTooSmall, DomainError, ResumeConflict
from intenteval.ledger import (
    AGGREGATES_FILE,
    MANIFEST_FILE,
    RESPONSES_FILE,
    SCORES_FILE,
    STAGE_FILES,
    RunLedger,
)
from intenteval.runner import (
    AggregateRow,
    EvalRunner,
    RunConfig,
    aggregate,
    failed_items,
    parse_weights,
    render_aggregates_csv,
    sample_cell,
)


def make_runner(env, parallelism: int = 2) -> EvalRunner:
    config = RunConfig(
        corpus_path=env.config.corpus_path,
        models_under_test=env.config.models_under_test,
        judge_model=env.config.judge_model,
        parallelism=parallelism,
        knowledge_path=env.config.knowledge_path,
    )
    return EvalRunner(config, env.replay_gateway())


# ---------------------------------------------------------------------------
# RunConfig
# ---------------------------------------------------------------------------

def test_run_config_validation():
    with pytest.raises(DomainError):
        RunConfig(corpus_path="x", models_under_test=(), judge_model="j")
    with pytest.raises(DomainError):
        RunConfig(corpus_path="x", models_under_test=("m",), judge_model="")
    with pytest.raises(DomainError):
        RunConfig(corpus_path="x", models_under_test=("m",), judge_model="j", parallelism=0)
    with pytest.raises(DomainError):
        RunConfig(corpus_path="x", models_under_test=("m",), judge_model="j", sample_size=0)


def test_run_config_merges_default_temperatures():
    config = RunConfig(
        corpus_path="x",
        models_under_test=("m",),
        judge_model="j",
        temperatures={"judge": 0.0},
    )
    assert config.temperatures["judge"] == 0.0
    assert config.temperatures["generate"] == 0.3


def test_run_config_from_mapping(tmp_path):
    values = {
        "corpus": "tasks.jsonl",
        "models": "alpha-large, alpha-mini",
        "judge_model": "judge-x",
        "weights": "2,1.5,1",
        "sample_size": "4",
        "seed": "7",
        "parallelism": "3",
        "temperature_judge": "0.0",
    }
    config = RunConfig.from_mapping(values, base_dir=tmp_path)
    assert config.corpus_path == str(tmp_path / "tasks.jsonl")
    assert config.models_under_test == ("alpha-large", "alpha-mini")
    assert config.weights.alpha_important == Fraction(3, 2)
    assert config.sample_size == 4
    assert config.seed == 7
    assert config.parallelism == 3
    assert config.temperatures["judge"] == 0.0


def test_config_digest_ignores_parallelism_only():
    base = dict(corpus_path="x", models_under_test=("m",), judge_model="j")
    a = RunConfig(**base, parallelism=1)
    b = RunConfig(**base, parallelism=8)
    c = RunConfig(**base, seed=5)
    assert a.config_digest() == b.config_digest()
    assert a.config_digest() != c.config_digest()
    assert "parallelism" not in a.to_manifest()["config"]


def test_parse_weights():
    w = parse_weights("2,1.5,1")
    assert w == WeightConfig("2", "1.5", "1")
    with pytest.raises(DomainError):
        parse_weights("3,2")


# ---------------------------------------------------------------------------
# sample_cell
# ---------------------------------------------------------------------------

def test_sample_cell_behaviour(demo_env):
    corpus = read_tasks(demo_env.corpus)
    cell_args = (TaskFamily.CREATIVE_STORY, Topic.TECH, Difficulty.EASY)
    full = sample_cell(corpus, *cell_args, k=1, seed=0)
    assert len(full) == 1
    again = sample_cell(corpus, *cell_args, k=1, seed=0)
    assert full == again
    with pytest.raises(CellTooSmall):
        sample_cell(corpus, *cell_args, k=5, seed=0)


def test_sample_cell_draws_distinct_ids():
    from factories import make_set  # noqa: F401  (import keeps test deps local)
    from intenteval.benchgen import BenchGenerator, load_default_pool

    generator = BenchGenerator()
    pool = load_default_pool()
    corpus = [
        generator.gen_creative(TaskFamily.CREATIVE_POEM, pool, 3, seed=s, topic=Topic.TECH)
        for s in range(30)
    ]
    sampled = sample_cell(corpus, TaskFamily.CREATIVE_POEM, Topic.TECH, Difficulty.EASY, 10, seed=3)
    assert len({t.id for t in sampled}) == 10


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------

def test_run_produces_a_sealed_deterministic_ledger(demo_env, tmp_path):
    ledger = make_runner(demo_env).run(tmp_path / "ledger")
    assert ledger.sealed
    assert ledger.digest() == demo_env.prime_digest
    for name in STAGE_FILES + (MANIFEST_FILE, AGGREGATES_FILE):
        assert (ledger.root / name).exists(), name
    assert len(ledger.records("tasks.jsonl")) == 24
    assert len(ledger.records(RESPONSES_FILE)) == 48


def test_rerunning_a_sealed_ledger_is_a_conflict(demo_env, tmp_path):
    runner = make_runner(demo_env)
    runner.run(tmp_path / "ledger")
    with pytest.raises(ResumeConflict):
        runner.run(tmp_path / "ledger")


def test_parallelism_does_not_change_the_ledger_bytes(demo_env, tmp_path):
    serial = make_runner(demo_env, parallelism=1).run(tmp_path / "serial")
    wide = make_runner(demo_env, parallelism=4).run(tmp_path / "wide")
    assert serial.digest() == wide.digest() == demo_env.prime_digest


def test_designed_insufficient_task_fails_in_isolation(demo_env, tmp_path):
    ledger = make_runner(demo_env).run(tmp_path / "ledger")
    failures = failed_items(ledger)
    assert failures, "the marker task should fail at the scoring stage"
    assert {f["failed_stage"] for f in failures} == {"score"}
    assert all("insufficient" in f["error"] for f in failures)
    # Failed items still have response text recorded; the run completed.
    assert all(f["text"] for f in failures)
    ok = [r for r in ledger.records(RESPONSES_FILE) if r["status"] == "ok"]
    assert len(ok) + len(failures) == 48


def test_resume_after_interruption_matches_uninterrupted(demo_env, tmp_path):
    class Abort(RuntimeError):
        pass

    committed = 0

    def abort_after_five(result):
        nonlocal committed
        committed += 1
        if committed >= 5:
            raise Abort()

    runner = make_runner(demo_env)
    with pytest.raises(Abort):
        runner.run(tmp_path / "ledger", on_item_committed=abort_after_five)
    partial = RunLedger.open(tmp_path / "ledger")
    assert not partial.sealed
    assert len(partial.records(RESPONSES_FILE)) == 5

    resumed = make_runner(demo_env).run(tmp_path / "ledger")
    assert resumed.sealed
    assert resumed.digest() == demo_env.prime_digest
    ids = [r["response_id"] for r in resumed.records(RESPONSES_FILE)]
    assert len(ids) == len(set(ids)) == 48


def test_orphan_stage_records_are_compacted_on_resume(demo_env, tmp_path):
    class Abort(RuntimeError):
        pass

    runner = make_runner(demo_env)
    with pytest.raises(Abort):
        runner.run(
            tmp_path / "ledger",
            on_item_committed=lambda _: (_ for _ in ()).throw(Abort()),
        )
    # Simulate a crash that flushed a score record but not its response record.
    ledger = RunLedger.open(tmp_path / "ledger")
    orphan = dict(ledger.records(SCORES_FILE)[0])
    orphan["response_id"] = "never-committed"
    ledger.append(SCORES_FILE, orphan)
    # A torn trailing line from the same crash.
    with open(tmp_path / "ledger" / RESPONSES_FILE, "a", encoding="utf-8") as handle:
        handle.write('{"task_id": "torn')

    resumed = make_runner(demo_env).run(tmp_path / "ledger")
    assert resumed.digest() == demo_env.prime_digest
    assert all(r["response_id"] != "never-committed" for r in resumed.records(SCORES_FILE))


def test_resume_with_a_different_config_is_a_conflict(demo_env, tmp_path):
    class Abort(RuntimeError):
        pass

    runner = make_runner(demo_env)
    with pytest.raises(Abort):
        runner.run(
            tmp_path / "ledger",
            on_item_committed=lambda _: (_ for _ in ()).throw(Abort()),
        )
    other = RunConfig(
        corpus_path=demo_env.config.corpus_path,
        models_under_test=demo_env.config.models_under_test,
        judge_model=demo_env.config.judge_model,
        seed=99,
        knowledge_path=demo_env.config.knowledge_path,
    )
    with pytest.raises(ResumeConflict):
        EvalRunner(other, demo_env.replay_gateway()).run(tmp_path / "ledger")


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sealed_ledger(demo_env, tmp_path_factory) -> RunLedger:
    root = tmp_path_factory.mktemp("agg")
    return make_runner(demo_env).run(root / "ledger")


def test_aggregate_rows_are_sorted_and_bounded(sealed_ledger):
    before = {
        name: (sealed_ledger.root / name).read_bytes() for name in STAGE_FILES
    }
    rows = aggregate(sealed_ledger)
    assert rows
    keys = [(r.model, r.family, r.topic, r.difficulty) for r in rows]
    assert keys == sorted(keys)
    for row in rows:
        assert row.n > 0
        assert 0 <= row.perfect <= 1
        assert 0 <= row.mean_cs <= 10
        assert row.mean_cs >= 10 * row.perfect
    # Aggregation reads; it never mutates stage records.
    assert aggregate(sealed_ledger) == rows
    for name, payload in before.items():
        assert (sealed_ledger.root / name).read_bytes() == payload


def test_aggregate_fact_only_for_fact_qa(sealed_ledger):
    rows = aggregate(sealed_ledger)
    for row in rows:
        if row.family != TaskFamily.FACT_QA.value:
            assert row.fact is None
        if row.fact is not None:
            assert 0 <= row.fact <= 1


def test_aggregate_hand_check_from_records(sealed_ledger):
    # Recompute one group by hand from the raw ledger records.
    rows = aggregate(sealed_ledger, group_by=("model", "family"))
    scores = {r["response_id"]: r for r in sealed_ledger.records(SCORES_FILE)}
    tasks = {t["id"]: t for t in sealed_ledger.records("tasks.jsonl")}
    target = rows[0]
    members = [
        r
        for r in sealed_ledger.records(RESPONSES_FILE)
        if r["status"] == "ok"
        and r["model"] == target.model
        and tasks[r["task_id"]]["family"] == target.family
    ]
    values = [Fraction(scores[m["response_id"]]["score"]) for m in members]
    assert target.n == len(members)
    assert target.mean_cs == sum(values, Fraction(0)) / len(values)
    assert target.perfect == Fraction(
        sum(1 for m in members if scores[m["response_id"]]["perfect"]), len(members)
    )


def test_aggregate_requires_sealed_or_explicit_partial(demo_env, tmp_path):
    class Abort(RuntimeError):
        pass

    runner = make_runner(demo_env)
    with pytest.raises(Abort):
        runner.run(
            tmp_path / "ledger",
            on_item_committed=lambda _: (_ for _ in ()).throw(Abort()),
        )
    partial = RunLedger.open(tmp_path / "ledger")
    with pytest.raises(DomainError):
        aggregate(partial)
    assert aggregate(partial, allow_partial=True)


def test_aggregates_csv_has_exact_columns(sealed_ledger):
    text = (sealed_ledger.root / AGGREGATES_FILE).read_text(encoding="utf-8")
    header = text.splitlines()[0]
    assert header == "model,family,topic,difficulty,n,perfect,mean_cs,fact"
    assert text == render_aggregates_csv(aggregate(sealed_ledger))


def test_aggregate_row_validation():
    with pytest.raises(DomainError):
        AggregateRow(
            model="m", family="f", topic="t", difficulty="d",
            n=0, perfect=Fraction(0), mean_cs=Fraction(0), fact=None,
        )
    with pytest.raises(DomainError):
        AggregateRow(
            model="m", family="f", topic="t", difficulty="d",
            n=1, perfect=Fraction(2), mean_cs=Fraction(0), fact=None,
        )


def test_manifest_records_config_and_seal(sealed_ledger):
    manifest = json.loads((sealed_ledger.root / MANIFEST_FILE).read_text(encoding="utf-8"))
    assert manifest["sealed"] is True
    assert manifest["config"]["judge_model"] == "judge-x"
    assert manifest["config_digest"]


def test_empty_corpus_yields_a_sealed_empty_ledger(demo_env, tmp_path):
    corpus = tmp_path / "empty.jsonl"
    corpus.write_text("", encoding="utf-8")
    config = RunConfig(
        corpus_path=str(corpus),
        models_under_test=("alpha-large",),
        judge_model="judge-x",
    )
    ledger = EvalRunner(config, demo_env.replay_gateway()).run(tmp_path / "ledger")
    assert ledger.sealed
    assert ledger.records(RESPONSES_FILE) == []
    assert ledger.records("tasks.jsonl") == []
    header = (ledger.root / AGGREGATES_FILE).read_text(encoding="utf-8").splitlines()
    assert header == ["model,family,topic,difficulty,n,perfect,mean_cs,fact"]


def test_run_with_per_cell_sampling(demo_env, tmp_path):
    # Every demo cell holds exactly one task, so sampling one per cell
    # reproduces the whole corpus.
    config = RunConfig(
        corpus_path=demo_env.config.corpus_path,
        models_under_test=demo_env.config.models_under_test,
        judge_model=demo_env.config.judge_model,
        sample_size=1,
        knowledge_path=demo_env.config.knowledge_path,
    )
    ledger = EvalRunner(config, demo_env.replay_gateway()).run(tmp_path / "ledger")
    assert len(ledger.records(RESPONSES_FILE)) == 48


def test_aggregate_hand_oracle_group(tmp_path):
    # Four responses scoring [10, 10, 8, 6] in one group: perfect 0.5, mean 8.5.
    # With tiers m=2, i=2 the total weight is 10, so dropping one or two
    # important constraints lands exactly on 8 and 6.
    from intenteval.core import build_score_report
    from intenteval.ledger import MAPPINGS_FILE, TASKS_FILE
    from intenteval.scoring import serialize_score_record
    from factories import label_by_flags, make_set

    ledger = RunLedger.create_or_resume(tmp_path / "l", {"config_digest": "hand", "seed": 0})
    cs = make_set(2, 2, 0, query_id="q2")
    ledger.append(
        TASKS_FILE, {"id": "q2", "family": "CreativePoem", "topic": "Tech", "difficulty": "Easy"}
    )
    ledger.append(
        MAPPINGS_FILE,
        {"query_id": "q2", "constraint_set": cs.to_dict(), "raw_text": "", "parse_notes": []},
    )
    score_rows = [
        [True, True, True, True],    # 10/10 -> 10
        [True, True, True, True],    # 10
        [True, True, True, False],   # 8/10 -> 8
        [True, True, False, False],  # 6/10 -> 6
    ]
    for n, flags in enumerate(score_rows):
        response_id = f"q2__m{n}"
        report = build_score_report(cs, label_by_flags(cs, flags), response_id=response_id)
        ledger.append(SCORES_FILE, serialize_score_record(report, cs, "judge"))
        ledger.append(
            RESPONSES_FILE,
            {"task_id": "q2", "model": "m", "response_id": response_id, "status": "ok"},
        )
    ledger.seal()
    rows = aggregate(ledger, group_by=("model", "family"))
    assert len(rows) == 1
    assert rows[0].n == 4
    assert rows[0].perfect == Fraction(1, 2)
    assert rows[0].mean_cs == Fraction(17, 2)


def test_aggregate_collapses_unlisted_dimensions(sealed_ledger):
    rows = aggregate(sealed_ledger, group_by=("model",))
    assert {r.model for r in rows} == {"alpha-large", "alpha-mini"}
    assert all(r.family == "all" and r.topic == "all" and r.difficulty == "all" for r in rows)
    with pytest.raises(DomainError):
        aggregate(sealed_ledger, group_by=("nonsense",))


def test_empty_groups_are_skipped_with_a_note(demo_env, tmp_path, caplog):
    import logging

    with caplog.at_level(logging.WARNING, logger="intenteval.runner"):
        make_runner(demo_env).run(tmp_path / "ledger")
    assert any("no scored items" in message for message in caplog.messages)
