"""Command-line entry point for every pipeline stage.

Exit codes: 0 on success, 1 when a run completed but some items failed, 2 on
configuration errors, unknown commands, or invalid flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .analytics import (
    ablation_records_from_ledger,
    deviation_stats,
    kde,
    model_pair_ttests,
    violation_distribution,
    weight_ablation,
    write_ablation_csv,
    write_deviation_json,
    write_kde_csv,
    write_ttests_csv,
    write_violations_csv,
)
from .benchgen import (
    BenchGenerator,
    TaskFamily,
    Topic,
    load_articles,
    load_concepts,
    load_default_concepts,
    load_default_pool,
    load_pool,
    read_tasks,
    write_tasks,
)
from .core import DEFAULT_WEIGHTS, Tier
from .errors import EvalError
from .factcheck import FactChecker, LocalSnapshotClient
from .gateway import gateway_from_flags
from .ledger import (
    BASELINE_FILE,
    FACTCHECK_FILE,
    MAPPINGS_FILE,
    SCORES_FILE,
    RunLedger,
)
from .mapping import ConstraintMapper
from .runner import (
    EvalRunner,
    RunConfig,
    aggregate,
    failed_items,
    parse_weights,
    render_aggregates_csv,
)
from .scoring import ConstraintScorer, serialize_score_record

AD_HOC_MANIFEST = {"config": {"ad_hoc": True}, "config_digest": "ad-hoc", "seed": None}

MISINTERPRETATION_BY_NAME = {
    "responseeval": TaskFamily.RESPONSE_EVAL,
    "relationship": TaskFamily.CONTENT_RELATIONSHIP,
    "summary": TaskFamily.CONTENT_SUMMARY,
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat declarative key = value file; # starts a comment."""
    values: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise EvalError(f"config line is not key = value: {raw!r}")
        values[key.strip()] = value.strip().strip('"')
    return values


def _read_text_arg(args: argparse.Namespace, file_attr: str, inline_attr: str, what: str) -> str:
    inline = getattr(args, inline_attr, None)
    if inline:
        return inline
    path = getattr(args, file_attr, None)
    if not path:
        raise EvalError(f"provide --{what} or --{what}-file")
    return Path(path).read_text(encoding="utf-8").strip()


def _gateway(args: argparse.Namespace):
    return gateway_from_flags(replay_dir=args.replay, record_dir=args.record)


def _ad_hoc_ledger(path: str) -> RunLedger:
    return RunLedger.create_or_resume(path, AD_HOC_MANIFEST)


def _read_human_scores(path: str | Path) -> dict[str, float]:
    scores: dict[str, float] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        scores[record["response_id"]] = float(record["human_score"])
    return scores


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_decompose(args: argparse.Namespace) -> int:
    query = _read_text_arg(args, "query_file", "query", "query")
    mapper = ConstraintMapper(_gateway(args), args.model, temperature=args.temperature)
    outcome = mapper.decompose(query, query_id=args.query_id)
    cs = outcome.constraint_set
    if not cs.sufficient:
        print("sufficient: false")
        print(f"clarification: {cs.clarification}")
    else:
        print("sufficient: true")
        for tier in Tier:
            members = cs.by_tier(tier)
            print(f"{tier.value}: {len(members)}")
            for constraint in members:
                print(f"  - [{constraint.category.value}] {constraint.text}")
    for note in outcome.parse_notes:
        print(f"note: {note}")
    if args.ledger:
        _ad_hoc_ledger(args.ledger).append(MAPPINGS_FILE, outcome.to_dict())
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    query = _read_text_arg(args, "query_file", "query", "query")
    response = Path(args.response_file).read_text(encoding="utf-8").strip()
    gateway = _gateway(args)
    mapper = ConstraintMapper(gateway, args.model, temperature=args.temperature)
    scorer = ConstraintScorer(gateway, args.model, temperature=args.temperature)
    outcome = mapper.decompose(query, query_id=args.query_id)
    cs = outcome.constraint_set
    if not cs.sufficient:
        print(f"error: mapping requested clarification: {cs.clarification}", file=sys.stderr)
        return 1
    weights = parse_weights(args.weights) if args.weights else DEFAULT_WEIGHTS
    report = scorer.score_response(
        cs, query, response, w=weights, response_id=args.response_id, batched=args.batched
    )
    record = serialize_score_record(report, cs, args.model)
    print(json.dumps(record, ensure_ascii=False, indent=2))
    if args.ledger:
        ledger = _ad_hoc_ledger(args.ledger)
        ledger.append(MAPPINGS_FILE, outcome.to_dict())
        ledger.append(SCORES_FILE, record)
    return 0


def cmd_judge(args: argparse.Namespace) -> int:
    query = _read_text_arg(args, "query_file", "query", "query")
    response = Path(args.response_file).read_text(encoding="utf-8").strip()
    scorer = ConstraintScorer(_gateway(args), args.model, temperature=args.temperature)
    verdict = scorer.baseline_judge(query, response)
    record = {"query_id": args.query_id, "response_id": args.response_id, **verdict.to_dict()}
    print(json.dumps(record, ensure_ascii=False, indent=2))
    if args.ledger:
        _ad_hoc_ledger(args.ledger).append(BASELINE_FILE, record)
    return 0


def cmd_factcheck(args: argparse.Namespace) -> int:
    query = _read_text_arg(args, "query_file", "query", "query")
    response = Path(args.response_file).read_text(encoding="utf-8").strip()
    knowledge = LocalSnapshotClient(args.knowledge) if args.knowledge else None
    checker = FactChecker(
        _gateway(args), args.model, knowledge=knowledge, temperature=args.temperature
    )
    verdict = checker.check_response(query, response, args.response_id)
    print(json.dumps(verdict.to_dict(), ensure_ascii=False, indent=2))
    if args.ledger:
        _ad_hoc_ledger(args.ledger).append(FACTCHECK_FILE, verdict.to_dict())
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    tasks = []
    if args.kind == "factqa":
        gateway = _gateway(args)
        mapper = ConstraintMapper(gateway, args.model) if args.validate else None
        generator = BenchGenerator(gateway, args.model, mapper=mapper)
        concepts = (
            load_concepts(args.concepts_file) if args.concepts_file else load_default_concepts()
        )
        if args.topic:
            concepts = [(t, c) for t, c in concepts if t is Topic(args.topic)]
        if not concepts:
            raise EvalError("no concepts available for the requested topic")
        for i in range(args.count):
            topic, concept = concepts[i % len(concepts)]
            tasks.append(
                generator.gen_factqa(
                    concept,
                    topic,
                    target_constraints=args.target_constraints,
                    seed=args.seed + i,
                    validate=args.validate,
                )
            )
    elif args.kind in ("story", "poem"):
        generator = BenchGenerator()
        pool = load_pool(args.pool) if args.pool else load_default_pool()
        family = TaskFamily.CREATIVE_STORY if args.kind == "story" else TaskFamily.CREATIVE_POEM
        for i in range(args.count):
            tasks.append(
                generator.gen_creative(
                    family,
                    pool,
                    n_constraints=args.n_constraints,
                    seed=args.seed + i,
                    topic=Topic(args.topic) if args.topic else Topic.CULTURE,
                )
            )
    elif args.kind == "misinterpretation":
        generator = BenchGenerator()
        if not args.articles:
            raise EvalError("misinterpretation generation needs --articles DIR")
        articles = list(load_articles(args.articles).values())
        family = MISINTERPRETATION_BY_NAME[args.family]
        for i in range(args.count):
            tasks.append(
                generator.gen_misinterpretation(
                    family,
                    articles,
                    topic=Topic(args.topic) if args.topic else Topic.CULTURE,
                    seed=args.seed + i,
                )
            )
    else:  # pragma: no cover - argparse restricts choices
        raise EvalError(f"unknown generation kind {args.kind!r}")

    existing = read_tasks(args.out) if Path(args.out).exists() else []
    write_tasks(args.out, existing + tasks)
    print(f"wrote {len(tasks)} task(s) to {args.out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    values = parse_config_file(args.config)
    config = RunConfig.from_mapping(values, base_dir=Path(args.config).parent)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sample_size is not None:
        overrides["sample_size"] = args.sample_size
    if args.parallelism is not None:
        overrides["parallelism"] = args.parallelism
    if args.judge_model:
        overrides["judge_model"] = args.judge_model
    if args.weights:
        overrides["weights"] = parse_weights(args.weights)
    if overrides:
        base = config.to_config_dict()
        config = RunConfig(
            corpus_path=base["corpus_path"],
            models_under_test=tuple(base["models_under_test"]),
            judge_model=overrides.get("judge_model", base["judge_model"]),
            weights=overrides.get("weights", config.weights),
            temperatures=base["temperatures"],
            sample_size=overrides.get("sample_size", base["sample_size"]),
            seed=overrides.get("seed", base["seed"]),
            parallelism=overrides.get("parallelism", base["parallelism"]),
            knowledge_path=base["knowledge_path"],
        )
    runner = EvalRunner(config, _gateway(args))
    ledger = runner.run(args.ledger)
    failures = failed_items(ledger)
    print(f"run sealed: {ledger.root}")
    print(f"ledger digest: {ledger.digest()}")
    if failures:
        print(f"{len(failures)} item(s) failed; see {RunLedger(args.ledger).root}/responses.jsonl")
        return 1
    return 0


def cmd_aggregate(args: argparse.Namespace) -> int:
    ledger = RunLedger.open(args.ledger)
    group_by = tuple(d.strip() for d in args.group_by.split(",") if d.strip())
    rows = aggregate(ledger, group_by=group_by, allow_partial=args.allow_partial)
    csv_text = render_aggregates_csv(rows)
    ledger.write_aggregates(csv_text)
    print(csv_text, end="")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    ledger = RunLedger.open(args.ledger)
    out = Path(args.out) if args.out else ledger.root / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.ttests:
        write_ttests_csv(out / "ttests.csv", model_pair_ttests(ledger))
        wrote.append("ttests.csv")
    if args.violations:
        write_violations_csv(out / "violations.csv", violation_distribution(ledger))
        wrote.append("violations.csv")
    if args.deviation:
        if not args.human:
            raise EvalError("--deviation needs --human FILE with human scores")
        human = _read_human_scores(args.human)
        scores = {
            r["response_id"]: float(Fraction(r["score"])) for r in ledger.records(SCORES_FILE)
        }
        baselines = {
            r["response_id"]: float(r["score"]) for r in ledger.records(BASELINE_FILE)
        }
        shared = sorted(set(human) & set(scores) & set(baselines))
        if not shared:
            raise EvalError("no responses shared between ledger and human score file")
        metric = [scores[rid] for rid in shared]
        base = [baselines[rid] for rid in shared]
        gold = [human[rid] for rid in shared]
        summaries = {
            "constraint_score": deviation_stats(metric, gold),
            "baseline": deviation_stats(base, gold),
        }
        write_deviation_json(out / "deviation.json", summaries)
        wrote.append("deviation.json")
        deviations = [m - h for m, h in zip(metric, gold)]
        if len(set(deviations)) > 1:
            write_kde_csv(out / "kde.csv", kde(deviations))
            wrote.append("kde.csv")
    if not wrote:
        raise EvalError("nothing to analyze: pass --ttests, --violations, or --deviation")
    print(f"wrote {', '.join(wrote)} to {out}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    ledger = RunLedger.open(args.ledger)
    human = _read_human_scores(args.human)
    records = ablation_records_from_ledger(ledger, human)
    configs = [parse_weights(chunk) for chunk in args.configs.split(";") if chunk.strip()]
    if not configs:
        raise EvalError("no weight configurations given")
    rows = weight_ablation(records, configs)
    out = Path(args.out) if args.out else ledger.root / "analysis" / "ablation.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(out, rows)
    for row in rows:
        print(f"{row.weights.label()}: pearson={row.pearson:.4f} spearman={row.spearman:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_gateway_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--replay", metavar="DIR", help="serve model calls from this fixture directory")
    parser.add_argument("--record", metavar="DIR", help="record live model calls into this fixture directory")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, help="model name for this stage")
    parser.add_argument("--temperature", type=float, default=0.3)
    parser.add_argument("--ledger", help="optionally append records to this ledger directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intenteval",
        description="Intent-constraint evaluation: decompose queries, judge satisfaction, "
        "score responses, synthesize benchmark tasks, and analyze runs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="map a query to tiered intent constraints")
    p.add_argument("--query-file")
    p.add_argument("--query")
    p.add_argument("--query-id", default="query")
    _add_model_flags(p)
    _add_gateway_flags(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("score", help="decompose a query and score a response against it")
    p.add_argument("--query-file")
    p.add_argument("--query")
    p.add_argument("--response-file", required=True)
    p.add_argument("--query-id", default="query")
    p.add_argument("--response-id", default="response")
    p.add_argument("--weights", metavar="M,I,O")
    p.add_argument("--batched", action="store_true", help="one tier-ratio call instead of per-constraint verdicts")
    _add_model_flags(p)
    _add_gateway_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("judge", help="run the holistic 1-10 judge baseline")
    p.add_argument("--query-file")
    p.add_argument("--query")
    p.add_argument("--response-file", required=True)
    p.add_argument("--query-id", default="query")
    p.add_argument("--response-id", default="response")
    _add_model_flags(p)
    _add_gateway_flags(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("factcheck", help="screen a response and verify flagged claims")
    p.add_argument("--query-file")
    p.add_argument("--query")
    p.add_argument("--response-file", required=True)
    p.add_argument("--response-id", default="response")
    p.add_argument("--knowledge", metavar="DIR", help="local article snapshot directory")
    _add_model_flags(p)
    _add_gateway_flags(p)
    p.set_defaults(func=cmd_factcheck)

    p = sub.add_parser("generate", help="synthesize benchmark tasks")
    p.add_argument("--kind", required=True, choices=["factqa", "story", "poem", "misinterpretation"])
    p.add_argument("--out", required=True, help="tasks.jsonl to append to")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topic", choices=[t.value for t in Topic])
    p.add_argument("--model", default="", help="generation model (fact QA only)")
    p.add_argument("--validate", action="store_true", help="judge answerability and difficulty band")
    p.add_argument("--concepts-file", help="Topic|concept lines (fact QA)")
    p.add_argument("--target-constraints", type=int, default=3, help="conditions per fact QA query")
    p.add_argument("--pool", help="Category|text constraint pool file (creative)")
    p.add_argument("--n-constraints", type=int, default=3, help="pool constraints per creative task")
    p.add_argument("--articles", help="article directory (misinterpretation)")
    p.add_argument(
        "--family",
        choices=sorted(MISINTERPRETATION_BY_NAME),
        default="relationship",
        help="misinterpretation family",
    )
    _add_gateway_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run the full pipeline over a task corpus")
    p.add_argument("--config", required=True, help="key = value run configuration file")
    p.add_argument("--ledger", required=True, help="ledger directory to create or resume")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--judge-model")
    p.add_argument("--weights", metavar="M,I,O")
    _add_gateway_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("aggregate", help="recompute aggregates.csv from a ledger")
    p.add_argument("--ledger", required=True)
    p.add_argument("--group-by", default="model,family,topic,difficulty")
    p.add_argument("--allow-partial", action="store_true")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("analyze", help="statistical analyses over a sealed ledger")
    p.add_argument("--ledger", required=True)
    p.add_argument("--out", help="analysis output directory (default LEDGER/analysis)")
    p.add_argument("--ttests", action="store_true", help="paired t-tests between all model pairs")
    p.add_argument("--violations", action="store_true", help="violated-category distribution")
    p.add_argument("--deviation", action="store_true", help="deviation stats and KDE vs human scores")
    p.add_argument("--human", help="JSONL of {response_id, human_score}")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="recompute scores under alternative weight configurations")
    p.add_argument("--ledger", required=True)
    p.add_argument("--human", required=True, help="JSONL of {response_id, human_score}")
    p.add_argument("--configs", default="3,2,1;1,1,1;5,2,1;2,1.5,1;1,2,3")
    p.add_argument("--out", help="ablation.csv path (default LEDGER/analysis/ablation.csv)")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
