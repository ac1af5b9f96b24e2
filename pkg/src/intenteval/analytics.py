"""Statistical validation machinery.

Deviation-from-human summaries, Gaussian KDE with Silverman bandwidth, paired
t-tests across tasks, Pearson/Spearman correlations, weight-ablation
recomputation from stored labels, and violated-category distributions over a
run ledger. Everything here is a pure computation; no model calls.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .core import (
    Category,
    ConstraintSet,
    SatisfactionLabel,
    WeightConfig,
    constraint_score,
    satisfied_weight,
    total_weight,
)
from .errors import (
    ConstantVector,
    DegenerateData,
    DomainError,
    EmptyInput,
    EmptyLedger,
    LengthMismatch,
)
from .ledger import (
    BASELINE_FILE,
    MAPPINGS_FILE,
    RESPONSES_FILE,
    SCORES_FILE,
    TASKS_FILE,
    RunLedger,
)

KDE_GRID_POINTS = 512
KDE_GRID_SPAN_BANDWIDTHS = 5.0


# ---------------------------------------------------------------------------
# Deviation from human scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeviationSummary:
    """Mean deviation, mean squared error, and one-SD coverage of metric-human gaps."""

    mean_dev: float
    mse: float
    within_one_sd: float
    n: int


def deviation_stats(
    metric_scores: Sequence[float], human_scores: Sequence[float]
) -> DeviationSummary:
    """Summarize per-item deviations metric minus human.

    ``within_one_sd`` is the fraction of deviations within one sample standard
    deviation of their mean; defined as 1 when the deviations are constant.
    """
    if len(metric_scores) != len(human_scores):
        raise LengthMismatch(
            f"{len(metric_scores)} metric scores vs {len(human_scores)} human scores"
        )
    if len(metric_scores) < 2:
        raise EmptyInput("need at least two score pairs")
    deviations = np.asarray(metric_scores, dtype=float) - np.asarray(human_scores, dtype=float)
    mean_dev = float(deviations.mean())
    mse = float((deviations**2).mean())
    sd = float(deviations.std(ddof=1))
    if sd == 0.0:
        within = 1.0
    else:
        within = float((np.abs(deviations - mean_dev) <= sd).mean())
    return DeviationSummary(mean_dev=mean_dev, mse=mse, within_one_sd=within, n=len(deviations))


# ---------------------------------------------------------------------------
# Kernel density estimation
# ---------------------------------------------------------------------------

def silverman_bandwidth(data: Sequence[float]) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5), guarding against a zero IQR."""
    xs = np.asarray(data, dtype=float)
    if xs.size < 2:
        raise EmptyInput("need at least two points for a bandwidth")
    sd = float(xs.std(ddof=1))
    if sd == 0.0:
        raise DegenerateData(float(xs[0]))
    q75, q25 = np.percentile(xs, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * xs.size ** (-0.2)


def default_grid(
    data: Sequence[float],
    bandwidth: float,
    points: int = KDE_GRID_POINTS,
    span: float = KDE_GRID_SPAN_BANDWIDTHS,
) -> list[float]:
    """Evaluation grid spanning the data range plus ``span`` bandwidths each side."""
    xs = np.asarray(data, dtype=float)
    low = float(xs.min()) - span * bandwidth
    high = float(xs.max()) + span * bandwidth
    return np.linspace(low, high, points).tolist()


def kde(
    deviations: Sequence[float],
    bandwidth: float | None = None,
    grid: Sequence[float] | None = None,
) -> list[tuple[float, float]]:
    """Gaussian-kernel density estimate at each grid point.

    Bandwidth defaults to Silverman's rule; the grid defaults to the data
    range widened by five bandwidths, over which the density integrates to
    one up to quadrature error. Identical data raise DegenerateData, whose
    ``spike_at`` attribute carries the point-mass location.
    """
    xs = np.asarray(deviations, dtype=float)
    if xs.size < 2:
        raise EmptyInput("need at least two points for a density estimate")
    if np.all(xs == xs[0]):
        raise DegenerateData(float(xs[0]))
    if bandwidth is None:
        bandwidth = silverman_bandwidth(xs)
    if bandwidth <= 0:
        raise DomainError("bandwidth must be positive")
    if grid is None:
        grid = default_grid(xs, bandwidth)
    points = np.asarray(grid, dtype=float)
    z = (points[:, None] - xs[None, :]) / bandwidth
    densities = np.exp(-0.5 * z**2).sum(axis=1) / (xs.size * bandwidth * math.sqrt(2 * math.pi))
    return list(zip(points.tolist(), densities.tolist()))


# ---------------------------------------------------------------------------
# Paired t-test and correlations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TTestResult:
    """Paired t-test over per-task differences.

    ``zero_variance`` flags identical difference vectors, for which t is
    undefined (reported as NaN).
    """

    mean_diff: float
    sd_diff: float
    t: float
    df: int
    p_two_tailed: float
    zero_variance: bool = False


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-tailed paired t-test with df = n - 1."""
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} paired values")
    if len(a) < 2:
        raise EmptyInput("need at least two pairs")
    diffs = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    n = diffs.size
    mean_diff = float(diffs.mean())
    sd_diff = float(diffs.std(ddof=1))
    df = n - 1
    if sd_diff == 0.0:
        return TTestResult(
            mean_diff=mean_diff,
            sd_diff=0.0,
            t=float("nan"),
            df=df,
            p_two_tailed=float("nan"),
            zero_variance=True,
        )
    t = mean_diff / (sd_diff / math.sqrt(n))
    p = 2.0 * float(scipy_stats.t.sf(abs(t), df))
    return TTestResult(mean_diff=mean_diff, sd_diff=sd_diff, t=t, df=df, p_two_tailed=p)


class CorrelationKind(str, Enum):
    PEARSON = "Pearson"
    SPEARMAN = "Spearman"


def correlation(
    a: Sequence[float], b: Sequence[float], kind: CorrelationKind = CorrelationKind.PEARSON
) -> float:
    """Product-moment or rank correlation; Spearman averages tied ranks."""
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} values")
    if len(a) < 3:
        raise EmptyInput("need at least three pairs")
    xs = np.asarray(a, dtype=float)
    ys = np.asarray(b, dtype=float)
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise ConstantVector("correlation is undefined for a constant vector")
    if kind is CorrelationKind.PEARSON:
        return float(scipy_stats.pearsonr(xs, ys).statistic)
    return float(scipy_stats.spearmanr(xs, ys).statistic)


# ---------------------------------------------------------------------------
# Weight ablation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRecord:
    """Stored labels for one scored response plus its human score.

    Holding the labels lets every weight configuration be re-scored without a
    single model call.
    """

    constraint_set: ConstraintSet
    labels: tuple[SatisfactionLabel, ...]
    human_score: float


@dataclass(frozen=True)
class AblationRow:
    weights: WeightConfig
    pearson: float
    spearman: float


def weight_ablation(
    records: Sequence[AblationRecord], configs: Sequence[WeightConfig]
) -> list[AblationRow]:
    """Correlation with human scores for each weight configuration."""
    if not records:
        raise EmptyInput("no ablation records")
    human = [r.human_score for r in records]
    rows = []
    for config in configs:
        rescored = [
            float(
                constraint_score(
                    satisfied_weight(r.constraint_set, r.labels, config),
                    total_weight(r.constraint_set, config),
                )
            )
            for r in records
        ]
        rows.append(
            AblationRow(
                weights=config,
                pearson=correlation(rescored, human, CorrelationKind.PEARSON),
                spearman=correlation(rescored, human, CorrelationKind.SPEARMAN),
            )
        )
    return rows


def ablation_records_from_ledger(
    ledger: RunLedger, human_scores: Mapping[str, float]
) -> list[AblationRecord]:
    """Join stored score labels with a response_id -> human score mapping."""
    mappings = {r["query_id"]: r for r in ledger.records(MAPPINGS_FILE)}
    records = []
    for score in ledger.records(SCORES_FILE):
        response_id = score["response_id"]
        if response_id not in human_scores:
            continue
        mapping = mappings[score["query_id"]]
        records.append(
            AblationRecord(
                constraint_set=ConstraintSet.from_dict(mapping["constraint_set"]),
                labels=tuple(SatisfactionLabel.from_dict(l) for l in score["labels"]),
                human_score=float(human_scores[response_id]),
            )
        )
    if not records:
        raise EmptyLedger("no scored responses matched the human score file")
    return records


# ---------------------------------------------------------------------------
# Violation distribution and model-pair t-tests over a ledger
# ---------------------------------------------------------------------------

def violation_distribution(ledger: RunLedger) -> dict[str, dict[Category, float]]:
    """Per-(scenario, category) fraction of responses violating that category.

    A response can violate several categories, so rows do not sum to one.
    """
    scores = ledger.records(SCORES_FILE)
    if not scores:
        raise EmptyLedger("no score records in ledger")
    tasks = {r["id"]: r for r in ledger.records(TASKS_FILE)}
    mappings = {r["query_id"]: r for r in ledger.records(MAPPINGS_FILE)}

    totals: dict[str, int] = {}
    violated: dict[str, dict[Category, int]] = {}
    for score in scores:
        family = tasks[score["query_id"]]["family"]
        categories_by_id = {
            c["id"]: Category(c["category"])
            for tier in ("mandatory", "important", "optional")
            for c in mappings[score["query_id"]]["constraint_set"][tier]
        }
        totals[family] = totals.get(family, 0) + 1
        counts = violated.setdefault(family, {c: 0 for c in Category})
        hit = set()
        for label in score["labels"]:
            if not label["satisfied"]:
                hit.add(categories_by_id[label["constraint_id"]])
        for category in hit:
            counts[category] += 1
    return {
        family: {c: violated[family][c] / totals[family] for c in Category}
        for family in sorted(totals)
    }


def model_family_means(ledger: RunLedger, metric: str = "cs") -> dict[str, dict[str, float]]:
    """Per-model, per-family mean of the chosen metric (cs, perfect, or baseline)."""
    if metric not in ("cs", "perfect", "baseline"):
        raise DomainError(f"unknown metric {metric!r}")
    tasks = {r["id"]: r for r in ledger.records(TASKS_FILE)}
    scores = {r["response_id"]: r for r in ledger.records(SCORES_FILE)}
    baselines = {r["response_id"]: r for r in ledger.records(BASELINE_FILE)}
    sums: dict[str, dict[str, list[float]]] = {}
    for response in ledger.records(RESPONSES_FILE):
        if response["status"] != "ok":
            continue
        response_id = response["response_id"]
        family = tasks[response["task_id"]]["family"]
        if metric == "baseline":
            if response_id not in baselines:
                continue
            value = float(baselines[response_id]["score"])
        else:
            if response_id not in scores:
                continue
            record = scores[response_id]
            value = float(record["perfect"]) if metric == "perfect" else float(Fraction(record["score"]))
        sums.setdefault(response["model"], {}).setdefault(family, []).append(value)
    return {
        model: {family: sum(vals) / len(vals) for family, vals in families.items()}
        for model, families in sums.items()
    }


@dataclass(frozen=True)
class PairTTestRow:
    pair: str
    metric: str
    result: TTestResult


def model_pair_ttests(ledger: RunLedger, metrics: Sequence[str] = ("perfect", "cs")) -> list[PairTTestRow]:
    """Paired t-tests between all model pairs over shared per-family means."""
    rows: list[PairTTestRow] = []
    for metric in metrics:
        means = model_family_means(ledger, metric)
        models = sorted(means)
        if len(models) < 2:
            raise EmptyLedger("need at least two models for pair tests")
        for left, right in combinations(models, 2):
            families = sorted(set(means[left]) & set(means[right]))
            if len(families) < 2:
                raise EmptyLedger(f"models {left} and {right} share too few families")
            a = [means[left][f] for f in families]
            b = [means[right][f] for f in families]
            rows.append(
                PairTTestRow(pair=f"{left} vs {right}", metric=metric, result=paired_ttest(a, b))
            )
    return rows


# ---------------------------------------------------------------------------
# Analysis directory writers (plot-ready CSV/JSON, no plotting engine)
# ---------------------------------------------------------------------------

def write_deviation_json(path: str | Path, summaries: Mapping[str, DeviationSummary]) -> None:
    payload = {
        name: {
            "mean_dev": s.mean_dev,
            "mse": s.mse,
            "within_one_sd": s.within_one_sd,
            "n": s.n,
        }
        for name, s in summaries.items()
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_kde_csv(path: str | Path, points: Sequence[tuple[float, float]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["point", "density"])
    for point, density in points:
        writer.writerow([f"{point:.6f}", f"{density:.6f}"])
    Path(path).write_text(buffer.getvalue(), encoding="utf-8")


def write_ttests_csv(path: str | Path, rows: Sequence[PairTTestRow]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["pair", "metric", "mean_diff", "sd", "t", "df", "p"])
    for row in rows:
        r = row.result
        writer.writerow(
            [
                row.pair,
                row.metric,
                f"{r.mean_diff:.4f}",
                f"{r.sd_diff:.4f}",
                "nan" if r.zero_variance else f"{r.t:.4f}",
                r.df,
                "nan" if r.zero_variance else f"{r.p_two_tailed:.6f}",
            ]
        )
    Path(path).write_text(buffer.getvalue(), encoding="utf-8")


def write_ablation_csv(path: str | Path, rows: Sequence[AblationRow]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["weights", "pearson", "spearman"])
    for row in rows:
        writer.writerow([row.weights.label(), f"{row.pearson:.4f}", f"{row.spearman:.4f}"])
    Path(path).write_text(buffer.getvalue(), encoding="utf-8")


def write_violations_csv(path: str | Path, rates: Mapping[str, Mapping[Category, float]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["scenario", "category", "rate"])
    for scenario in sorted(rates):
        for category in Category:
            writer.writerow([scenario, category.value, f"{rates[scenario][category]:.4f}"])
    Path(path).write_text(buffer.getvalue(), encoding="utf-8")
