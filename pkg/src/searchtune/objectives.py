"""Engagement/conversion objectives: label derivation from interaction logs
and the per-query ranking metrics aggregated into objective values.

Each objective turns raw (impressions, event) counts into per-item rates,
optionally Beta-smoothed, filtered by a minimum impression count. The rate
is the graded label (feeding nDCG); rate >= positive_threshold is the
binary label (feeding precision/recall/mAP).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import StudyError
from .retrieval import RankedList
from .space import MAXIMIZE

EVENTS = ("clicks", "carts", "purchases")
METRIC_KINDS = ("ndcg", "precision", "recall", "map")


@dataclass(frozen=True)
class Interaction:
    impressions: int
    clicks: int
    carts: int
    purchases: int

    def violations(self) -> list[str]:
        errs = []
        if min(self.impressions, self.clicks, self.carts, self.purchases) < 0:
            errs.append("counts must be non-negative")
        if self.clicks > self.impressions:
            errs.append(f"clicks {self.clicks} exceed impressions {self.impressions}")
        if self.carts > self.impressions:
            errs.append(f"carts {self.carts} exceed impressions {self.impressions}")
        if self.purchases > self.impressions:
            errs.append(f"purchases {self.purchases} exceed impressions {self.impressions}")
        return errs

    def event(self, name: str) -> int:
        return getattr(self, name)


class InteractionLog:
    """Per-(query, item) interaction counts."""

    def __init__(self, rows: Mapping[tuple[str, str], Interaction]):
        self.rows = dict(rows)
        for (qid, iid), row in self.rows.items():
            errs = row.violations()
            if errs:
                raise ValueError(f"bad log row ({qid},{iid}): " + "; ".join(errs))

    def __len__(self) -> int:
        return len(self.rows)

    def query_ids(self) -> set[str]:
        return {qid for qid, _ in self.rows}

    @classmethod
    def from_csv(cls, path: str | Path) -> "InteractionLog":
        rows = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            expected = ["query_id", "item_id", "impressions", "clicks", "carts", "purchases"]
            if reader.fieldnames != expected:
                raise ValueError(f"log header must be {expected}, got {reader.fieldnames}")
            for rec in reader:
                rows[(rec["query_id"], rec["item_id"])] = Interaction(
                    impressions=int(rec["impressions"]),
                    clicks=int(rec["clicks"]),
                    carts=int(rec["carts"]),
                    purchases=int(rec["purchases"]),
                )
        return cls(rows)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "item_id", "impressions", "clicks", "carts", "purchases"])
            for (qid, iid) in sorted(self.rows):
                r = self.rows[(qid, iid)]
                writer.writerow([qid, iid, r.impressions, r.clicks, r.carts, r.purchases])


@dataclass(frozen=True)
class Smoothing:
    """Beta-prior additive smoothing: rate = (x + alpha) / (n + alpha + beta)."""

    alpha: float
    beta: float


@dataclass(frozen=True)
class MetricSpec:
    kind: str
    k: int

    @property
    def label(self) -> str:
        return f"{self.kind}@{self.k}"


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    numerator_event: str
    positive_threshold: float
    metrics: tuple[MetricSpec, ...]
    min_impressions: int = 10
    smoothing: Smoothing | None = None
    direction: str = MAXIMIZE

    def violations(self) -> list[str]:
        errs = []
        if self.numerator_event not in EVENTS:
            errs.append(f"{self.name}: numerator_event must be one of {EVENTS}")
        if self.min_impressions < 0:
            errs.append(f"{self.name}: min_impressions must be >= 0")
        if not 0.0 <= self.positive_threshold <= 1.0:
            errs.append(f"{self.name}: positive_threshold must be in [0,1]")
        if self.smoothing is not None and (self.smoothing.alpha <= 0 or self.smoothing.beta <= 0):
            errs.append(f"{self.name}: smoothing alpha and beta must be positive")
        if not self.metrics:
            errs.append(f"{self.name}: at least one metric required")
        for m in self.metrics:
            if m.kind not in METRIC_KINDS:
                errs.append(f"{self.name}: unknown metric kind {m.kind!r}")
            if m.k < 1:
                errs.append(f"{self.name}: metric K must be >= 1")
        return errs


@dataclass(frozen=True)
class Label:
    graded: float
    positive: bool


class LabelSet:
    """Per-query graded and binary labels for one objective."""

    def __init__(self, per_query: Mapping[str, Mapping[str, Label]]):
        self.per_query = {q: dict(items) for q, items in per_query.items()}

    def has_query(self, query_id: str) -> bool:
        return query_id in self.per_query

    def items_for(self, query_id: str) -> Mapping[str, Label]:
        return self.per_query.get(query_id, {})

    def positives(self, query_id: str) -> set[str]:
        return {iid for iid, lab in self.items_for(query_id).items() if lab.positive}

    def query_ids(self) -> list[str]:
        return sorted(self.per_query)

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for qid in self.query_ids():
                items = {
                    iid: {"graded": lab.graded, "positive": lab.positive}
                    for iid, lab in sorted(self.items_for(qid).items())
                }
                fh.write(json.dumps({"query_id": qid, "labels": items}) + "\n")


def derive_labels(log: InteractionLog, spec: ObjectiveSpec) -> LabelSet:
    """Turn interaction counts into labels per the objective's rate rule.

    Rows below min_impressions are dropped; with no smoothing a zero-
    impression row has no defined rate and is dropped as well.
    """
    per_query: dict[str, dict[str, Label]] = {}
    for (qid, iid), row in log.rows.items():
        if row.impressions < spec.min_impressions:
            continue
        num = row.event(spec.numerator_event)
        if spec.smoothing is None:
            if row.impressions == 0:
                continue
            rate = num / row.impressions
        else:
            rate = (num + spec.smoothing.alpha) / (
                row.impressions + spec.smoothing.alpha + spec.smoothing.beta
            )
        per_query.setdefault(qid, {})[iid] = Label(
            graded=rate, positive=rate >= spec.positive_threshold
        )
    return LabelSet(per_query)


def precision_at_k(ranked: RankedList, labels: LabelSet, k: int) -> float:
    """Positives among the top min(K, length), over a fixed-K denominator."""
    if k < 1:
        raise ValueError("K must be >= 1")
    positives = labels.positives(ranked.query_id)
    hits = sum(1 for iid in ranked.item_ids()[:k] if iid in positives)
    return hits / k


def recall_at_k(ranked: RankedList, labels: LabelSet, k: int) -> float | None:
    """Fraction of the query's positives retrieved in the top K.

    Undefined (None) when the query has no positives.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    positives = labels.positives(ranked.query_id)
    if not positives:
        return None
    hits = sum(1 for iid in ranked.item_ids()[:k] if iid in positives)
    return hits / len(positives)


def ndcg_at_k(ranked: RankedList, labels: LabelSet, k: int) -> float | None:
    """Linear-gain DCG with log2(rank+1) discount, normalized by the ideal
    ordering of all labeled items truncated at K.

    Undefined (None) when no labeled item has a positive graded value.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    items = labels.items_for(ranked.query_id)
    ideal = sorted((lab.graded for lab in items.values()), reverse=True)
    if not ideal or ideal[0] <= 0.0:
        return None
    dcg = 0.0
    for r, iid in enumerate(ranked.item_ids()[:k], start=1):
        lab = items.get(iid)
        if lab is not None:
            dcg += lab.graded / math.log2(r + 1)
    idcg = sum(g / math.log2(r + 1) for r, g in enumerate(ideal[:k], start=1))
    return dcg / idcg


def map_at_k(ranked: RankedList, labels: LabelSet, k: int) -> float | None:
    """Mean of precision-at-r over positive ranks r <= K, normalized by
    min(K, number of positives). Undefined without positives."""
    if k < 1:
        raise ValueError("K must be >= 1")
    positives = labels.positives(ranked.query_id)
    if not positives:
        return None
    hits = 0
    total = 0.0
    for r, iid in enumerate(ranked.item_ids()[:k], start=1):
        if iid in positives:
            hits += 1
            total += hits / r
    return total / min(k, len(positives))


_METRIC_FNS = {
    "ndcg": ndcg_at_k,
    "precision": precision_at_k,
    "recall": recall_at_k,
    "map": map_at_k,
}


def metric_value(ranked: RankedList, labels: LabelSet, metric: MetricSpec) -> float | None:
    return _METRIC_FNS[metric.kind](ranked, labels, metric.k)


@dataclass
class Diagnostics:
    """Counts of queries excluded from metric means, by objective/metric."""

    excluded: dict[str, dict[str, int]] = field(default_factory=dict)
    unlabeled_queries: dict[str, list[str]] = field(default_factory=dict)

    def note_excluded(self, objective: str, metric_label: str) -> None:
        per = self.excluded.setdefault(objective, {})
        per[metric_label] = per.get(metric_label, 0) + 1

    def note_unlabeled(self, objective: str, query_id: str) -> None:
        self.unlabeled_queries.setdefault(objective, []).append(query_id)


@dataclass
class ObjectiveEvaluation:
    aggregates: tuple[float, ...]
    per_query: dict[str, dict[str, float]]  # objective -> query_id -> within-query mean
    per_metric: dict[str, dict[str, float]]  # objective -> metric label -> mean
    diagnostics: Diagnostics


def evaluate_objectives(
    ranked_lists: Sequence[RankedList],
    label_sets: Sequence[LabelSet],
    specs: Sequence[ObjectiveSpec],
) -> ObjectiveEvaluation:
    """Per-query metric matrix plus per-objective aggregates.

    Within a query the objective's metrics are averaged first (skipping
    undefined ones), then the unweighted mean is taken over queries that
    admit at least one metric, in ascending query_id order. An objective
    with zero admissible queries is a study error.
    """
    if len(label_sets) != len(specs):
        raise ValueError("one label set per objective spec required")
    ranked_sorted = sorted(ranked_lists, key=lambda r: r.query_id)
    diag = Diagnostics()
    aggregates = []
    per_query: dict[str, dict[str, float]] = {}
    per_metric: dict[str, dict[str, float]] = {}
    for labels, spec in zip(label_sets, specs):
        query_means: dict[str, float] = {}
        metric_values: dict[str, list[float]] = {m.label: [] for m in spec.metrics}
        for ranked in ranked_sorted:
            if not labels.has_query(ranked.query_id):
                diag.note_unlabeled(spec.name, ranked.query_id)
            vals = []
            for metric in spec.metrics:
                value = metric_value(ranked, labels, metric)
                if value is None:
                    diag.note_excluded(spec.name, metric.label)
                else:
                    vals.append(value)
                    metric_values[metric.label].append(value)
            if vals:
                query_means[ranked.query_id] = float(np.mean(vals))
        if not query_means:
            raise StudyError(f"objective {spec.name!r} has no admissible queries")
        ordered = [query_means[q] for q in sorted(query_means)]
        aggregates.append(float(np.mean(ordered)))
        per_query[spec.name] = query_means
        per_metric[spec.name] = {
            label: float(np.mean(vals)) for label, vals in metric_values.items() if vals
        }
    return ObjectiveEvaluation(
        aggregates=tuple(aggregates),
        per_query=per_query,
        per_metric=per_metric,
        diagnostics=diag,
    )
