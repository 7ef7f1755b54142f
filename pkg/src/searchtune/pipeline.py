"""Study execution: the transform -> search -> score evaluation path and the
per-stage optimization loop.

The Evaluator precomputes per-(objective, query) label arrays aligned with
the index's document order so each trial reduces to a blended scoring pass
plus one rank-statistics kernel call per query. Training and meta splits
use this same class, so both paths share one evaluation implementation.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import GridExhausted, StudyError
from .objectives import InteractionLog, LabelSet, ObjectiveSpec, derive_labels
from .retrieval import Query, SearchIndex, TransformSpec, transform
from .samplers import Sampler
from .space import HPConfig, ObservationDataset, SearchSpace, Trial


@dataclass
class _QueryLabels:
    gains: np.ndarray  # graded label per doc index (0 where unlabeled)
    pos: np.ndarray  # 1.0 where positive, else 0.0
    idcg_cum: np.ndarray  # ideal DCG prefix over all labeled items, descending
    npos: int  # positives among all labeled items (retrievable or not)
    has_grade: bool
    has_labels: bool


@dataclass
class DetailedEvaluation:
    aggregates: tuple[float, ...]
    per_metric: dict[str, dict[str, float]]  # objective -> metric label -> mean
    excluded: dict[str, dict[str, int]]  # objective -> metric label -> query count


def _prepare_query_labels(index: SearchIndex, labels: LabelSet, query_id: str) -> _QueryLabels:
    items = labels.items_for(query_id)
    gains = np.zeros(index.n_docs)
    pos = np.zeros(index.n_docs)
    npos = 0
    graded_all = []
    for iid, lab in items.items():
        graded_all.append(lab.graded)
        if lab.positive:
            npos += 1
        try:
            di = index.doc_index(iid)
        except KeyError:
            continue  # labeled item outside the corpus can never be retrieved
        gains[di] = lab.graded
        pos[di] = 1.0 if lab.positive else 0.0
    ideal = np.sort(np.asarray(graded_all))[::-1] if graded_all else np.zeros(0)
    discounts = 1.0 / np.log2(np.arange(2.0, ideal.shape[0] + 2.0))
    idcg_cum = np.cumsum(ideal * discounts)
    return _QueryLabels(
        gains=gains,
        pos=pos,
        idcg_cum=idcg_cum,
        npos=npos,
        has_grade=bool(ideal.shape[0] and ideal[0] > 0.0),
        has_labels=bool(items),
    )


class Evaluator:
    """Scores one configuration over a query split against derived labels."""

    def __init__(
        self,
        index: SearchIndex,
        queries: Sequence[Query],
        specs: Sequence[ObjectiveSpec],
        transform_spec: TransformSpec,
        label_sets: Sequence[LabelSet],
        parallel: int = 1,
    ):
        if len(label_sets) != len(specs):
            raise ValueError("one label set per objective spec required")
        self.index = index
        self.queries = sorted(queries, key=lambda q: q.query_id)
        self.specs = tuple(specs)
        self.transform_spec = transform_spec
        self.label_sets = tuple(label_sets)
        self.parallel = max(1, int(parallel))
        self.directions = tuple(s.direction for s in self.specs)
        # ascending cutoffs per objective plus each metric's slot in them
        self._ks: list[np.ndarray] = []
        self._metric_slots: list[list[int]] = []
        for spec in self.specs:
            ks = sorted({m.k for m in spec.metrics})
            self._ks.append(np.array(ks, dtype=np.int64))
            self._metric_slots.append([ks.index(m.k) for m in spec.metrics])
        self._labels = [
            [_prepare_query_labels(index, labels, q.query_id) for q in self.queries]
            for labels in self.label_sets
        ]

    @classmethod
    def from_log(
        cls,
        index: SearchIndex,
        queries: Sequence[Query],
        log: InteractionLog,
        specs: Sequence[ObjectiveSpec],
        transform_spec: TransformSpec,
        parallel: int = 1,
    ) -> "Evaluator":
        label_sets = [derive_labels(log, spec) for spec in specs]
        return cls(index, queries, specs, transform_spec, label_sets, parallel=parallel)

    def query_ids(self) -> tuple[str, ...]:
        return tuple(q.query_id for q in self.queries)

    def _eval_query(self, config: HPConfig, qi: int) -> list[np.ndarray]:
        """Per-objective metric vectors for one query; NaN marks undefined."""
        query = self.queries[qi]
        request = transform(config, query, self.transform_spec)
        ranked, _ = self.index.search_indices(request, query)
        out = []
        for m, spec in enumerate(self.specs):
            ql = self._labels[m][qi]
            dcg, hits, sumprec = kernels.ranking_stats(ranked, ql.gains, ql.pos, self._ks[m])
            vals = np.empty(len(spec.metrics))
            for j, metric in enumerate(spec.metrics):
                slot = self._metric_slots[m][j]
                if metric.kind == "precision":
                    vals[j] = hits[slot] / metric.k
                elif metric.kind == "ndcg":
                    if ql.has_grade:
                        idcg = ql.idcg_cum[min(metric.k, ql.idcg_cum.shape[0]) - 1]
                        vals[j] = dcg[slot] / idcg
                    else:
                        vals[j] = np.nan
                elif metric.kind == "recall":
                    vals[j] = hits[slot] / ql.npos if ql.npos else np.nan
                else:  # map
                    vals[j] = sumprec[slot] / min(metric.k, ql.npos) if ql.npos else np.nan
            out.append(vals)
        return out

    def _eval_all_queries(self, config: HPConfig) -> list[list[np.ndarray]]:
        n = len(self.queries)
        if self.parallel > 1 and n > 1:
            with ThreadPoolExecutor(max_workers=self.parallel) as pool:
                return list(pool.map(lambda qi: self._eval_query(config, qi), range(n)))
        return [self._eval_query(config, qi) for qi in range(n)]

    def evaluate(self, config: HPConfig) -> tuple[float, ...]:
        """Objective vector for one configuration (raw metric orientation)."""
        per_query = self._eval_all_queries(config)
        aggregates = []
        for m, spec in enumerate(self.specs):
            query_means = []
            for qi in range(len(self.queries)):
                vals = per_query[qi][m]
                defined = vals[~np.isnan(vals)]
                if defined.size:
                    query_means.append(float(np.mean(defined)))
            if not query_means:
                raise StudyError(f"objective {spec.name!r} has no admissible queries")
            aggregates.append(float(np.mean(query_means)))
        return tuple(aggregates)

    def evaluate_detailed(self, config: HPConfig) -> DetailedEvaluation:
        """As evaluate(), plus per-metric means and exclusion counts."""
        per_query = self._eval_all_queries(config)
        aggregates = []
        per_metric: dict[str, dict[str, float]] = {}
        excluded: dict[str, dict[str, int]] = {}
        for m, spec in enumerate(self.specs):
            stack = np.stack([per_query[qi][m] for qi in range(len(self.queries))])
            defined = ~np.isnan(stack)
            query_means = [
                float(np.mean(row[d])) for row, d in zip(stack, defined) if d.any()
            ]
            if not query_means:
                raise StudyError(f"objective {spec.name!r} has no admissible queries")
            aggregates.append(float(np.mean(query_means)))
            per_metric[spec.name] = {
                metric.label: float(np.mean(stack[defined[:, j], j]))
                for j, metric in enumerate(spec.metrics)
                if defined[:, j].any()
            }
            excluded[spec.name] = {
                metric.label: int((~defined[:, j]).sum())
                for j, metric in enumerate(spec.metrics)
                if (~defined[:, j]).any()
            }
        return DetailedEvaluation(
            aggregates=tuple(aggregates), per_metric=per_metric, excluded=excluded
        )


def optimize_stage(
    space: SearchSpace,
    sampler: Sampler,
    evaluator: Evaluator,
    dataset: ObservationDataset,
    budget: int,
    rng: np.random.Generator,
    stage: int = 0,
) -> list[Trial]:
    """Run up to ``budget`` sample->evaluate->store iterations, appending to
    the dataset. Stops early if a grid sampler exhausts its combinations."""
    new_trials = []
    for _ in range(budget):
        try:
            config = sampler.next(space, dataset, evaluator.directions, rng)
        except GridExhausted:
            break
        z = evaluator.evaluate(config)
        trial = Trial(
            id=dataset.next_id,
            stage=stage,
            config=config,
            objective_values=z,
            provenance="sampled",
        )
        dataset.append(trial)
        new_trials.append(trial)
    return new_trials
