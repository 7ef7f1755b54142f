"""Post-optimization selection: top-configuration extraction, held-out meta
evaluation, vote-based winner selection, and cumulative warm-start staging.

A stage's winner is not simply the best training score: the top trials per
criterion are re-scored on a disjoint meta split and the configuration
appearing in the most per-criterion top-n lists wins. Later stages seed
their observation dataset with the previous stage's top trials so the
sampler resumes from known-good regions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .objectives import ObjectiveSpec
from .pipeline import DetailedEvaluation, Evaluator, optimize_stage
from .samplers import Sampler, weighted_sum_reduce
from .space import (
    MAXIMIZE,
    HPConfig,
    ObservationDataset,
    SearchSpace,
    Trial,
    canonical_matrix,
    pareto_front,
)

logger = logging.getLogger(__name__)

WEIGHTED_SUM = "weighted_sum"


def _config_key(config: HPConfig) -> tuple:
    return tuple(sorted(config.assignments.items()))


def trial_weighted(trial: Trial, weights: Sequence[float], directions: Sequence[str]) -> float:
    return weighted_sum_reduce(trial.objective_values, weights, directions)


@dataclass
class TopSet:
    """Top-n trials per criterion (each objective plus the weighted sum)."""

    per_criterion: dict[str, list[Trial]]

    def candidate_pool(self) -> list[Trial]:
        """Union of the top lists, deduplicated by config (lowest trial id
        kept), ordered by trial id."""
        best: dict[tuple, Trial] = {}
        for trials in self.per_criterion.values():
            for t in trials:
                key = _config_key(t.config)
                if key not in best or t.id < best[key].id:
                    best[key] = t
        return sorted(best.values(), key=lambda t: t.id)


def extract_top_configs(
    dataset: ObservationDataset,
    specs: Sequence[ObjectiveSpec],
    weights: Sequence[float],
    n: int,
) -> TopSet:
    """Top-n trials per training objective and per the weighted sum.

    Criterion values are direction-canonicalized so larger is better; ties
    break toward the lower trial id.
    """
    if n <= 0:
        raise ValueError(f"top-n must be positive, got {n}")
    if len(dataset) == 0:
        raise ValueError("cannot extract top configs from an empty dataset")
    directions = [s.direction for s in specs]
    canon = canonical_matrix(dataset.values_matrix(), directions)
    per_criterion: dict[str, list[Trial]] = {}
    for m, spec in enumerate(specs):
        order = sorted(range(len(dataset)), key=lambda i: (-canon[i, m], dataset[i].id))
        per_criterion[spec.name] = [dataset[i] for i in order[:n]]
    wsum = [trial_weighted(t, weights, directions) for t in dataset]
    order = sorted(range(len(dataset)), key=lambda i: (-wsum[i], dataset[i].id))
    per_criterion[WEIGHTED_SUM] = [dataset[i] for i in order[:n]]
    return TopSet(per_criterion)


@dataclass
class MetaScore:
    """Meta-split scores of one candidate, per criterion (canonical
    orientation: larger is better)."""

    trial_id: int
    config: HPConfig
    criteria: dict[str, float]

    @property
    def weighted(self) -> float:
        return self.criteria[WEIGHTED_SUM]


def meta_evaluate(
    pool: Sequence[Trial],
    meta_evaluator: Evaluator,
    weights: Sequence[float],
    train_query_ids: Sequence[str] = (),
    allow_overlap: bool = False,
) -> list[MetaScore]:
    """Re-run the shared evaluation path for each candidate on the meta split.

    The meta split must be disjoint from training (by query id); the
    ``allow_overlap`` override exists for identity-split regression tests.
    """
    overlap = set(train_query_ids) & set(meta_evaluator.query_ids())
    if overlap and not allow_overlap:
        raise ConfigError(
            f"meta split overlaps training split on {len(overlap)} query id(s), "
            f"e.g. {sorted(overlap)[:3]}"
        )
    directions = [s.direction for s in meta_evaluator.specs]
    out = []
    for trial in pool:
        z = meta_evaluator.evaluate(trial.config)
        criteria: dict[str, float] = {}
        for m, spec in enumerate(meta_evaluator.specs):
            criteria[spec.name] = z[m] if spec.direction == MAXIMIZE else -z[m]
        criteria[WEIGHTED_SUM] = weighted_sum_reduce(z, weights, directions)
        out.append(MetaScore(trial_id=trial.id, config=trial.config, criteria=criteria))
    return out


@dataclass
class TallyRow:
    trial_id: int
    config: HPConfig
    votes: int
    criteria: dict[str, float]
    weighted: float


@dataclass
class VoteTally:
    rows: list[TallyRow]  # sorted: most votes first, then meta weighted, then id

    def winner(self) -> TallyRow:
        return self.rows[0]


def vote_select(meta_scores: Sequence[MetaScore], n: int) -> tuple[HPConfig, VoteTally]:
    """Count, per candidate, the criteria on which it reaches the meta top-n;
    the most-voted candidate wins (ties: higher meta weighted sum, then
    lower trial id)."""
    if not meta_scores:
        raise ValueError("vote_select needs at least one candidate")
    if n <= 0:
        raise ValueError(f"top-n must be positive, got {n}")
    criteria = list(meta_scores[0].criteria)
    votes = {ms.trial_id: 0 for ms in meta_scores}
    for crit in criteria:
        order = sorted(meta_scores, key=lambda ms: (-ms.criteria[crit], ms.trial_id))
        for ms in order[:n]:
            votes[ms.trial_id] += 1
    rows = [
        TallyRow(
            trial_id=ms.trial_id,
            config=ms.config,
            votes=votes[ms.trial_id],
            criteria=dict(ms.criteria),
            weighted=ms.weighted,
        )
        for ms in meta_scores
    ]
    rows.sort(key=lambda r: (-r.votes, -r.weighted, r.trial_id))
    tally = VoteTally(rows)
    return tally.winner().config, tally


@dataclass(frozen=True)
class CumulativeSettings:
    """Warm-start staging: per-stage budgets, the seed-eligibility quantile
    per objective, and the seed cap."""

    stage_budgets: tuple[int, ...] = (100,)
    seed_quantile: float | Mapping[str, float] = 0.8
    max_seeds: int = 15

    def violations(self, objective_names: Sequence[str] = ()) -> list[str]:
        errs = []
        if not self.stage_budgets or any(b < 1 for b in self.stage_budgets):
            errs.append("stage budgets must be >= 1")
        if self.max_seeds < 1:
            errs.append("max_seeds must be >= 1")
        quantiles = (
            self.seed_quantile.values()
            if isinstance(self.seed_quantile, Mapping)
            else [self.seed_quantile]
        )
        if any(not (0.0 < q < 1.0) for q in quantiles):
            errs.append("seed quantiles must be in (0,1)")
        if isinstance(self.seed_quantile, Mapping) and objective_names:
            missing = set(objective_names) - set(self.seed_quantile)
            if missing:
                errs.append(f"seed_quantile missing objectives: {sorted(missing)}")
        return errs

    def quantile_for(self, objective_name: str) -> float:
        if isinstance(self.seed_quantile, Mapping):
            return float(self.seed_quantile[objective_name])
        return float(self.seed_quantile)


def compute_seed_gammas(
    dataset: ObservationDataset,
    specs: Sequence[ObjectiveSpec],
    weights: Sequence[float],
    settings: CumulativeSettings,
) -> np.ndarray:
    """Per-objective eligibility thresholds in canonical orientation.

    Each gamma is the configured empirical quantile, clamped so the
    incumbent (the weighted-sum-best trial) stays eligible; this keeps the
    best weighted score monotone across stages.
    """
    directions = [s.direction for s in specs]
    canon = canonical_matrix(dataset.values_matrix(), directions)
    wsum = np.array([trial_weighted(t, weights, directions) for t in dataset])
    incumbent = int(np.argmax(wsum))
    gammas = np.empty(len(specs))
    for m, spec in enumerate(specs):
        q = settings.quantile_for(spec.name)
        gammas[m] = min(float(np.quantile(canon[:, m], q)), canon[incumbent, m])
    return gammas


def seed_filter(
    dataset: ObservationDataset, gammas: Sequence[float], directions: Sequence[str]
) -> list[Trial]:
    """Trials whose canonical value meets the threshold on every objective."""
    canon = canonical_matrix(dataset.values_matrix(), directions)
    keep = np.all(canon >= np.asarray(gammas), axis=1)
    return [dataset[i] for i in np.flatnonzero(keep)]


def seed_next_stage(
    dataset: ObservationDataset,
    specs: Sequence[ObjectiveSpec],
    weights: Sequence[float],
    settings: CumulativeSettings,
    stage: int,
    start_id: int,
) -> list[Trial]:
    """Build the warm-start observations for the next stage.

    The eligible set is truncated to max_seeds by weighted score descending
    and re-issued as seeded trials with fresh ids continuing the global
    sequence."""
    if len(dataset) == 0:
        raise ValueError("cannot seed from an empty dataset")
    directions = [s.direction for s in specs]
    gammas = compute_seed_gammas(dataset, specs, weights, settings)
    selected = seed_filter(dataset, gammas, directions)
    if not selected:  # unreachable with the incumbent clamp; kept as a guard
        logger.warning("seed filter produced an empty set; falling back to the weighted best")
        selected = [max(dataset, key=lambda t: trial_weighted(t, weights, directions))]
    selected.sort(key=lambda t: (-trial_weighted(t, weights, directions), t.id))
    selected = selected[: settings.max_seeds]
    selected.sort(key=lambda t: t.id)
    return [
        Trial(
            id=start_id + i,
            stage=stage,
            config=t.config,
            objective_values=t.objective_values,
            provenance="seeded",
        )
        for i, t in enumerate(selected)
    ]


@dataclass
class StageReport:
    stage: int
    n_seeded: int
    n_sampled: int
    best_weighted: float
    best_trial_id: int
    top_ids: dict[str, list[int]]
    meta_scores: list[MetaScore]
    tally: VoteTally
    winner_trial_id: int
    winner_config: HPConfig


@dataclass
class StudyReport:
    header: dict[str, Any]
    stages: list[StageReport]
    trials: list[Trial]
    pareto_ids: list[int]
    final_winner: TallyRow
    winner_detail: DetailedEvaluation


@dataclass
class StudySetup:
    """Everything run_cumulative_pipeline needs, already assembled."""

    space: SearchSpace
    sampler: Sampler
    specs: tuple[ObjectiveSpec, ...]
    weights: tuple[float, ...]
    train_evaluator: Evaluator
    meta_evaluator: Evaluator
    settings: CumulativeSettings = CumulativeSettings()
    top_n: int = 10
    seed: int = 0
    allow_split_overlap: bool = False
    header: dict[str, Any] = field(default_factory=dict)


def run_cumulative_pipeline(setup: StudySetup) -> StudyReport:
    """Execute every stage: seed (stage > 0), optimize, extract, meta-evaluate,
    vote; then assemble the report with the final winner and Pareto front."""
    setup.space.require_valid()
    errs = setup.settings.violations([s.name for s in setup.specs])
    for spec in setup.specs:
        errs.extend(spec.violations())
    if errs:
        raise ConfigError("invalid study setup: " + "; ".join(errs))
    rng = np.random.default_rng(setup.seed)
    directions = [s.direction for s in setup.specs]
    stages: list[StageReport] = []
    all_trials: list[Trial] = []
    prev_dataset: ObservationDataset | None = None
    next_id = 0
    winner_trial: TallyRow | None = None
    for stage_idx, budget in enumerate(setup.settings.stage_budgets):
        dataset = ObservationDataset()
        if stage_idx > 0:
            seeds = seed_next_stage(
                prev_dataset, setup.specs, setup.weights, setup.settings, stage_idx, next_id
            )
            dataset.extend(seeds)
        n_seeded = len(dataset)
        optimize_stage(
            setup.space, setup.sampler, setup.train_evaluator, dataset, budget, rng, stage_idx
        )
        next_id = dataset.next_id
        wsum = [trial_weighted(t, setup.weights, directions) for t in dataset]
        best_i = int(np.argmax(wsum))
        top = extract_top_configs(dataset, setup.specs, setup.weights, setup.top_n)
        pool = top.candidate_pool()
        meta_scores = meta_evaluate(
            pool,
            setup.meta_evaluator,
            setup.weights,
            train_query_ids=setup.train_evaluator.query_ids(),
            allow_overlap=setup.allow_split_overlap,
        )
        winner_config, tally = vote_select(meta_scores, setup.top_n)
        winner_trial = tally.winner()
        stages.append(
            StageReport(
                stage=stage_idx,
                n_seeded=n_seeded,
                n_sampled=len(dataset) - n_seeded,
                best_weighted=float(wsum[best_i]),
                best_trial_id=dataset[best_i].id,
                top_ids={c: [t.id for t in ts] for c, ts in top.per_criterion.items()},
                meta_scores=meta_scores,
                tally=tally,
                winner_trial_id=winner_trial.trial_id,
                winner_config=winner_config,
            )
        )
        all_trials.extend(dataset.trials)
        prev_dataset = dataset
    report_dataset = ObservationDataset(all_trials)
    pareto_ids = [t.id for t in pareto_front(report_dataset, directions)]
    winner_detail = setup.meta_evaluator.evaluate_detailed(winner_trial.config)
    return StudyReport(
        header=dict(setup.header),
        stages=stages,
        trials=all_trials,
        pareto_ids=pareto_ids,
        final_winner=winner_trial,
        winner_detail=winner_detail,
    )
