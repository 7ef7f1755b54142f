"""Study configuration: YAML schema, validation, and assembly into a
runnable StudySetup.

Schema (defaults in parentheses):

    seed: int (0)
    parallel: int (all cores)
    out_dir: str (env SEARCHTUNE_OUT_DIR, else ./searchtune_out)
    data:
      corpus: path.jsonl          queries: path.jsonl
      train_log: path.csv         meta_log: path.csv
    space:                        # list of params
      - {name: w_lex, type: continuous, lo: 0.01, hi: 1.0, scale: linear}
      - {name: depth, type: integer, lo: 10, hi: 200}
      - {name: norm, type: categorical, choices: [none, minmax]}
      - {name: k1, type: grid, points: [0.8, 1.2, 1.6]}
    sampler:
      name: tpe                   # random | grid | tpe
      mode: separate              # separate | weighted_sum (tpe only)
      gamma_quantile: 0.25, n_startup: 10, n_candidates: 24,
      bandwidth_floor: 0.001, categorical_prior: 1.0
    objectives:                   # list
      - name: ctr
        numerator: clicks         # clicks | carts | purchases
        min_impressions: 10
        smoothing: {alpha: 1.0, beta: 30.0}   # or none
        positive_threshold: 0.05
        metrics: [{kind: ndcg, k: 20}, {kind: precision, k: 50}]
        direction: maximize
    weights: {ctr: 0.5, ctcvr: 0.5}           # normalized if sum != 1
    transform:
      weights: {lexical: w_lex, dense: w_dense, views: w_pop, sells: w_pop}
      candidate_k: 100
      normalization: minmax       # none | minmax | param name
    cumulative:
      stage_budgets: [100]
      seed_quantile: 0.8          # scalar or per-objective map
      max_seeds: 15
    meta:
      top_n: 10

In transform bindings a bare number is a constant and a bare string a
hyperparameter name (except the normalization literals).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .errors import ConfigError
from .meta import CumulativeSettings, StudySetup
from .objectives import InteractionLog, MetricSpec, ObjectiveSpec, Smoothing
from .pipeline import Evaluator
from .retrieval import TransformSpec, index_build, load_corpus, load_queries
from .samplers import ObjectiveMode, TPESettings, make_sampler
from .space import MAXIMIZE, MINIMIZE, ParamSpec, SearchSpace, validate_space

DEFAULT_OUT_DIR_ENV = "SEARCHTUNE_OUT_DIR"


@dataclass(frozen=True)
class StudyConfig:
    seed: int
    parallel: int
    out_dir: str
    corpus_path: Path
    queries_path: Path
    train_log_path: Path
    meta_log_path: Path
    space: SearchSpace
    sampler_name: str
    sampler_mode: str
    tpe_settings: TPESettings
    specs: tuple[ObjectiveSpec, ...]
    weights: tuple[float, ...]
    transform_spec: TransformSpec
    settings: CumulativeSettings
    top_n: int
    allow_split_overlap: bool

    def header(self) -> dict[str, Any]:
        """Report header; deliberately excludes parallelism and output paths
        so exports are invariant to them."""
        return {
            "sampler": {
                "name": self.sampler_name,
                "mode": self.sampler_mode,
                "gamma_quantile": self.tpe_settings.gamma_quantile,
                "n_startup": self.tpe_settings.n_startup,
                "n_candidates": self.tpe_settings.n_candidates,
                "bandwidth_floor": self.tpe_settings.bandwidth_floor,
                "categorical_prior": self.tpe_settings.categorical_prior,
            },
            "objectives": [
                {
                    "name": s.name,
                    "numerator": s.numerator_event,
                    "min_impressions": s.min_impressions,
                    "smoothing": None
                    if s.smoothing is None
                    else {"alpha": s.smoothing.alpha, "beta": s.smoothing.beta},
                    "positive_threshold": s.positive_threshold,
                    "metrics": [m.label for m in s.metrics],
                    "direction": s.direction,
                }
                for s in self.specs
            ],
            "weights": {s.name: w for s, w in zip(self.specs, self.weights)},
            "seed": self.seed,
            "stage_budgets": list(self.settings.stage_budgets),
            "seed_quantile": self.settings.seed_quantile
            if not isinstance(self.settings.seed_quantile, Mapping)
            else dict(self.settings.seed_quantile),
            "max_seeds": self.settings.max_seeds,
            "top_n": self.top_n,
            "space": [p.name for p in self.space],
        }


def _check_keys(raw: Mapping[str, Any], known: set[str], where: str, errs: list[str]) -> None:
    for key in sorted(set(raw) - known):
        errs.append(f"{where}.{key}: unknown config key")


def _parse_param(raw: Mapping[str, Any], errs: list[str], where: str) -> ParamSpec | None:
    _check_keys(raw, {"name", "type", "lo", "hi", "scale", "choices", "points"}, where, errs)
    name = raw.get("name")
    kind = raw.get("type")
    if not name:
        errs.append(f"{where}.name: required")
        return None
    try:
        if kind == "continuous":
            return ParamSpec.continuous(name, raw["lo"], raw["hi"], raw.get("scale", "linear"))
        if kind == "integer":
            return ParamSpec.integer(name, raw["lo"], raw["hi"], raw.get("scale", "linear"))
        if kind == "categorical":
            return ParamSpec.categorical(name, raw["choices"])
        if kind == "grid":
            return ParamSpec.grid(name, raw["points"])
    except KeyError as exc:
        errs.append(f"{where}: missing field {exc}")
        return None
    errs.append(f"{where}.type: unknown param type {kind!r}")
    return None


def _parse_objective(raw: Mapping[str, Any], errs: list[str], where: str) -> ObjectiveSpec | None:
    _check_keys(
        raw,
        {"name", "numerator", "min_impressions", "smoothing", "positive_threshold", "metrics", "direction"},
        where,
        errs,
    )
    name = raw.get("name")
    if not name:
        errs.append(f"{where}.name: required")
        return None
    smoothing_raw = raw.get("smoothing")
    smoothing = None
    if smoothing_raw not in (None, "none"):
        try:
            smoothing = Smoothing(alpha=float(smoothing_raw["alpha"]), beta=float(smoothing_raw["beta"]))
        except (KeyError, TypeError):
            errs.append(f"{where}.smoothing: expected {{alpha, beta}} or none")
    metrics_raw = raw.get("metrics") or []
    metrics = []
    for i, m in enumerate(metrics_raw):
        try:
            metrics.append(MetricSpec(kind=str(m["kind"]), k=int(m["k"])))
        except (KeyError, TypeError):
            errs.append(f"{where}.metrics[{i}]: expected {{kind, k}}")
    direction = raw.get("direction", MAXIMIZE)
    if direction not in (MAXIMIZE, MINIMIZE):
        errs.append(f"{where}.direction: must be maximize or minimize")
    spec = ObjectiveSpec(
        name=str(name),
        numerator_event=str(raw.get("numerator", "")),
        min_impressions=int(raw.get("min_impressions", 10)),
        smoothing=smoothing,
        positive_threshold=float(raw.get("positive_threshold", 0.0)),
        metrics=tuple(metrics),
        direction=direction,
    )
    for msg in spec.violations():
        errs.append(f"{where}: {msg}")
    return spec


def parse_study_config(raw: Mapping[str, Any], base_dir: Path) -> StudyConfig:
    """Validate a raw config mapping; raises ConfigError listing every
    violation with its key path."""
    errs: list[str] = []
    known = {
        "seed", "parallel", "out_dir", "data", "space", "sampler",
        "objectives", "weights", "transform", "cumulative", "meta",
        "allow_split_overlap",
    }
    for key in set(raw) - known:
        errs.append(f"{key}: unknown config key")

    data = raw.get("data") or {}
    _check_keys(data, {"corpus", "queries", "train_log", "meta_log"}, "data", errs)
    paths: dict[str, Path] = {}
    for key in ("corpus", "queries", "train_log", "meta_log"):
        value = data.get(key)
        if not value:
            errs.append(f"data.{key}: required")
            continue
        p = Path(value)
        if not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            errs.append(f"data.{key}: file not found: {p}")
        paths[key] = p

    params = []
    for i, praw in enumerate(raw.get("space") or []):
        p = _parse_param(praw, errs, f"space[{i}]")
        if p is not None:
            params.append(p)
    space = SearchSpace(tuple(params))
    for msg in validate_space(space):
        errs.append(f"space: {msg}")

    sampler_raw = raw.get("sampler") or {}
    _check_keys(
        sampler_raw,
        {"name", "mode", "gamma_quantile", "n_startup", "n_candidates", "bandwidth_floor", "categorical_prior"},
        "sampler",
        errs,
    )
    sampler_name = str(sampler_raw.get("name", "tpe"))
    sampler_mode = str(sampler_raw.get("mode", "separate"))
    if sampler_mode not in ("separate", "weighted_sum"):
        errs.append(f"sampler.mode: must be separate or weighted_sum, got {sampler_mode!r}")
    tpe_settings = TPESettings(
        gamma_quantile=float(sampler_raw.get("gamma_quantile", 0.25)),
        n_startup=int(sampler_raw.get("n_startup", 10)),
        n_candidates=int(sampler_raw.get("n_candidates", 24)),
        bandwidth_floor=float(sampler_raw.get("bandwidth_floor", 1e-3)),
        categorical_prior=float(sampler_raw.get("categorical_prior", 1.0)),
    )
    for msg in tpe_settings.violations():
        errs.append(f"sampler: {msg}")

    specs = []
    for i, oraw in enumerate(raw.get("objectives") or []):
        spec = _parse_objective(oraw, errs, f"objectives[{i}]")
        if spec is not None:
            specs.append(spec)
    if not specs:
        errs.append("objectives: at least one objective required")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        errs.append("objectives: names must be unique")

    weights_raw = raw.get("weights") or {}
    weights = []
    if specs:
        unknown_w = set(weights_raw) - set(names)
        if unknown_w:
            errs.append(f"weights: unknown objective(s) {sorted(unknown_w)}")
        for s in specs:
            w = float(weights_raw.get(s.name, 1.0 / len(specs)))
            if w < 0:
                errs.append(f"weights.{s.name}: must be non-negative")
            weights.append(w)
        total = sum(weights)
        if total <= 0:
            errs.append("weights: must sum to a positive value")
        else:
            weights = [w / total for w in weights]

    transform_spec = None
    try:
        transform_spec = TransformSpec.from_dict(raw.get("transform") or {})
    except ConfigError as exc:
        errs.append(f"transform: {exc}")
    if transform_spec is not None:
        missing = transform_spec.param_names() - set(space.names)
        if missing:
            errs.append(f"transform: references params not in the space: {sorted(missing)}")

    cumulative_raw = raw.get("cumulative") or {}
    _check_keys(cumulative_raw, {"stage_budgets", "seed_quantile", "max_seeds"}, "cumulative", errs)
    budgets = cumulative_raw.get("stage_budgets", [100])
    if isinstance(budgets, int):
        budgets = [budgets]
    seed_quantile = cumulative_raw.get("seed_quantile", 0.8)
    settings = CumulativeSettings(
        stage_budgets=tuple(int(b) for b in budgets),
        seed_quantile=seed_quantile if isinstance(seed_quantile, Mapping) else float(seed_quantile),
        max_seeds=int(cumulative_raw.get("max_seeds", 15)),
    )
    for msg in settings.violations(names):
        errs.append(f"cumulative: {msg}")

    meta_raw = raw.get("meta") or {}
    _check_keys(meta_raw, {"top_n"}, "meta", errs)
    top_n = int(meta_raw.get("top_n", 10))
    if top_n < 1:
        errs.append("meta.top_n: must be >= 1")

    parallel = raw.get("parallel")
    if parallel is None:
        parallel = os.cpu_count() or 1
    elif int(parallel) < 1:
        errs.append("parallel: must be >= 1")

    out_dir = raw.get("out_dir") or os.environ.get(DEFAULT_OUT_DIR_ENV) or "searchtune_out"

    if errs:
        raise ConfigError("\n".join(errs))
    return StudyConfig(
        seed=int(raw.get("seed", 0)),
        parallel=int(parallel),
        out_dir=str(out_dir),
        corpus_path=paths["corpus"],
        queries_path=paths["queries"],
        train_log_path=paths["train_log"],
        meta_log_path=paths["meta_log"],
        space=space,
        sampler_name=sampler_name,
        sampler_mode=sampler_mode,
        tpe_settings=tpe_settings,
        specs=tuple(specs),
        weights=tuple(weights),
        transform_spec=transform_spec,
        settings=settings,
        top_n=top_n,
        allow_split_overlap=bool(raw.get("allow_split_overlap", False)),
    )


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply repeatable ``--override dotted.key=value`` pairs (YAML-parsed
    values) onto the raw config mapping."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        parts = key.strip().split(".")
        node = raw
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def load_study_config(path: str | Path, overrides: Sequence[str] = ()) -> StudyConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    raw = apply_overrides(raw, overrides)
    return parse_study_config(raw, path.parent.resolve())


def assemble_study(config: StudyConfig) -> StudySetup:
    """Load data files and build the index, evaluators, and sampler."""
    corpus = load_corpus(config.corpus_path)
    queries = load_queries(config.queries_path)
    train_log = InteractionLog.from_csv(config.train_log_path)
    meta_log = InteractionLog.from_csv(config.meta_log_path)
    index = index_build(corpus)
    train_ids = train_log.query_ids()
    meta_ids = meta_log.query_ids()
    train_queries = [q for q in queries if q.query_id in train_ids]
    meta_queries = [q for q in queries if q.query_id in meta_ids]
    if not train_queries:
        raise ConfigError("data.queries: no queries match the training log")
    if not meta_queries:
        raise ConfigError("data.queries: no queries match the meta log")
    train_eval = Evaluator.from_log(
        index, train_queries, train_log, config.specs, config.transform_spec, parallel=config.parallel
    )
    meta_eval = Evaluator.from_log(
        index, meta_queries, meta_log, config.specs, config.transform_spec, parallel=config.parallel
    )
    mode = ObjectiveMode(
        mode=config.sampler_mode,
        weights=config.weights if config.sampler_mode == "weighted_sum" else None,
    )
    sampler = make_sampler(config.sampler_name, config.tpe_settings, mode)
    return StudySetup(
        space=config.space,
        sampler=sampler,
        specs=config.specs,
        weights=config.weights,
        train_evaluator=train_eval,
        meta_evaluator=meta_eval,
        settings=config.settings,
        top_n=config.top_n,
        seed=config.seed,
        allow_split_overlap=config.allow_split_overlap,
        header=config.header(),
    )


def with_cli_overrides(
    config: StudyConfig,
    seed: int | None = None,
    out_dir: str | None = None,
    parallel: int | None = None,
    stage_budgets: Sequence[int] | None = None,
) -> StudyConfig:
    updates: dict[str, Any] = {}
    if seed is not None:
        updates["seed"] = seed
    if out_dir is not None:
        updates["out_dir"] = out_dir
    if parallel is not None:
        if parallel < 1:
            raise ConfigError("parallel: must be >= 1")
        updates["parallel"] = parallel
    if stage_budgets is not None:
        settings = replace(config.settings, stage_budgets=tuple(stage_budgets))
        errs = settings.violations()
        if errs:
            raise ConfigError("\n".join(f"cumulative: {e}" for e in errs))
        updates["settings"] = settings
    return replace(config, **updates) if updates else config
