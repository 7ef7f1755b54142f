"""Synthetic corpus/query/interaction-log generator with a planted preference
model, plus an exhaustive grid oracle for desk-scale verification.

Items and queries share per-topic embedding clusters and topic signature
tokens, popularity counts are heavy-tailed, and click propensity follows a
logistic squashing of a planted weighted blend of the very signals the
retrieval engine scores. Cart propensity can follow a second blend so the
engagement and conversion objectives disagree, as they do on real funnels.
The meta split uses fresh queries (disjoint id range) and freshly drawn
interactions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import OracleRefusal
from .objectives import Interaction, InteractionLog, ObjectiveSpec
from .pipeline import Evaluator
from .retrieval import Document, Query, SearchIndex, TransformSpec, index_build
from .samplers import weighted_sum_reduce
from .space import HPConfig, SearchSpace, as_grid

DEFAULT_TRUE_WEIGHTS = {"lexical": 0.3, "dense": 0.4, "views": 0.2, "sells": 0.1}
DEFAULT_CONVERSION_WEIGHTS = {"lexical": 0.05, "dense": 0.25, "views": 0.1, "sells": 0.6}

_REL_SLOPE = 2.0  # logistic slope over the standardized relevance blend


@dataclass(frozen=True)
class FunnelSpec:
    """Impression -> click -> cart -> purchase thinning probabilities."""

    base_ctr: float = 0.06
    click_to_cart: float = 0.35
    cart_to_purchase: float = 0.5

    def violations(self) -> list[str]:
        errs = []
        for name in ("base_ctr", "click_to_cart", "cart_to_purchase"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                errs.append(f"funnel.{name} must be in [0,1], got {v}")
        return errs


@dataclass(frozen=True)
class GeneratorSpec:
    n_items: int = 200
    n_queries: int = 50  # per split; the meta split gets the same count
    vocab_size: int = 400
    embedding_dim: int = 16
    true_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TRUE_WEIGHTS))
    conversion_weights: Mapping[str, float] | None = field(
        default_factory=lambda: dict(DEFAULT_CONVERSION_WEIGHTS)
    )
    funnel: FunnelSpec = FunnelSpec()
    impressions_per_pair: int = 400
    seed: int = 0

    def violations(self) -> list[str]:
        errs = []
        for name in ("n_items", "n_queries", "vocab_size", "embedding_dim", "impressions_per_pair"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1, got {getattr(self, name)}")
        errs.extend(self.funnel.violations())
        if not self.true_weights:
            errs.append("true_weights must not be empty")
        if self.conversion_weights is not None and set(self.conversion_weights) != set(
            self.true_weights
        ):
            errs.append("conversion_weights must cover the same signals as true_weights")
        return errs

    @property
    def popularity_features(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.true_weights) - {"lexical", "dense"}))


@dataclass
class GeneratedData:
    corpus: list[Document]
    queries: list[Query]  # training queries followed by meta queries
    train_log: InteractionLog
    meta_log: InteractionLog

    def split_queries(self) -> tuple[list[Query], list[Query]]:
        train_ids = self.train_log.query_ids()
        meta_ids = self.meta_log.query_ids()
        train = [q for q in self.queries if q.query_id in train_ids]
        meta = [q for q in self.queries if q.query_id in meta_ids]
        return train, meta


def _zscore(x: np.ndarray) -> np.ndarray:
    std = x.std()
    if std < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _blend(signals: Mapping[str, np.ndarray], weights: Mapping[str, float]) -> np.ndarray:
    rel = np.zeros_like(next(iter(signals.values())))
    for name, w in weights.items():
        rel += w * _zscore(signals[name])
    return _zscore(rel)


def generate(spec: GeneratorSpec) -> GeneratedData:
    """Produce (corpus, queries, train log, meta log), fully determined by
    the generator seed."""
    errs = spec.violations()
    if errs:
        raise ValueError("invalid generator spec: " + "; ".join(errs))
    rng = np.random.default_rng(spec.seed)
    n_topics = max(2, int(round(math.sqrt(spec.n_queries))))
    centers = rng.normal(0.0, 1.0, (n_topics, spec.embedding_dim))
    signature = [[f"t{t:02d}s{j}" for j in range(6)] for t in range(n_topics)]
    n_global = max(10, spec.vocab_size - 6 * n_topics)
    global_terms = [f"g{i:04d}" for i in range(n_global)]
    zipf = 1.0 / np.arange(1.0, n_global + 1.0) ** 1.1
    zipf /= zipf.sum()

    corpus = []
    for i in range(spec.n_items):
        topic = int(rng.integers(0, n_topics))
        emb = centers[topic] + 0.45 * rng.normal(0.0, 1.0, spec.embedding_dim)
        tokens = [global_terms[j] for j in rng.choice(n_global, size=5, p=zipf)]
        tokens += [signature[topic][int(j)] for j in rng.integers(0, 6, size=3)]
        tokens.append(f"category:c{topic:02d}")
        popularity = {}
        for fi, feat in enumerate(spec.popularity_features):
            popularity[feat] = float(np.floor(rng.lognormal(mean=3.0 - 0.8 * fi, sigma=1.2)))
        corpus.append(
            Document(
                item_id=f"i{i:04d}",
                tokens=tuple(tokens),
                embedding=emb,
                popularity=popularity,
            )
        )

    def make_queries(start: int, count: int) -> list[Query]:
        out = []
        for qi in range(start, start + count):
            topic = int(rng.integers(0, n_topics))
            emb = centers[topic] + 0.45 * rng.normal(0.0, 1.0, spec.embedding_dim)
            tokens = [signature[topic][int(j)] for j in rng.integers(0, 6, size=2)]
            tokens.append(global_terms[int(rng.choice(n_global, p=zipf))])
            out.append(Query(query_id=f"q{qi:04d}", tokens=tuple(tokens), embedding=emb))
        return out

    train_queries = make_queries(0, spec.n_queries)
    meta_queries = make_queries(spec.n_queries, spec.n_queries)

    item_token_sets = [set(d.tokens) for d in corpus]
    emb_matrix = np.array([d.embedding for d in corpus])
    emb_norms = np.linalg.norm(emb_matrix, axis=1)
    emb_unit = emb_matrix / np.where(emb_norms > 0, emb_norms, 1.0)[:, None]
    pop_signals = {
        feat: np.log1p(np.array([d.popularity[feat] for d in corpus]))
        for feat in spec.popularity_features
    }

    def build_log(queries: Sequence[Query]) -> InteractionLog:
        rows = {}
        for q in queries:
            q_tokens = set(q.tokens)
            signals = {
                "lexical": np.array(
                    [float(len(q_tokens & toks)) for toks in item_token_sets]
                ),
                "dense": emb_unit @ (q.embedding / np.linalg.norm(q.embedding)),
            }
            signals.update(pop_signals)
            p_click = np.clip(
                spec.funnel.base_ctr * _sigmoid(_REL_SLOPE * _blend(signals, spec.true_weights)),
                0.0,
                1.0,
            )
            if spec.conversion_weights is None:
                p_cart = np.full(spec.n_items, spec.funnel.click_to_cart)
            else:
                p_cart = np.clip(
                    spec.funnel.click_to_cart
                    * _sigmoid(_REL_SLOPE * _blend(signals, spec.conversion_weights)),
                    0.0,
                    1.0,
                )
            clicks = rng.binomial(spec.impressions_per_pair, p_click)
            carts = rng.binomial(clicks, p_cart)
            purchases = rng.binomial(carts, spec.funnel.cart_to_purchase)
            for i, doc in enumerate(corpus):
                rows[(q.query_id, doc.item_id)] = Interaction(
                    impressions=spec.impressions_per_pair,
                    clicks=int(clicks[i]),
                    carts=int(carts[i]),
                    purchases=int(purchases[i]),
                )
        return InteractionLog(rows)

    train_log = build_log(train_queries)
    meta_log = build_log(meta_queries)
    return GeneratedData(
        corpus=corpus,
        queries=train_queries + meta_queries,
        train_log=train_log,
        meta_log=meta_log,
    )


@dataclass
class OracleResult:
    best_config: HPConfig
    best_weighted: float
    per_objective_best: tuple[float, ...]  # raw orientation, per objective
    n_configs: int


def oracle_best(
    corpus: Sequence[Document] | SearchIndex,
    queries: Sequence[Query],
    log: InteractionLog,
    specs: Sequence[ObjectiveSpec],
    weights: Sequence[float],
    transform_spec: TransformSpec,
    space: SearchSpace,
    resolution: int = 9,
    cap: int = 50000,
    parallel: int = 1,
) -> OracleResult:
    """Exhaustively score every grid configuration through the identical
    transform -> search -> evaluate path.

    Range params are discretized to ``resolution`` points first. Refuses
    spaces whose combination count exceeds ``cap``.
    """
    grid_space = as_grid(space, resolution).require_valid()
    sizes = [len(p.values) for p in grid_space]
    total = math.prod(sizes)
    if total > cap:
        raise OracleRefusal(f"{total} grid configurations exceed the cap of {cap}")
    index = corpus if isinstance(corpus, SearchIndex) else index_build(corpus)
    evaluator = Evaluator.from_log(index, queries, log, specs, transform_spec, parallel=parallel)
    directions = [s.direction for s in specs]
    names = grid_space.names
    best_config = None
    best_weighted = -math.inf
    best_obj = np.full(len(specs), -math.inf)
    for combo in itertools.product(*[p.values for p in grid_space]):
        config = HPConfig(dict(zip(names, combo)))
        z = evaluator.evaluate(config)
        w = weighted_sum_reduce(z, weights, directions)
        if w > best_weighted:
            best_weighted = w
            best_config = config
        for m, d in enumerate(directions):
            canon = z[m] if d == "maximize" else -z[m]
            if canon > best_obj[m]:
                best_obj[m] = canon
    per_obj = tuple(
        float(v if d == "maximize" else -v) for v, d in zip(best_obj, directions)
    )
    return OracleResult(
        best_config=best_config,
        best_weighted=float(best_weighted),
        per_objective_best=per_obj,
        n_configs=total,
    )
