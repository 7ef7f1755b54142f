"""In-memory retrieval engine whose ranking formula is reshaped per trial.

Every document is scored as a weighted blend of three signal families:
BM25 over an inverted index (lexical), exact cosine against a dense
embedding, and log-damped popularity counts. A transform mapping binds
hyperparameters to the request fields (signal weights, candidate depth,
normalization, BM25 constants), so each sampled configuration yields a
different ranking strategy over the same index.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import BuildError, ConfigError, MultiSearchError
from .space import HPConfig

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
RESERVED_SIGNALS = ("lexical", "dense")


@dataclass(frozen=True, eq=False)
class Document:
    item_id: str
    tokens: tuple[str, ...]
    embedding: np.ndarray
    popularity: Mapping[str, float]


@dataclass(frozen=True, eq=False)
class Query:
    query_id: str
    tokens: tuple[str, ...] = ()
    embedding: np.ndarray | None = None
    category_id: str | None = None

    def lexical_tokens(self) -> tuple[str, ...]:
        """Token bag used for BM25; a category id folds in as a token."""
        if self.category_id is not None:
            return self.tokens + (f"category:{self.category_id}",)
        return self.tokens


@dataclass(frozen=True)
class QueryRequest:
    """Concrete search request produced by the transform function."""

    query_id: str
    weights: Mapping[str, float]
    candidate_k: int
    normalization: str = "none"  # none | minmax
    bm25_k1: float = DEFAULT_K1
    bm25_b: float = DEFAULT_B

    def violations(self) -> list[str]:
        errs = []
        if self.candidate_k < 1:
            errs.append(f"candidate_k must be >= 1, got {self.candidate_k}")
        if self.normalization not in ("none", "minmax"):
            errs.append(f"unknown normalization {self.normalization!r}")
        if not any(w != 0 for w in self.weights.values()):
            errs.append("at least one signal weight must be non-zero")
        return errs


@dataclass(frozen=True)
class RankedList:
    query_id: str
    items: tuple[tuple[str, float], ...]

    def item_ids(self) -> tuple[str, ...]:
        return tuple(i for i, _ in self.items)


class SearchIndex:
    """Immutable index over a corpus; any number of searches may share it."""

    def __init__(self, corpus: Sequence[Document]):
        if not corpus:
            raise BuildError("cannot build an index over an empty corpus")
        ids = [d.item_id for d in corpus]
        if len(set(ids)) != len(ids):
            raise BuildError("duplicate item_id in corpus")
        docs = sorted(corpus, key=lambda d: d.item_id)  # ties in scores break by item_id
        dims = {int(np.asarray(d.embedding).shape[0]) for d in docs}
        if len(dims) != 1:
            raise BuildError(f"embedding dimension must be uniform across the corpus, got {sorted(dims)}")
        self.dim = dims.pop()
        self.item_ids = tuple(d.item_id for d in docs)
        self.n_docs = len(docs)

        feats: set[str] = set()
        for d in docs:
            for name, count in d.popularity.items():
                if name in RESERVED_SIGNALS:
                    raise BuildError(f"popularity feature name {name!r} is reserved")
                if count < 0:
                    raise BuildError(f"negative popularity count for {d.item_id!r}/{name!r}")
                feats.add(name)
        self.popularity_features = tuple(sorted(feats))
        self.signal_names = RESERVED_SIGNALS + self.popularity_features

        pop = np.zeros((self.n_docs, len(self.popularity_features)))
        for i, d in enumerate(docs):
            for j, name in enumerate(self.popularity_features):
                pop[i, j] = float(d.popularity.get(name, 0.0))
        self.pop_counts = pop
        self.pop_log = np.log1p(pop)

        emb = np.array([np.asarray(d.embedding, dtype=np.float64) for d in docs])
        norms = np.linalg.norm(emb, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        self.emb_unit = emb / safe[:, None]

        postings: dict[str, list[tuple[int, int]]] = {}
        self.doc_len = np.zeros(self.n_docs)
        for i, d in enumerate(docs):
            self.doc_len[i] = len(d.tokens)
            counts: dict[str, int] = {}
            for tok in d.tokens:
                counts[tok] = counts.get(tok, 0) + 1
            for term, tf in counts.items():
                postings.setdefault(term, []).append((i, tf))
        self.postings = {
            term: (
                np.array([p[0] for p in plist], dtype=np.int64),
                np.array([p[1] for p in plist], dtype=np.float64),
            )
            for term, plist in postings.items()
        }
        self.df = {term: len(plist) for term, plist in postings.items()}
        self.avgdl = float(self.doc_len.mean())

        self._lex_cache: dict[tuple, np.ndarray] = {}
        self._cos_cache: dict[bytes, np.ndarray] = {}
        self._len_norm_cache: dict[tuple[float, float], np.ndarray] = {}

    def doc_index(self, item_id: str) -> int:
        try:
            return self.item_ids.index(item_id)
        except ValueError:
            raise KeyError(item_id) from None

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def _len_norm(self, k1: float, b: float) -> np.ndarray:
        key = (k1, b)
        cached = self._len_norm_cache.get(key)
        if cached is None:
            cached = k1 * (1.0 - b + b * self.doc_len / self.avgdl)
            self._len_norm_cache[key] = cached
        return cached

    def bm25_vector(self, tokens: Sequence[str], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> np.ndarray:
        """BM25 scores of a token bag against every document (cached)."""
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        key = (tuple(sorted(counts.items())), k1, b)
        cached = self._lex_cache.get(key)
        if cached is not None:
            return cached
        terms = [t for t in sorted(counts) if t in self.postings]
        doc_chunks = [self.postings[t][0] for t in terms]
        tf_chunks = [self.postings[t][1] for t in terms]
        starts = np.zeros(len(terms) + 1, dtype=np.int64)
        for i, chunk in enumerate(doc_chunks):
            starts[i + 1] = starts[i] + chunk.shape[0]
        post_docs = np.concatenate(doc_chunks) if terms else np.zeros(0, dtype=np.int64)
        post_tfs = np.concatenate(tf_chunks) if terms else np.zeros(0)
        coef = np.array([counts[t] * self.idf(t) * (k1 + 1.0) for t in terms])
        scores = kernels.bm25_accumulate(
            self.n_docs, starts, post_docs, post_tfs, coef, self._len_norm(k1, b)
        )
        self._lex_cache[key] = scores
        return scores

    def cosine_vector(self, embedding: np.ndarray | None) -> np.ndarray:
        """Cosine similarity of a query embedding against every document."""
        if embedding is None:
            return np.zeros(self.n_docs)
        q = np.asarray(embedding, dtype=np.float64)
        if q.shape[0] != self.dim:
            raise ConfigError(f"query embedding has dim {q.shape[0]}, index has {self.dim}")
        key = q.tobytes()
        cached = self._cos_cache.get(key)
        if cached is None:
            norm = np.linalg.norm(q)
            cached = self.emb_unit @ (q / norm if norm > 0 else q)
            self._cos_cache[key] = cached
        return cached

    def search_indices(self, request: QueryRequest, query: Query) -> tuple[np.ndarray, np.ndarray]:
        """Internal search path: (ranked doc indices, their blended scores)."""
        errs = request.violations()
        if errs:
            raise ConfigError("invalid request: " + "; ".join(errs))
        unknown = set(request.weights) - set(self.signal_names)
        if unknown:
            raise ConfigError(f"unknown signal(s) in request: {sorted(unknown)}")
        active = [s for s in self.signal_names if request.weights.get(s, 0.0) != 0.0]
        cols = []
        for s in active:
            if s == "lexical":
                cols.append(self.bm25_vector(query.lexical_tokens(), request.bm25_k1, request.bm25_b))
            elif s == "dense":
                cols.append(self.cosine_vector(query.embedding))
            else:
                cols.append(self.pop_log[:, self.popularity_features.index(s)])
        signals = np.ascontiguousarray(np.stack(cols, axis=1))
        w = np.array([request.weights[s] for s in active])
        scores = kernels.blend_scores(signals, w, request.normalization == "minmax")
        idx = kernels.topk_desc(scores, int(request.candidate_k))
        return idx, scores[idx]


def index_build(corpus: Sequence[Document]) -> SearchIndex:
    return SearchIndex(corpus)


def bm25_score(index: SearchIndex, q_tokens: Sequence[str], item_id: str) -> float:
    """BM25 of one document against a query token bag (absent terms score 0)."""
    return float(index.bm25_vector(tuple(q_tokens))[index.doc_index(item_id)])


def search(index: SearchIndex, request: QueryRequest, query: Query) -> RankedList:
    idx, scores = index.search_indices(request, query)
    return RankedList(
        query_id=query.query_id,
        items=tuple((index.item_ids[int(i)], float(s)) for i, s in zip(idx, scores)),
    )


def multi_search(
    index: SearchIndex,
    requests: Sequence[QueryRequest],
    queries: Sequence[Query],
    parallel: int = 1,
) -> list[RankedList]:
    """Element-wise search over an aligned batch; output order is by batch
    position regardless of scheduling."""
    if len(requests) != len(queries):
        raise ConfigError(f"batch mismatch: {len(requests)} requests vs {len(queries)} queries")

    def one(pos: int) -> RankedList:
        try:
            return search(index, requests[pos], queries[pos])
        except Exception as exc:  # noqa: BLE001 - annotate with batch position
            raise MultiSearchError(pos, exc) from exc

    if parallel > 1 and len(requests) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(one, range(len(requests))))
    return [one(i) for i in range(len(requests))]


@dataclass(frozen=True)
class Binding:
    """A request field bound either to a constant or to a hyperparameter."""

    const: Any = None
    param: str | None = None

    def resolve(self, config: HPConfig) -> Any:
        if self.param is None:
            return self.const
        if self.param not in config:
            raise ConfigError(f"transform references param {self.param!r} absent from the config")
        return config[self.param]


def _parse_binding(raw: Any, *, string_consts: tuple[str, ...] = ()) -> Binding:
    if isinstance(raw, Binding):
        return raw
    if isinstance(raw, Mapping):
        if "param" in raw:
            return Binding(param=str(raw["param"]))
        if "const" in raw:
            return Binding(const=raw["const"])
        raise ConfigError(f"binding must carry 'const' or 'param', got {raw!r}")
    if isinstance(raw, str):
        if raw in string_consts:
            return Binding(const=raw)
        return Binding(param=raw)
    return Binding(const=raw)


@dataclass(frozen=True)
class TransformSpec:
    """Declarative mapping from hyperparameters to request fields.

    Weight entries map signal names to bindings; a bare string is read as a
    param name and a number as a constant. For ``normalization`` the strings
    ``none``/``minmax`` are constants, anything else a param name. Unmapped
    signals default to weight 0.
    """

    weights: Mapping[str, Binding]
    candidate_k: Binding = field(default_factory=lambda: Binding(const=100))
    normalization: Binding = field(default_factory=lambda: Binding(const="none"))
    bm25_k1: Binding = field(default_factory=lambda: Binding(const=DEFAULT_K1))
    bm25_b: Binding = field(default_factory=lambda: Binding(const=DEFAULT_B))

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "TransformSpec":
        known = {"weights", "candidate_k", "normalization", "bm25_k1", "bm25_b"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown transform field(s): {sorted(unknown)}")
        weights_raw = raw.get("weights")
        if not weights_raw:
            raise ConfigError("transform.weights must bind at least one signal")
        weights = {str(s): _parse_binding(v) for s, v in weights_raw.items()}
        spec = cls(weights=weights)
        if "candidate_k" in raw:
            spec = replace(spec, candidate_k=_parse_binding(raw["candidate_k"]))
        if "normalization" in raw:
            spec = replace(
                spec, normalization=_parse_binding(raw["normalization"], string_consts=("none", "minmax"))
            )
        if "bm25_k1" in raw:
            spec = replace(spec, bm25_k1=_parse_binding(raw["bm25_k1"]))
        if "bm25_b" in raw:
            spec = replace(spec, bm25_b=_parse_binding(raw["bm25_b"]))
        return spec

    def param_names(self) -> set[str]:
        names = {b.param for b in self.weights.values() if b.param}
        for b in (self.candidate_k, self.normalization, self.bm25_k1, self.bm25_b):
            if b.param:
                names.add(b.param)
        return names


def transform(config: HPConfig, query: Query, mapping: TransformSpec) -> QueryRequest:
    """Pure mapping (config, query) -> request; identical inputs give
    identical requests."""
    weights = {s: float(b.resolve(config)) for s, b in mapping.weights.items()}
    request = QueryRequest(
        query_id=query.query_id,
        weights=weights,
        candidate_k=int(mapping.candidate_k.resolve(config)),
        normalization=str(mapping.normalization.resolve(config)),
        bm25_k1=float(mapping.bm25_k1.resolve(config)),
        bm25_b=float(mapping.bm25_b.resolve(config)),
    )
    errs = request.violations()
    if errs:
        raise ConfigError("transform produced an invalid request: " + "; ".join(errs))
    return request


def document_to_dict(doc: Document) -> dict:
    return {
        "item_id": doc.item_id,
        "tokens": list(doc.tokens),
        "embedding": [float(v) for v in np.asarray(doc.embedding)],
        "popularity": {k: float(v) for k, v in sorted(doc.popularity.items())},
    }


def document_from_dict(d: Mapping[str, Any]) -> Document:
    return Document(
        item_id=str(d["item_id"]),
        tokens=tuple(d["tokens"]),
        embedding=np.asarray(d["embedding"], dtype=np.float64),
        popularity=dict(d.get("popularity", {})),
    )


def query_to_dict(q: Query) -> dict:
    return {
        "query_id": q.query_id,
        "tokens": list(q.tokens),
        "embedding": None if q.embedding is None else [float(v) for v in np.asarray(q.embedding)],
        "category_id": q.category_id,
    }


def query_from_dict(d: Mapping[str, Any]) -> Query:
    emb = d.get("embedding")
    return Query(
        query_id=str(d["query_id"]),
        tokens=tuple(d.get("tokens", ())),
        embedding=None if emb is None else np.asarray(emb, dtype=np.float64),
        category_id=d.get("category_id"),
    )


def dump_jsonl(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def load_corpus(path: str | Path) -> list[Document]:
    return [document_from_dict(d) for d in load_jsonl(path)]


def load_queries(path: str | Path) -> list[Query]:
    return [query_from_dict(d) for d in load_jsonl(path)]


def dump_corpus(corpus: Sequence[Document], path: str | Path) -> None:
    dump_jsonl((document_to_dict(d) for d in corpus), path)


def dump_queries(queries: Sequence[Query], path: str | Path) -> None:
    dump_jsonl((query_to_dict(q) for q in queries), path)
