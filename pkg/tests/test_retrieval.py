import math

import numpy as np
import pytest

from searchtune.errors import BuildError, ConfigError, MultiSearchError
from searchtune.retrieval import (
    Document,
    Query,
    QueryRequest,
    TransformSpec,
    bm25_score,
    document_from_dict,
    document_to_dict,
    dump_corpus,
    dump_queries,
    index_build,
    load_corpus,
    load_queries,
    multi_search,
    query_from_dict,
    query_to_dict,
    search,
    transform,
)
from searchtune.space import HPConfig


def doc(item_id, tokens=(), emb=(0.0, 0.0), **pop):
    return Document(item_id=item_id, tokens=tuple(tokens), embedding=np.array(emb, float), popularity=pop)


def tiny_corpus():
    return [
        doc("i1", ["sofa", "blue"], (1.0, 0.0), views=10, sells=2),
        doc("i2", ["table", "blue"], (0.0, 1.0), views=100, sells=1),
        doc("i3", ["lamp"], (0.7, 0.7), views=5, sells=9),
    ]


class TestIndexBuild:
    def test_document_frequency_and_counts(self):
        corpus = [doc("a", ["sofa", "x"]), doc("b", ["y", "z"])]
        index = index_build(corpus)
        assert index.n_docs == 2
        assert index.df["sofa"] == 1
        assert index.df.get("missing") is None

    def test_empty_corpus_rejected(self):
        with pytest.raises(BuildError, match="empty corpus"):
            index_build([])

    def test_dimension_mismatch_rejected(self):
        corpus = [doc("a", ["x"], (1.0, 0.0)), doc("b", ["y"], (1.0, 0.0, 0.0))]
        with pytest.raises(BuildError, match="dimension"):
            index_build(corpus)

    def test_duplicate_item_id_rejected(self):
        with pytest.raises(BuildError, match="duplicate"):
            index_build([doc("a", ["x"]), doc("a", ["y"])])

    def test_reserved_popularity_name_rejected(self):
        with pytest.raises(BuildError, match="reserved"):
            index_build([Document("a", ("x",), np.zeros(2), {"dense": 1.0})])

    def test_postings_recount_oracle(self):
        rng = np.random.default_rng(17)
        vocab = [f"w{i}" for i in range(40)]
        corpus = [
            doc(f"d{i:03d}", rng.choice(vocab, size=rng.integers(1, 12)).tolist())
            for i in range(100)
        ]
        index = index_build(corpus)
        distinct_pairs = sum(len(set(d.tokens)) for d in corpus)
        postings_total = sum(docs.shape[0] for docs, _ in index.postings.values())
        assert postings_total == distinct_pairs
        assert sum(index.df.values()) == distinct_pairs


class TestBM25:
    def test_absent_term_contributes_zero(self):
        index = index_build([doc("a", ["sofa"]), doc("b", ["table"])])
        assert bm25_score(index, ["chair"], "a") == 0.0

    def test_ln2_case(self):
        # N=2, df=1, tf=1, len=avgdl: idf = ln 2 and the tf part equals 1
        index = index_build([doc("a", ["sofa", "x"]), doc("b", ["y", "z"])])
        assert bm25_score(index, ["sofa"], "a") == pytest.approx(math.log(2.0))
        assert bm25_score(index, ["sofa"], "b") == 0.0

    def test_duplicate_query_term_doubles_contribution(self):
        index = index_build([doc("a", ["sofa", "x"]), doc("b", ["y", "z"])])
        one = bm25_score(index, ["sofa"], "a")
        two = bm25_score(index, ["sofa", "sofa"], "a")
        assert two == pytest.approx(2.0 * one)


class TestTransform:
    mapping = TransformSpec.from_dict(
        {
            "weights": {"lexical": "a", "dense": 0.25},
            "candidate_k": 50,
            "normalization": "minmax",
        }
    )

    def test_direct_binding(self):
        req = transform(HPConfig({"a": 0.7, "unused": 1.0}), Query("q1"), self.mapping)
        assert req.weights["lexical"] == pytest.approx(0.7)
        assert req.weights["dense"] == pytest.approx(0.25)
        assert req.candidate_k == 50
        assert req.normalization == "minmax"

    def test_all_zero_weights_rejected(self):
        mapping = TransformSpec.from_dict({"weights": {"lexical": "a", "dense": "b"}})
        with pytest.raises(ConfigError, match="non-zero"):
            transform(HPConfig({"a": 0.0, "b": 0.0}), Query("q1"), mapping)

    def test_unmapped_param_is_ignored(self):
        r1 = transform(HPConfig({"a": 0.7, "other": 1.0}), Query("q1"), self.mapping)
        r2 = transform(HPConfig({"a": 0.7, "other": 2.0}), Query("q1"), self.mapping)
        assert r1 == r2

    def test_missing_param_is_config_error(self):
        with pytest.raises(ConfigError, match="absent from the config"):
            transform(HPConfig({"b": 1.0}), Query("q1"), self.mapping)

    def test_unknown_transform_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown transform field"):
            TransformSpec.from_dict({"weights": {"lexical": 1.0}, "boost": 2.0})


def brute_force_search(corpus, request, query):
    """Independent implementation: explicit per-document scoring and sort."""
    n = len(corpus)
    avgdl = sum(len(d.tokens) for d in corpus) / n
    features = sorted({f for d in corpus for f in d.popularity})
    signal_names = ["lexical", "dense"] + features
    columns = {}
    q_tokens = list(query.tokens) + (
        [f"category:{query.category_id}"] if query.category_id else []
    )
    lex = []
    for d in corpus:
        s = 0.0
        for term in q_tokens:
            tf = sum(1 for t in d.tokens if t == term)
            if tf == 0:
                continue
            df = sum(1 for dd in corpus if term in dd.tokens)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            denom = tf + request.bm25_k1 * (1 - request.bm25_b + request.bm25_b * len(d.tokens) / avgdl)
            s += idf * tf * (request.bm25_k1 + 1.0) / denom
        lex.append(s)
    columns["lexical"] = lex
    dense = []
    for d in corpus:
        if query.embedding is None:
            dense.append(0.0)
            continue
        qn = np.linalg.norm(query.embedding)
        dn = np.linalg.norm(d.embedding)
        if qn == 0 or dn == 0:
            dense.append(0.0)
        else:
            dense.append(float(np.dot(query.embedding, d.embedding) / (qn * dn)))
    columns["dense"] = dense
    for f in features:
        columns[f] = [math.log1p(d.popularity.get(f, 0.0)) for d in corpus]
    scored = []
    for i, d in enumerate(corpus):
        total = 0.0
        for s in signal_names:
            w = request.weights.get(s, 0.0)
            if w == 0.0:
                continue
            col = columns[s]
            v = col[i]
            if request.normalization == "minmax":
                lo, hi = min(col), max(col)
                v = (v - lo) / (hi - lo) if hi > lo else 0.0
            total += w * v
        scored.append((d.item_id, total))
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return scored[: request.candidate_k]


class TestSearch:
    def test_matching_embedding_ranks_first(self):
        index = index_build(tiny_corpus())
        req = QueryRequest("q", {"dense": 1.0}, candidate_k=3)
        ranked = search(index, req, Query("q", embedding=np.array([1.0, 0.0])))
        assert ranked.item_ids()[0] == "i1"

    def test_single_popularity_signal_sorts_by_counts(self):
        index = index_build(tiny_corpus())
        req = QueryRequest("q", {"views": 1.0}, candidate_k=3)
        ranked = search(index, req, Query("q", tokens=("whatever",)))
        assert ranked.item_ids() == ("i2", "i1", "i3")  # views 100, 10, 5

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(23)
        vocab = [f"w{i}" for i in range(12)]
        corpus = [
            Document(
                item_id=f"d{i}",
                tokens=tuple(rng.choice(vocab, size=rng.integers(1, 6)).tolist()),
                embedding=rng.normal(size=3),
                popularity={"views": float(rng.integers(0, 50)), "sells": float(rng.integers(0, 9))},
            )
            for i in range(5)
        ]
        index = index_build(corpus)
        for norm in ("none", "minmax"):
            for trial in range(10):
                req = QueryRequest(
                    "q",
                    weights={
                        "lexical": float(rng.uniform(0, 2)),
                        "dense": float(rng.uniform(0, 2)),
                        "views": float(rng.uniform(0, 1)),
                        "sells": float(rng.uniform(0, 1)),
                    },
                    candidate_k=5,
                    normalization=norm,
                )
                query = Query("q", tokens=tuple(rng.choice(vocab, size=2).tolist()), embedding=rng.normal(size=3))
                got = search(index, req, query)
                want = brute_force_search(corpus, req, query)
                assert got.item_ids() == tuple(i for i, _ in want)
                for (_, gs), (_, ws) in zip(got.items, want):
                    assert gs == pytest.approx(ws, abs=1e-12)

    def test_corpus_permutation_invariance(self):
        corpus = tiny_corpus()
        req = QueryRequest("q", {"lexical": 1.0, "views": 0.5}, candidate_k=3)
        query = Query("q", tokens=("blue",))
        a = search(index_build(corpus), req, query)
        b = search(index_build(corpus[::-1]), req, query)
        assert a == b

    def test_ties_break_by_item_id(self):
        corpus = [doc("b", ["x"], views=7), doc("a", ["x"], views=7), doc("c", ["x"], views=1)]
        index = index_build(corpus)
        ranked = search(index, QueryRequest("q", {"views": 1.0}, 3), Query("q", tokens=("x",)))
        assert ranked.item_ids() == ("a", "b", "c")

    def test_weight_scale_invariance(self):
        index = index_build(tiny_corpus())
        query = Query("q", tokens=("blue",), embedding=np.array([0.5, 0.5]))
        r1 = search(index, QueryRequest("q", {"lexical": 0.4, "dense": 0.3, "views": 0.1}, 3), query)
        r2 = search(index, QueryRequest("q", {"lexical": 4.0, "dense": 3.0, "views": 1.0}, 3), query)
        assert r1.item_ids() == r2.item_ids()

    def test_candidate_k_truncates(self):
        index = index_build(tiny_corpus())
        ranked = search(index, QueryRequest("q", {"views": 1.0}, 2), Query("q", tokens=("x",)))
        assert len(ranked.items) == 2

    def test_category_only_query_uses_category_token(self):
        corpus = [doc("a", ["category:c7", "sofa"]), doc("b", ["table"])]
        index = index_build(corpus)
        ranked = search(index, QueryRequest("q", {"lexical": 1.0}, 2), Query("q", category_id="c7"))
        assert ranked.item_ids()[0] == "a"

    def test_unknown_signal_rejected(self):
        index = index_build(tiny_corpus())
        with pytest.raises(ConfigError, match="unknown signal"):
            search(index, QueryRequest("q", {"clicks": 1.0}, 2), Query("q", tokens=("x",)))


class TestMultiSearch:
    def test_singleton_batch_equals_search(self):
        index = index_build(tiny_corpus())
        req = QueryRequest("q1", {"lexical": 1.0}, 3)
        q = Query("q1", tokens=("blue",))
        assert multi_search(index, [req], [q]) == [search(index, req, q)]

    def test_batch_equals_elementwise_and_parallel_agrees(self):
        index = index_build(tiny_corpus())
        rng = np.random.default_rng(3)
        reqs, qs = [], []
        for i in range(8):
            reqs.append(
                QueryRequest(
                    f"q{i}",
                    {"lexical": float(rng.uniform(0.1, 1)), "views": float(rng.uniform(0, 1))},
                    3,
                )
            )
            qs.append(Query(f"q{i}", tokens=("blue",) if i % 2 else ("lamp",)))
        serial = multi_search(index, reqs, qs)
        threaded = multi_search(index, reqs, qs, parallel=4)
        expected = [search(index, r, q) for r, q in zip(reqs, qs)]
        assert serial == expected
        assert threaded == expected

    def test_error_carries_batch_position(self):
        index = index_build(tiny_corpus())
        good = QueryRequest("q0", {"lexical": 1.0}, 3)
        bad = QueryRequest("q1", {"lexical": 0.0}, 3)  # violates non-zero weight
        with pytest.raises(MultiSearchError) as exc:
            multi_search(index, [good, bad], [Query("q0", tokens=("x",)), Query("q1", tokens=("x",))])
        assert exc.value.position == 1


class TestIO:
    def test_document_round_trip(self, tmp_path):
        corpus = tiny_corpus()
        path = tmp_path / "corpus.jsonl"
        dump_corpus(corpus, path)
        loaded = load_corpus(path)
        assert [d.item_id for d in loaded] == [d.item_id for d in corpus]
        assert loaded[0].popularity == {"sells": 2.0, "views": 10.0}
        assert np.allclose(loaded[2].embedding, corpus[2].embedding)

    def test_query_round_trip(self, tmp_path):
        queries = [
            Query("q1", tokens=("a", "b"), embedding=np.array([0.1, 0.2])),
            Query("q2", category_id="c3"),
        ]
        path = tmp_path / "queries.jsonl"
        dump_queries(queries, path)
        loaded = load_queries(path)
        assert loaded[0].tokens == ("a", "b")
        assert loaded[1].category_id == "c3"
        assert loaded[1].embedding is None

    def test_dict_field_names(self):
        d = document_to_dict(tiny_corpus()[0])
        assert list(d) == ["item_id", "tokens", "embedding", "popularity"]
        q = query_to_dict(Query("q1", tokens=("a",)))
        assert list(q) == ["query_id", "tokens", "embedding", "category_id"]
        assert document_from_dict(d).item_id == "i1"
        assert query_from_dict(q).query_id == "q1"
