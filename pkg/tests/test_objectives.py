import math

import numpy as np
import pytest

from searchtune.errors import StudyError
from searchtune.objectives import (
    Interaction,
    InteractionLog,
    Label,
    LabelSet,
    MetricSpec,
    ObjectiveSpec,
    Smoothing,
    derive_labels,
    evaluate_objectives,
    map_at_k,
    ndcg_at_k,
    precision_at_k,
    recall_at_k,
)
from searchtune.retrieval import RankedList


def ranked(qid, *item_ids):
    return RankedList(query_id=qid, items=tuple((i, 1.0 / (r + 1)) for r, i in enumerate(item_ids)))


def labels_from(qid, graded=None, positives=()):
    graded = graded or {}
    items = {}
    for iid, g in graded.items():
        items[iid] = Label(graded=g, positive=iid in positives)
    for iid in positives:
        if iid not in items:
            items[iid] = Label(graded=1.0, positive=True)
    return LabelSet({qid: items})


def ctr_spec(**kw):
    defaults = dict(
        name="ctr",
        numerator_event="clicks",
        positive_threshold=0.5,
        metrics=(MetricSpec("precision", 3),),
        min_impressions=0,
    )
    defaults.update(kw)
    return ObjectiveSpec(**defaults)


class TestDeriveLabels:
    def test_serp_train_aggregate_rate(self):
        # aggregate engagement counts of a production-scale log split
        log = InteractionLog(
            {("q", "i"): Interaction(impressions=367_540_000, clicks=12_020_000, carts=0, purchases=0)}
        )
        ls = derive_labels(log, ctr_spec(min_impressions=10))
        assert abs(ls.items_for("q")["i"].graded - 0.0327) < 1e-4

    def test_beta_prior_mean_with_no_data(self):
        log = InteractionLog({("q", "i"): Interaction(0, 0, 0, 0)})
        ls = derive_labels(log, ctr_spec(smoothing=Smoothing(1.0, 1.0)))
        assert ls.items_for("q")["i"].graded == pytest.approx(0.5)

    def test_smoothing_arithmetic(self):
        log = InteractionLog({("q", "i"): Interaction(100, 2, 0, 0)})
        ls = derive_labels(log, ctr_spec(smoothing=Smoothing(1.0, 99.0)))
        assert ls.items_for("q")["i"].graded == pytest.approx(0.015)

    def test_zero_impressions_without_smoothing_skipped(self):
        log = InteractionLog({("q", "i"): Interaction(0, 0, 0, 0)})
        ls = derive_labels(log, ctr_spec())
        assert not ls.has_query("q")

    def test_min_impressions_filter(self):
        log = InteractionLog(
            {("q", "a"): Interaction(9, 1, 0, 0), ("q", "b"): Interaction(10, 1, 0, 0)}
        )
        ls = derive_labels(log, ctr_spec(min_impressions=10))
        assert set(ls.items_for("q")) == {"b"}

    def test_positive_threshold(self):
        log = InteractionLog(
            {("q", "a"): Interaction(10, 5, 0, 0), ("q", "b"): Interaction(10, 4, 0, 0)}
        )
        ls = derive_labels(log, ctr_spec(positive_threshold=0.5))
        assert ls.items_for("q")["a"].positive
        assert not ls.items_for("q")["b"].positive

    def test_label_monotone_in_numerator(self):
        rng = np.random.default_rng(2)
        for smoothing in (None, Smoothing(1.0, 30.0)):
            spec = ctr_spec(smoothing=smoothing, min_impressions=1)
            for _ in range(50):
                imp = int(rng.integers(1, 200))
                clicks = int(rng.integers(0, imp))
                log_lo = InteractionLog({("q", "i"): Interaction(imp, clicks, 0, 0)})
                log_hi = InteractionLog({("q", "i"): Interaction(imp, min(clicks + 1, imp), 0, 0)})
                lo = derive_labels(log_lo, spec).items_for("q")["i"].graded
                hi = derive_labels(log_hi, spec).items_for("q")["i"].graded
                assert hi >= lo

    def test_numerator_event_selection(self):
        log = InteractionLog({("q", "i"): Interaction(100, 50, 20, 10)})
        for event, expected in (("clicks", 0.5), ("carts", 0.2), ("purchases", 0.1)):
            ls = derive_labels(log, ctr_spec(numerator_event=event))
            assert ls.items_for("q")["i"].graded == pytest.approx(expected)

    def test_funnel_inconsistency_rejected(self):
        with pytest.raises(ValueError, match="exceed impressions"):
            InteractionLog({("q", "i"): Interaction(10, 11, 0, 0)})


class TestPrecision:
    def test_top3_two_hits(self):
        lv = labels_from("q", positives={"A", "C"})
        assert precision_at_k(ranked("q", "A", "B", "C"), lv, 3) == pytest.approx(2 / 3)

    def test_no_positives_is_zero(self):
        lv = labels_from("q", graded={"A": 0.1})
        assert precision_at_k(ranked("q", "A", "B"), lv, 3) == 0.0

    def test_query_absent_from_labels_is_zero(self):
        lv = LabelSet({})
        assert precision_at_k(ranked("q", "A"), lv, 3) == 0.0

    def test_fixed_denominator(self):
        lv = labels_from("q", positives={"A"})
        assert precision_at_k(ranked("q", "A"), lv, 4) == pytest.approx(0.25)


class TestRecall:
    def test_two_of_three(self):
        lv = labels_from("q", positives={"A", "C", "D"})
        assert recall_at_k(ranked("q", "A", "B", "C"), lv, 3) == pytest.approx(2 / 3)

    def test_full_retrieval_is_one(self):
        lv = labels_from("q", positives={"A", "B"})
        assert recall_at_k(ranked("q", "A", "B", "C"), lv, 10) == pytest.approx(1.0)

    def test_undefined_without_positives(self):
        lv = labels_from("q", graded={"A": 0.2})
        assert recall_at_k(ranked("q", "A"), lv, 3) is None


class TestNdcg:
    def test_hand_computed_case(self):
        lv = labels_from("q", graded={"A": 3.0, "B": 0.0, "C": 1.0})
        got = ndcg_at_k(ranked("q", "A", "B", "C"), lv, 3)
        idcg = 3.0 + 1.0 / math.log2(3.0)
        assert got == pytest.approx(3.5 / idcg)
        assert got == pytest.approx(0.9639, abs=1e-4)

    def test_ideal_order_is_one(self):
        lv = labels_from("q", graded={"A": 3.0, "B": 2.0, "C": 1.0})
        assert ndcg_at_k(ranked("q", "A", "B", "C"), lv, 3) == pytest.approx(1.0)

    def test_equal_gains_any_permutation_is_one(self):
        lv = labels_from("q", graded={"A": 2.0, "B": 2.0, "C": 2.0})
        for order in (("A", "B", "C"), ("C", "A", "B"), ("B", "C", "A")):
            assert ndcg_at_k(ranked("q", *order), lv, 3) == pytest.approx(1.0)

    def test_undefined_without_graded(self):
        lv = labels_from("q", graded={"A": 0.0})
        assert ndcg_at_k(ranked("q", "A"), lv, 3) is None

    def test_idcg_covers_unretrieved_items(self):
        lv = labels_from("q", graded={"A": 1.0, "Z": 5.0})
        got = ndcg_at_k(ranked("q", "A"), lv, 2)
        idcg = 5.0 + 1.0 / math.log2(3.0)
        assert got == pytest.approx(1.0 / idcg)


class TestMap:
    def test_hand_computed_case(self):
        lv = labels_from("q", positives={"A", "C"})
        assert map_at_k(ranked("q", "A", "B", "C"), lv, 3) == pytest.approx(5 / 6)

    def test_all_top_positive_is_one(self):
        lv = labels_from("q", positives={"A", "B", "C"})
        assert map_at_k(ranked("q", "A", "B", "C"), lv, 3) == pytest.approx(1.0)

    def test_undefined_without_positives(self):
        lv = labels_from("q", graded={"A": 0.3})
        assert map_at_k(ranked("q", "A"), lv, 2) is None


# independent loop-based oracles, exercised on random instances here and
# exhaustively in the acceptance suite


def oracle_precision(ids, positives, k):
    return sum(1 for i in ids[:k] if i in positives) / k


def oracle_recall(ids, positives, k):
    return sum(1 for i in ids[:k] if i in positives) / len(positives)


def oracle_ndcg(ids, gains, k):
    dcg = sum(gains.get(i, 0.0) / math.log2(r + 2) for r, i in enumerate(ids[:k]))
    ideal = sorted(gains.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(r + 2) for r, g in enumerate(ideal))
    return dcg / idcg


def oracle_map(ids, positives, k):
    hits, total = 0, 0.0
    for r, i in enumerate(ids[:k], start=1):
        if i in positives:
            hits += 1
            total += hits / r
    return total / min(k, len(positives))


class TestMetricOracleEquivalence:
    def test_random_instances(self):
        rng = np.random.default_rng(31)
        items = [f"i{j}" for j in range(6)]
        for _ in range(200):
            order = list(rng.permutation(items))
            n_pos = int(rng.integers(1, 5))
            positives = set(rng.choice(items, size=n_pos, replace=False))
            gains = {i: float(rng.choice([0.0, 0.5, 1.0, 2.0])) for i in items}
            if all(g == 0 for g in gains.values()):
                gains[items[0]] = 1.0
            k = int(rng.integers(1, 8))
            lv = LabelSet(
                {"q": {i: Label(graded=gains[i], positive=i in positives) for i in items}}
            )
            rl = ranked("q", *order)
            values = (
                precision_at_k(rl, lv, k),
                recall_at_k(rl, lv, k),
                ndcg_at_k(rl, lv, k),
                map_at_k(rl, lv, k),
            )
            assert values[0] == pytest.approx(oracle_precision(order, positives, k), abs=1e-12)
            assert values[1] == pytest.approx(oracle_recall(order, positives, k), abs=1e-12)
            assert values[2] == pytest.approx(oracle_ndcg(order, gains, k), abs=1e-12)
            assert values[3] == pytest.approx(oracle_map(order, positives, k), abs=1e-12)
            assert all(0.0 <= v <= 1.0 for v in values if v is not None)


class TestEvaluateObjectives:
    def test_single_query_aggregate_is_its_value(self):
        lv = labels_from("q1", positives={"A"})
        spec = ctr_spec(metrics=(MetricSpec("precision", 2),))
        out = evaluate_objectives([ranked("q1", "A", "B")], [lv], [spec])
        assert out.aggregates == (0.5,)

    def test_two_query_mean(self):
        # per-query precision@5 of 0.2 and 0.6 average to 0.4
        lv = LabelSet(
            {
                "q1": {"A": Label(1.0, True)},
                "q2": {"A": Label(1.0, True), "B": Label(1.0, True), "C": Label(1.0, True)},
            }
        )
        spec = ctr_spec(metrics=(MetricSpec("precision", 5),))
        lists = [ranked("q1", "A", "x", "y", "z", "w"), ranked("q2", "A", "B", "C", "x", "y")]
        out = evaluate_objectives(lists, [lv], [spec])
        assert out.aggregates[0] == pytest.approx(0.4)

    def test_metrics_average_within_query_first(self):
        # one query, three exactly-controlled precision values
        lv = labels_from("q", positives={"A"})
        spec = ctr_spec(
            metrics=(MetricSpec("precision", 1), MetricSpec("precision", 2), MetricSpec("precision", 4))
        )
        out = evaluate_objectives([ranked("q", "A", "B", "C", "D")], [lv], [spec])
        assert out.aggregates[0] == pytest.approx((1.0 + 0.5 + 0.25) / 3)
        assert out.per_metric["ctr"]["precision@1"] == pytest.approx(1.0)

    def test_documented_metric_averaging_convention(self):
        # the avg-metrics column is the plain mean of the per-metric scores
        assert round(float(np.mean([0.7431, 0.5950, 0.5395])), 4) == 0.6259

    def test_inadmissible_queries_excluded_and_flagged(self):
        lv = LabelSet({"q1": {"A": Label(0.4, True)}, "q2": {"B": Label(0.3, False)}})
        spec = ctr_spec(metrics=(MetricSpec("recall", 2),))
        lists = [ranked("q1", "A"), ranked("q2", "B")]
        out = evaluate_objectives(lists, [lv], [spec])
        assert out.aggregates[0] == pytest.approx(1.0)  # only q1 admitted
        assert out.diagnostics.excluded["ctr"]["recall@2"] == 1

    def test_unlabeled_query_flagged_but_counts_for_precision(self):
        lv = labels_from("q1", positives={"A"})
        spec = ctr_spec(metrics=(MetricSpec("precision", 1),))
        lists = [ranked("q1", "A"), ranked("q9", "B")]
        out = evaluate_objectives(lists, [lv], [spec])
        assert out.aggregates[0] == pytest.approx(0.5)  # (1 + 0) / 2
        assert out.diagnostics.unlabeled_queries["ctr"] == ["q9"]

    def test_zero_admissible_queries_is_study_error(self):
        lv = LabelSet({"q1": {"A": Label(0.0, False)}})
        spec = ctr_spec(metrics=(MetricSpec("ndcg", 3),))
        with pytest.raises(StudyError, match="'ctr'"):
            evaluate_objectives([ranked("q1", "A")], [lv], [spec])

    def test_presentation_order_invariance(self):
        rng = np.random.default_rng(7)
        items = [f"i{j}" for j in range(5)]
        lv = LabelSet(
            {
                f"q{n}": {
                    i: Label(graded=float(rng.random()), positive=bool(rng.random() < 0.5))
                    for i in items
                }
                for n in range(6)
            }
        )
        spec = ctr_spec(metrics=(MetricSpec("ndcg", 3), MetricSpec("precision", 3)))
        lists = [ranked(f"q{n}", *rng.permutation(items)) for n in range(6)]
        out1 = evaluate_objectives(lists, [lv], [spec])
        out2 = evaluate_objectives(lists[::-1], [lv], [spec])
        assert out1.aggregates == out2.aggregates


class TestLogIO:
    def test_csv_round_trip(self, tmp_path):
        log = InteractionLog(
            {
                ("q1", "a"): Interaction(100, 5, 2, 1),
                ("q0", "b"): Interaction(50, 0, 0, 0),
            }
        )
        path = tmp_path / "log.csv"
        log.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "query_id,item_id,impressions,clicks,carts,purchases"
        loaded = InteractionLog.from_csv(path)
        assert loaded.rows == log.rows

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("query,item\nq,i\n")
        with pytest.raises(ValueError, match="header"):
            InteractionLog.from_csv(path)

    def test_labelset_jsonl_export(self, tmp_path):
        lv = labels_from("q1", graded={"A": 0.25}, positives={"A"})
        path = tmp_path / "labels.jsonl"
        lv.to_jsonl(path)
        assert '"graded": 0.25' in path.read_text()
