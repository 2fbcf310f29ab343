"""Tests for nDCG, judge scoring, and the retrieval/e2e evaluation loops."""

import math

import pytest

from helpers import demo_pool, scripted_scenario
from holorag.backends import DocRef, MockBackend
from holorag.config import RunConfig
from holorag.errors import HoloRagError, MissingGoldDocumentError, UnparseableScoreError
from holorag.evaluation import (
    QaExample,
    evaluate_e2e,
    evaluate_retrieval,
    judge_accuracy,
    load_dataset,
    ndcg_at_k,
)
from holorag.index import DocumentRecord, Pool
from holorag.masking import Embedding

NDCG_RANK2 = 0.6309297535714575  # 1 / log2(3)
HANDCRAFTED_MEAN = 0.5327324383928644  # (1 + 1/log2(3) + 0.5 + 0) / 4


class TestNdcg:
    def test_relevant_at_rank_one(self):
        assert ndcg_at_k(["a", "b", "c"], {"a"}) == 1.0

    def test_relevant_at_rank_two(self):
        assert ndcg_at_k(["x", "a", "y"], {"a"}) == pytest.approx(NDCG_RANK2, abs=1e-12)

    def test_relevant_at_rank_three(self):
        assert ndcg_at_k(["x", "y", "a"], {"a"}) == pytest.approx(0.5, abs=1e-12)

    def test_nothing_relevant_in_top_k(self):
        assert ndcg_at_k(["x", "y", "z"], {"a"}, k=5) == 0.0

    def test_empty_relevant_scores_zero(self):
        assert ndcg_at_k(["x", "y"], set()) == 0.0

    def test_invariant_below_cutoff(self):
        base = ndcg_at_k(["a", "x", "y", "z", "w", "p", "q"], {"a", "q"}, k=5)
        swapped = ndcg_at_k(["a", "x", "y", "z", "w", "q", "p"], {"a", "q"}, k=5)
        assert base == swapped

    def test_monotone_under_promotion(self):
        worse = ndcg_at_k(["x", "y", "a", "z"], {"a"}, k=5)
        better = ndcg_at_k(["x", "a", "y", "z"], {"a"}, k=5)
        assert better > worse

    def test_multiple_relevant_ideal(self):
        # two relevant docs at the top = ideal ordering
        assert ndcg_at_k(["a", "b", "x"], {"a", "b"}, k=5) == 1.0

    def test_k_domain(self):
        with pytest.raises(ValueError):
            ndcg_at_k(["a"], {"a"}, k=0)


def judge_with(score_text, retry_text=None, query="q"):
    mock = MockBackend()
    mock.add_generation("judge_score", query, ["prediction", "gold"], 0, score_text, [1.0])
    if retry_text is not None:
        mock.add_generation("judge_score", query, ["prediction", "gold"], 1, retry_text, [1.0])
    return mock


class TestJudgeAccuracy:
    def test_score_five_correct(self):
        score, correct = judge_accuracy("42", "42", judge_with("exact match\n5"), query="q")
        assert (score, correct) == (5, True)

    def test_score_four_correct(self):
        score, correct = judge_accuracy("42 ish", "42", judge_with("close\n4"), query="q")
        assert (score, correct) == (4, True)

    def test_score_three_incorrect(self):
        score, correct = judge_accuracy("43", "42", judge_with("off\n3"), query="q")
        assert (score, correct) == (3, False)

    def test_retry_then_success(self):
        judge = judge_with("no digits here", retry_text="second try\n4")
        score, correct = judge_accuracy("a", "b", judge, query="q")
        assert (score, correct) == (4, True)

    def test_retry_then_error(self):
        judge = judge_with("still prose", retry_text="more prose")
        with pytest.raises(UnparseableScoreError):
            judge_accuracy("a", "b", judge, query="q")

    def test_out_of_scale_rejected(self):
        judge = judge_with("confident\n7", retry_text="again\n0")
        with pytest.raises(UnparseableScoreError):
            judge_accuracy("a", "b", judge, query="q")


def angle_pool(name, spec):
    records = tuple(
        DocumentRecord(
            doc_id,
            name,
            Embedding([math.cos(math.radians(a)), math.sin(math.radians(a))]),
            {},
        )
        for doc_id, a in spec
    )
    return Pool(name=name, dimension=2, records=records)


def embed_backend(queries):
    mock = MockBackend()
    for query in queries:
        mock.add_embedding("query", query, [1.0, 0.0])
    return mock


class TestEvaluateRetrieval:
    def test_constructed_optimum(self):
        pool = Pool(
            name="p",
            dimension=3,
            records=tuple(
                DocumentRecord(f"g{i}", "p", Embedding(axis), {})
                for i, axis in enumerate(([1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]))
            ),
        )
        mock = MockBackend()
        dataset = []
        for i, axis in enumerate(([1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0])):
            query = f"q{i}"
            mock.add_embedding("query", query, axis)
            dataset.append(
                QaExample(query_id=query, query=query, gold_doc_ids={("p", f"g{i}")}, gold_answer="x")
            )
        report = evaluate_retrieval(dataset, "single", [pool], mock)
        assert report.mean_ndcg5 == 1.0

    def test_constructed_pessimum(self):
        pools, dataset, mock = [], [], MockBackend()
        for i in range(2):
            name = f"p{i}"
            spec = [(f"f{j}", 5 * (j + 1)) for j in range(5)] + [(f"gold{i}", 90)]
            pools.append(angle_pool(name, spec))
            query = f"q{i}"
            mock.add_embedding("query", query, [1.0, 0.0])
            dataset.append(
                QaExample(
                    query_id=query, query=query, gold_doc_ids={(name, f"gold{i}")}, gold_answer="x"
                )
            )
        report = evaluate_retrieval(dataset, "single", pools, mock)
        assert report.mean_ndcg5 == 0.0

    def test_handcrafted_four_examples(self):
        pools = [
            angle_pool("p1", [("g1", 0), ("f1", 60), ("f2", 80)]),
            angle_pool("p2", [("f1", 10), ("g2", 30), ("f2", 70)]),
            angle_pool("p3", [("f1", 10), ("f2", 20), ("g3", 40), ("f3", 80)]),
            angle_pool(
                "p4",
                [("f1", 5), ("f2", 10), ("f3", 15), ("f4", 20), ("f5", 25), ("g4", 85)],
            ),
        ]
        dataset = [
            QaExample(f"ex{i}", f"ex{i}", {(f"p{i}", f"g{i}")}, "x") for i in (1, 2, 3, 4)
        ]
        backend = embed_backend([ex.query for ex in dataset])
        report = evaluate_retrieval(dataset, "single", pools, backend)
        assert report.mean_ndcg5 == pytest.approx(HANDCRAFTED_MEAN, abs=1e-4)

    def test_all_pool_mode_merges(self):
        # the gold doc sits in another pool; all-pool retrieval still finds it
        p1 = angle_pool("p1", [("near", 40)])
        p2 = angle_pool("p2", [("gold", 0)])
        dataset = [QaExample("e", "e", {("p2", "gold")}, "x")]
        report = evaluate_retrieval(dataset, "all", [p1, p2], embed_backend(["e"]))
        assert report.mean_ndcg5 == 1.0

    def test_missing_gold_names_query(self):
        pool = angle_pool("p1", [("a", 0)])
        dataset = [QaExample("lost-query", "q", {("p1", "nope")}, "x")]
        with pytest.raises(MissingGoldDocumentError, match="lost-query"):
            evaluate_retrieval(dataset, "single", [pool], embed_backend(["q"]))

    def test_single_mode_rejects_cross_pool_gold(self):
        p1 = angle_pool("p1", [("a", 0)])
        p2 = angle_pool("p2", [("b", 0)])
        dataset = [QaExample("x", "q", {("p1", "a"), ("p2", "b")}, "x")]
        with pytest.raises(MissingGoldDocumentError, match="spans pools"):
            evaluate_retrieval(dataset, "single", [p1, p2], embed_backend(["q"]))


def e2e_setup(kinds_and_scores):
    """Combine scripted scenarios into one dataset/backend/judge triple."""
    pool = demo_pool()
    answer_backend = MockBackend()
    judge_backend = MockBackend()
    dataset = []
    for i, (kind, score) in enumerate(kinds_and_scores):
        query, _, config, mock, expected = scripted_scenario(kind, query=f"q{i:02d}::{kind}")
        answer_backend.update_from(mock)
        dataset.append(
            QaExample(
                query_id=f"q{i:02d}",
                query=query,
                gold_doc_ids={("charts", "d1")},
                gold_answer=f"gold::{kind}",
            )
        )
        if score is not None:
            judge_backend.add_generation(
                "judge_score", query, ["prediction", "gold"], 0, f"scripted\n{score}", [1.0]
            )
    return dataset, pool, config, answer_backend, judge_backend


class TestEvaluateE2e:
    def test_all_correct(self):
        dataset, pool, config, answers, judge = e2e_setup(
            [("lqp", 5), ("lqp_first", 4), ("hqp_early", 5)]
        )
        report = evaluate_e2e(dataset, [pool], config, answers, judge)
        assert report.accuracy == 1.0
        assert report.lqp_count == 2
        assert report.hqp_count == 1

    def test_one_of_four_wrong(self):
        dataset, pool, config, answers, judge = e2e_setup(
            [("lqp", 5), ("lqp_first", 4), ("hqp_early", 2), ("hqp_max", 5)]
        )
        report = evaluate_e2e(dataset, [pool], config, answers, judge)
        assert report.accuracy == 0.75
        assert report.lqp_count == 2
        assert report.hqp_count == 2
        assert report.mean_decoupler_iterations == pytest.approx((0 + 0 + 1 + 3) / 4)

    def test_failure_recorded_and_excluded(self):
        dataset, pool, config, answers, judge = e2e_setup(
            [("lqp", 5), ("failure", None)]
        )
        report = evaluate_e2e(dataset, [pool], config, answers, judge)
        assert report.accuracy == 1.0
        failed = [r for r in report.per_example if r.error]
        assert len(failed) == 1

    def test_no_skip_aborts(self):
        dataset, pool, config, answers, judge = e2e_setup(
            [("lqp", 5), ("failure", None)]
        )
        config.skip_on_error = False
        with pytest.raises(HoloRagError):
            evaluate_e2e(dataset, [pool], config, answers, judge)

    def test_report_deterministic(self):
        dataset, pool, config, answers, judge = e2e_setup(
            [("lqp", 5), ("hqp_early", 3), ("hqp_max", 4)]
        )
        first = evaluate_e2e(dataset, [pool], config, answers, judge)
        second = evaluate_e2e(dataset, [pool], config, answers, judge)
        assert first.to_json() == second.to_json()

    def test_parallel_matches_sequential(self):
        dataset, pool, config, answers, judge = e2e_setup(
            [("lqp", 5), ("lqp_first", 4), ("hqp_early", 2), ("hqp_max", 5)]
        )
        sequential = evaluate_e2e(dataset, [pool], config, answers, judge)
        config.parallelism = 4
        parallel = evaluate_e2e(dataset, [pool], config, answers, judge)
        assert parallel.accuracy == sequential.accuracy
        assert [r.query_id for r in parallel.per_example] == [
            r.query_id for r in sequential.per_example
        ]


class TestLoadDataset:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            '{"query_id": "a", "query": "what?", '
            '"gold_doc_ids": [{"pool": "p", "doc_id": "d"}], "gold_answer": "42", '
            '"requires_multihop": true}\n',
            encoding="utf-8",
        )
        examples = load_dataset(path)
        assert examples[0].query_id == "a"
        assert examples[0].gold_doc_ids == frozenset({("p", "d")})
        assert examples[0].requires_multihop

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"query_id": "a"}\n', encoding="utf-8")
        with pytest.raises(Exception, match="line 1"):
            load_dataset(path)
