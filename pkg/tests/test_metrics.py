import numpy as np
import pytest

from lftlab.errors import DataError
from lftlab.metrics import (MetricReport, Qrels, RunRecord, Triplet, fold_rotation,
                            fold_split, metric_report, ndcg_at_k, precision_at_k)
from oracles import ref_ndcg_at_k, ref_precision_at_k


def run_for(qid, docids, scores=None):
    scores = scores if scores is not None else [1.0 / (i + 1) for i in range(len(docids))]
    return [RunRecord(qid=qid, docid=d, rank=i + 1, score=s)
            for i, (d, s) in enumerate(zip(docids, scores))]


def qrels_for(qid, rels: dict):
    q = Qrels()
    for docid, rel in rels.items():
        q.set(qid, docid, rel)
    return q


class TestPrecisionAtK:
    def test_all_relevant(self):
        qrels = qrels_for("q1", {f"d{i}": 1 for i in range(5)})
        run = run_for("q1", [f"d{i}" for i in range(5)])
        assert precision_at_k(run, qrels, 5) == {"q1": 1.0}

    def test_five_of_twenty(self):
        qrels = qrels_for("q1", {f"d{i}": (1 if i < 5 else 0) for i in range(20)})
        run = run_for("q1", [f"d{i}" for i in range(20)])
        assert precision_at_k(run, qrels, 20) == {"q1": 0.25}

    def test_short_run_keeps_denominator_k(self):
        qrels = qrels_for("q1", {f"d{i}": 1 for i in range(10)})
        run = run_for("q1", [f"d{i}" for i in range(10)])
        got = precision_at_k(run, qrels, 20)["q1"]
        assert got == 0.5
        assert got == ref_precision_at_k([f"d{i}" for i in range(10)],
                                         {f"d{i}": 1 for i in range(10)}, 20)

    def test_missing_query_skipped(self, caplog):
        qrels = qrels_for("q1", {"d0": 1})
        qrels.set("q2", "d0", 1)
        run = run_for("q1", ["d0"])
        with caplog.at_level("WARNING"):
            got = precision_at_k(run, qrels, 1)
        assert set(got) == {"q1"}
        assert "q2" in caplog.text

    def test_top_k_permutation_invariance(self):
        rels = {f"d{i}": int(i % 3 == 0) for i in range(8)}
        qrels = qrels_for("q1", rels)
        docs = [f"d{i}" for i in range(8)]
        base = precision_at_k(run_for("q1", docs), qrels, 4)["q1"]
        shuffled = docs[:4][::-1] + docs[4:]
        assert precision_at_k(run_for("q1", shuffled), qrels, 4)["q1"] == base


class TestNdcgAtK:
    def test_ideal_ordering_is_one(self):
        qrels = qrels_for("q1", {"a": 2, "b": 1, "c": 0})
        run = run_for("q1", ["a", "b", "c"])
        assert ndcg_at_k(run, qrels, 3)["q1"] == pytest.approx(1.0)

    def test_single_relevant_at_rank_two(self):
        qrels = qrels_for("q1", {"a": 1})
        run = run_for("q1", ["x", "a"])
        assert ndcg_at_k(run, qrels, 2)["q1"] == pytest.approx(0.6309, abs=1e-4)

    def test_all_retrieved_irrelevant(self):
        qrels = qrels_for("q1", {"rel": 2})
        run = run_for("q1", ["x", "y"])
        assert ndcg_at_k(run, qrels, 2)["q1"] == 0.0

    def test_no_relevant_in_qrels_gives_zero(self):
        qrels = qrels_for("q1", {"x": 0})
        run = run_for("q1", ["x"])
        assert ndcg_at_k(run, qrels, 1)["q1"] == 0.0

    def test_within_unit_interval(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            docs = [f"d{i}" for i in range(rng.integers(1, 10))]
            rels = {d: int(rng.integers(0, 3)) for d in docs}
            order = list(rng.permutation(docs))
            qrels = qrels_for("q1", rels)
            v = ndcg_at_k(run_for("q1", order), qrels, int(rng.integers(1, 12)))["q1"]
            assert 0.0 <= v <= 1.0 + 1e-12


class TestOracleEquivalence:
    def test_random_small_instances(self):
        rng = np.random.default_rng(123)
        for case in range(100):
            n = int(rng.integers(1, 11))
            docs = [f"d{i}" for i in range(n)]
            rels = {d: int(rng.integers(0, 3)) for d in docs}
            order = list(rng.permutation(docs))
            k = int(rng.integers(1, 12))
            qrels = qrels_for("q", rels)
            run = run_for("q", order)
            assert abs(precision_at_k(run, qrels, k)["q"]
                       - ref_precision_at_k(order, rels, k)) <= 1e-12
            assert abs(ndcg_at_k(run, qrels, k)["q"]
                       - ref_ndcg_at_k(order, rels, k)) <= 1e-12


class TestMetricReport:
    def test_means_are_arithmetic(self):
        qrels = Qrels()
        qrels.set("q1", "a", 1)
        qrels.set("q2", "a", 1)
        qrels.set("q2", "b", 0)
        run = run_for("q1", ["a"]) + run_for("q2", ["b", "a"])
        report = metric_report(run, qrels, p_ks=(1,), ndcg_ks=(2,))
        assert report.means["P@1"] == pytest.approx((1.0 + 0.0) / 2)
        assert report.query_count == 2


class TestFolds:
    def test_partition(self):
        ids = [f"q{i}" for i in range(10)]
        folds = fold_split(ids, n_folds=5, seed=3)
        assert [len(f) for f in folds] == [2] * 5
        assert sorted(sum(folds, [])) == sorted(ids)

    def test_same_seed_same_folds(self):
        ids = [f"q{i}" for i in range(13)]
        assert fold_split(ids, 5, seed=9) == fold_split(ids, 5, seed=9)
        assert fold_split(ids, 5, seed=9) != fold_split(ids, 5, seed=10)

    def test_rotation_rule(self):
        folds = fold_split([f"q{i}" for i in range(10)], 5, seed=0)
        train, val, test = fold_rotation(folds, 2)
        assert test == sorted(folds[2])
        assert val == sorted(folds[3])
        assert sorted(train + val + test) == sorted(sum(folds, []))
        train4, val4, test4 = fold_rotation(folds, 4)
        assert val4 == sorted(folds[0])

    def test_too_few_queries(self):
        with pytest.raises(DataError):
            fold_split(["q1", "q2"], 5, seed=0)


class TestTriplet:
    def test_pos_neq_neg(self):
        with pytest.raises(DataError):
            Triplet(query="x", pos="d1", neg="d1")
