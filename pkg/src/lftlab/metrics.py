"""Ranking records, judgments, and rank-cutoff metrics.

P@k keeps k in the denominator even when fewer than k results exist
(trec-style).  nDCG uses exponential gain 2^rel - 1 and a log2(i + 1)
discount, normalized by the ideal ordering from the judgments; queries
with no relevant documents get nDCG 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .rng import rng_for

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Triplet:
    query: str
    pos: str
    neg: str
    qid: str | None = None

    def __post_init__(self):
        if self.pos == self.neg:
            raise DataError(f"triplet has identical positive and negative {self.pos!r}")


@dataclass(frozen=True)
class RunRecord:
    qid: str
    docid: str
    rank: int
    score: float
    tag: str = "lftlab"


class Qrels:
    """(qid, docid) -> graded relevance; unjudged pairs read as 0."""

    def __init__(self):
        self._rel: dict[str, dict[str, int]] = {}

    def set(self, qid: str, docid: str, rel: int) -> None:
        if rel < 0:
            raise DataError(f"negative relevance for ({qid}, {docid})")
        self._rel.setdefault(qid, {})[docid] = int(rel)

    def rel(self, qid: str, docid: str) -> int:
        return self._rel.get(qid, {}).get(docid, 0)

    def docs(self, qid: str) -> dict[str, int]:
        return dict(self._rel.get(qid, {}))

    def qids(self) -> list[str]:
        return list(self._rel)

    def items(self):
        for qid, docs in self._rel.items():
            for docid, rel in docs.items():
                yield qid, docid, rel

    def __len__(self):
        return sum(len(d) for d in self._rel.values())

    def __eq__(self, other):
        return isinstance(other, Qrels) and self._rel == other._rel


@dataclass
class MetricReport:
    per_query: dict[str, dict[str, float]]  # metric label -> qid -> value
    means: dict[str, float]
    query_count: int


def group_run(records) -> dict[str, list[RunRecord]]:
    grouped: dict[str, list[RunRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.qid, []).append(rec)
    for qid in grouped:
        grouped[qid].sort(key=lambda r: r.rank)
    return grouped


def precision_at_k(run, qrels: Qrels, k: int) -> dict[str, float]:
    """Fraction of the top k that is relevant (rel >= 1); the denominator
    stays k for short runs.  Queries judged but absent from the run are
    skipped with a warning."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    grouped = group_run(run)
    out: dict[str, float] = {}
    for qid in qrels.qids():
        records = grouped.get(qid)
        if not records:
            log.warning("query %s has no run records; skipped", qid)
            continue
        hits = sum(1 for rec in records[:k] if qrels.rel(qid, rec.docid) >= 1)
        out[qid] = hits / k
    return out


def ndcg_at_k(run, qrels: Qrels, k: int) -> dict[str, float]:
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    grouped = group_run(run)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    out: dict[str, float] = {}
    for qid in qrels.qids():
        records = grouped.get(qid)
        if not records:
            log.warning("query %s has no run records; skipped", qid)
            continue
        gains = np.array([(2.0 ** qrels.rel(qid, rec.docid)) - 1.0
                          for rec in records[:k]])
        dcg = float((gains * discounts[: len(gains)]).sum())
        ideal = sorted(qrels.docs(qid).values(), reverse=True)[:k]
        ideal_gains = np.array([(2.0 ** rel) - 1.0 for rel in ideal])
        idcg = float((ideal_gains * discounts[: len(ideal_gains)]).sum())
        out[qid] = dcg / idcg if idcg > 0 else 0.0
    return out


def metric_report(run, qrels: Qrels, p_ks=(20,), ndcg_ks=(5, 20)) -> MetricReport:
    per_query: dict[str, dict[str, float]] = {}
    for k in p_ks:
        per_query[f"P@{k}"] = precision_at_k(run, qrels, k)
    for k in ndcg_ks:
        per_query[f"nDCG@{k}"] = ndcg_at_k(run, qrels, k)
    means = {label: (float(np.mean(list(values.values()))) if values else 0.0)
             for label, values in per_query.items()}
    counts = {len(v) for v in per_query.values()}
    return MetricReport(per_query=per_query, means=means,
                        query_count=max(counts) if counts else 0)


# ---------------------------------------------------------------------------
# cross-validation folds

def fold_split(query_ids, n_folds: int = 5, seed: int = 0) -> list[list[str]]:
    """Deterministic seeded partition into n nearly equal folds."""
    ids = sorted(query_ids)
    if len(ids) < n_folds:
        raise DataError(f"{len(ids)} queries cannot fill {n_folds} folds")
    rng = rng_for(seed, "folds")
    order = rng.permutation(len(ids))
    folds: list[list[str]] = [[] for _ in range(n_folds)]
    for pos, idx in enumerate(order):
        folds[pos % n_folds].append(ids[int(idx)])
    return [sorted(f) for f in folds]


def fold_rotation(folds, rotation: int) -> tuple[list[str], list[str], list[str]]:
    """(train, val, test) for one rotation: test = fold r, val = fold
    (r + 1) mod n, train = the rest."""
    n = len(folds)
    r = rotation % n
    test = list(folds[r])
    val = list(folds[(r + 1) % n])
    train: list[str] = []
    for i, fold in enumerate(folds):
        if i not in (r, (r + 1) % n):
            train.extend(fold)
    return sorted(train), sorted(val), sorted(test)
