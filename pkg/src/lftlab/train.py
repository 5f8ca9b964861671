"""Triplet training with grouped learning rates and best-epoch selection.

Each epoch shuffles the triplets (seeded), runs Adam over mini-batches,
then scores the validation queries; the returned parameters are those of
the epoch with the highest validation metric.  Two-stage hybrids restore
the first module to its best epoch at the stage boundary and freeze it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, TrainingAbort
from .formats import format_epoch_line
from .gradcheck import backward
from .lft import Hybrid, build_freeze_plan, hybrid_stage, stage_freeze_plan
from .metrics import Qrels, RunRecord, Triplet, precision_at_k
from .params import AdamState, adam_step
from .rankers import precompute_docs
from .rng import rng_for
from .tensor import GradTape, Tensor

log = logging.getLogger(__name__)

DEFAULT_LRS = {"ranker": 1e-4, "encoder": 2e-5, "prefix": 1e-4, "lora": 1e-4}


def triplet_loss(s_pos: Tensor, s_neg: Tensor) -> Tensor:
    """1 - e^{s+} / (e^{s+} + e^{s-}), computed as sigmoid(s- - s+)."""
    return T.sigmoid(T.sub(s_neg, s_pos))


@dataclass
class TrainConfig:
    lr_by_group: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LRS))
    batch_size: int = 16
    max_epochs: int = 10
    seed: int = 0
    val_k: int = 10
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if any(lr <= 0 for lr in self.lr_by_group.values()):
            raise ConfigError("learning rates must be positive")


@dataclass
class EvalSet:
    queries: dict[str, str]
    candidates: dict[str, list[str]]
    qrels: Qrels


@dataclass
class TrainResult:
    best_epoch: int
    best_metric: float
    log_lines: list[str]
    epochs_run: int


def _batch_loss(model, batch: list[Triplet], documents: dict[str, str],
                rng: np.random.Generator) -> Tensor:
    losses = []
    for triplet in batch:
        try:
            pos_text = documents[triplet.pos]
            neg_text = documents[triplet.neg]
        except KeyError as exc:
            raise DataError(f"triplet references unknown document {exc.args[0]!r}") from None
        s_pos, s_neg = model.triplet_scores(triplet.query, pos_text, neg_text,
                                            train=True, rng=rng)
        losses.append(triplet_loss(s_pos, s_neg))
    return T.mean_scalars(losses)


def evaluate(model, eval_set: EvalSet, documents: dict[str, str], k: int) -> float:
    """Mean P@k over the evaluation queries under the current parameters."""
    cache = precompute_docs(model, documents, _candidate_docs(eval_set)) \
        if model.is_bi_encoder else None
    records: list[RunRecord] = []
    qrels = Qrels()
    for qid, text in eval_set.queries.items():
        records.extend(rerank(model, (qid, text), eval_set.candidates[qid],
                              cache=cache, documents=documents))
        for docid, rel in eval_set.qrels.docs(qid).items():
            qrels.set(qid, docid, rel)
    values = precision_at_k(records, qrels, k)
    return float(np.mean(list(values.values()))) if values else 0.0


def _candidate_docs(eval_set: EvalSet) -> list[str]:
    seen: dict[str, None] = {}
    for docs in eval_set.candidates.values():
        for d in docs:
            seen.setdefault(d)
    return list(seen)


def train(model, triplets: list[Triplet], val_set: EvalSet, config: TrainConfig,
          documents: dict[str, str]) -> TrainResult:
    if not triplets:
        raise DataError("empty training set")
    spec = model.spec
    hybrid = isinstance(spec, Hybrid)
    store = model.store

    if hybrid and spec.mode == "sequential":
        total_epochs = spec.m_epochs + spec.n_epochs
        store.apply_freeze_plan(stage_freeze_plan(spec, store, 1).trainable)
    else:
        total_epochs = config.max_epochs
        store.apply_freeze_plan(build_freeze_plan(spec, store).trainable)

    adam = AdamState(weight_decay=config.weight_decay)
    dropout_rng = rng_for(config.seed, "dropout")
    log_lines: list[str] = []
    best_metric = -np.inf
    best_epoch = -1
    best_snapshot = None
    stage_label = 1

    for epoch in range(total_epochs):
        if hybrid and spec.mode == "sequential":
            stage = hybrid_stage(spec, epoch)
            if stage.boundary:
                # restore the first module (and ranker) to its best epoch,
                # freeze it, and start the second stage fresh
                if best_snapshot is not None:
                    store.restore(best_snapshot)
                store.apply_freeze_plan(stage_freeze_plan(spec, store, 2).trainable)
                adam = AdamState(weight_decay=config.weight_decay)
                best_metric = -np.inf
                best_epoch = -1
                best_snapshot = None
            stage_label = stage.stage

        order = rng_for(config.seed, "shuffle", str(epoch)).permutation(len(triplets))
        shuffled = [triplets[int(i)] for i in order]
        epoch_losses = []
        for start in range(0, len(shuffled), config.batch_size):
            batch = shuffled[start:start + config.batch_size]
            with GradTape() as tape:
                loss = _batch_loss(model, batch, documents, dropout_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingAbort(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            grads = backward(loss, tape, store)
            adam_step(store, grads, adam, config.lr_by_group)
            epoch_losses.append(value)

        val_metric = evaluate(model, val_set, documents, config.val_k)
        log_lines.append(format_epoch_line(epoch, float(np.mean(epoch_losses)),
                                           val_metric, stage_label))
        if val_metric > best_metric:
            best_metric = val_metric
            best_epoch = epoch
            best_snapshot = store.snapshot(store.trainable_names())

    if best_snapshot is not None:
        store.restore(best_snapshot)
    if best_epoch < 0:
        best_metric = 0.0
    return TrainResult(best_epoch=best_epoch, best_metric=float(best_metric),
                       log_lines=log_lines, epochs_run=total_epochs)


def rerank(model, query: tuple[str, str], candidate_doc_ids, cache=None,
           documents: dict[str, str] | None = None, tag: str = "lftlab") -> list[RunRecord]:
    """Candidates ordered by descending score; ties break by ascending
    docid.  Bi-encoders score against a document cache; the cross-encoder
    scores each pair jointly from document texts."""
    qid, text = query
    scores: dict[str, float] = {}
    if model.is_bi_encoder:
        if cache is None:
            raise ConfigError("bi-encoder reranking requires a document cache")
        model.check_cache(cache)
        qrep = model.query_rep(text)
        for docid in candidate_doc_ids:
            scores[docid] = model.score_from_reps(qrep, cache.get(docid))
    else:
        if documents is None:
            raise ConfigError("cross-encoder reranking requires document texts")
        for docid in candidate_doc_ids:
            if docid not in documents:
                raise DataError(f"unknown document id {docid!r}")
            scores[docid] = model.score_text(text, documents[docid]).item()
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [RunRecord(qid=qid, docid=docid, rank=rank, score=score, tag=tag)
            for rank, (docid, score) in enumerate(ordered, start=1)]
