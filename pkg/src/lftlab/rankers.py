"""Scoring heads: joint-CLS linear, CLS-aggregation MLP, late interaction.

All heads are randomly initialized and always trainable.  Scored token
rows for the late-interaction head are CLS plus text tokens; prefix
slots, SEP and padding never contribute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, TokenSequence
from .errors import CacheError, ContractError, DimensionError
from .params import ParamStore, init_normal, init_zeros
from .tensor import Tensor

RANKER_KINDS = ("mono", "twin", "colbert")


def init_ranker(store: ParamStore, kind: str, config: EncoderConfig, seed: int,
                colbert_dim: int = 32, twin_hidden: int | None = None) -> None:
    d = config.model_dim
    if kind == "mono":
        init_normal(store, "ranker.mono.weight", (1, d), seed)
        init_zeros(store, "ranker.mono.bias", (1,))
    elif kind == "twin":
        hidden = twin_hidden if twin_hidden else 4 * d
        init_normal(store, "ranker.twin.hidden.weight", (hidden, 4 * d), seed)
        init_zeros(store, "ranker.twin.hidden.bias", (hidden,))
        init_normal(store, "ranker.twin.out.weight", (1, hidden), seed)
        init_zeros(store, "ranker.twin.out.bias", (1,))
    elif kind == "colbert":
        init_normal(store, "ranker.col.proj.weight", (colbert_dim, d), seed)
    else:
        raise ContractError(f"unknown ranker kind {kind!r}")


def scored_row_indices(seq: TokenSequence) -> np.ndarray:
    """CLS and text rows (prefix slots, SEP, and padding excluded)."""
    return np.arange(seq.n_slots, seq.n_slots + 1 + seq.n_text)


def score_mono(final_hidden: Tensor, seq: TokenSequence, store: ParamStore) -> Tensor:
    """Linear score over the final-layer CLS vector of a joint sequence."""
    cls = T.narrow(final_hidden, 0, seq.n_slots, seq.n_slots + 1)
    out = T.add(T.matmul(cls, T.transpose(store.get("ranker.mono.weight"))),
                store.get("ranker.mono.bias"))
    return T.sum_all(out)


def twin_features(cls_q: Tensor, cls_d: Tensor) -> Tensor:
    """[q ; d ; |q - d| ; q * d] as a single row."""
    if cls_q.shape != cls_d.shape:
        raise DimensionError(f"CLS shapes differ: {cls_q.shape} vs {cls_d.shape}")
    diff = T.absolute(T.sub(cls_q, cls_d))
    prod = T.mul(cls_q, cls_d)
    return T.concat([cls_q, cls_d, diff, prod], axis=1)


def score_twin(cls_q: Tensor, cls_d: Tensor, store: ParamStore) -> Tensor:
    feats = twin_features(cls_q, cls_d)
    h = T.relu(T.add(T.matmul(feats, T.transpose(store.get("ranker.twin.hidden.weight"))),
                     store.get("ranker.twin.hidden.bias")))
    out = T.add(T.matmul(h, T.transpose(store.get("ranker.twin.out.weight"))),
                store.get("ranker.twin.out.bias"))
    return T.sum_all(out)


def colbert_rows(final_hidden: Tensor, seq: TokenSequence, store: ParamStore) -> Tensor:
    """Projected, L2-normalized CLS+text rows of one tower."""
    rows = T.gather_rows(final_hidden, scored_row_indices(seq))
    proj = T.matmul(rows, T.transpose(store.get("ranker.col.proj.weight")))
    return T.l2_normalize_rows(proj)


def score_colbert(q_rows: Tensor, d_rows: Tensor) -> Tensor:
    """Sum over query rows of the maximum dot product with any doc row."""
    if q_rows.data.shape[0] == 0 or d_rows.data.shape[0] == 0:
        raise ContractError("late-interaction scoring needs non-empty row sets")
    sims = T.matmul(q_rows, T.transpose(d_rows))
    return T.sum_all(T.max_rows(sims))


# ---------------------------------------------------------------------------
# representations and the document cache

@dataclass
class QueryRep:
    cls_vector: np.ndarray | None = None
    token_matrix: np.ndarray | None = None


@dataclass
class DocRep:
    cls_vector: np.ndarray | None = None
    token_matrix: np.ndarray | None = None


@dataclass
class DocCache:
    reps: dict[str, DocRep]
    fingerprint: str

    def __len__(self):
        return len(self.reps)

    def get(self, doc_id: str) -> DocRep:
        try:
            return self.reps[doc_id]
        except KeyError:
            raise CacheError(f"document {doc_id!r} not in cache") from None


def precompute_docs(model, documents: dict[str, str],
                    doc_ids=None) -> DocCache:
    """One representation per document under the current parameters.

    Raises for cross-encoders: a joint tower cannot pre-process documents
    independently of the query.
    """
    if not model.is_bi_encoder:
        raise ContractError("pre-computation impossible for cross-encoders")
    ids = list(documents) if doc_ids is None else list(doc_ids)
    reps = {}
    for doc_id in ids:
        try:
            text = documents[doc_id]
        except KeyError:
            raise CacheError(f"unknown document id {doc_id!r}") from None
        reps[doc_id] = model.doc_rep(text)
    return DocCache(reps=reps, fingerprint=model.store.fingerprint())
