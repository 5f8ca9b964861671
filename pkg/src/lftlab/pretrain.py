"""Surrogate masked-token pre-training for the miniature encoder.

Stands in for published pre-trained weights: a prediction head maps the
final hidden states of masked positions back to the vocabulary, the
encoder trains on that objective, and the head is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import Vocab, text_to_ids
from .encoder import (AdapterHooks, EncoderConfig, EncoderState, MASK_ID,
                      build_tower_sequence, encode)
from .errors import ConfigError, DataError
from .gradcheck import backward
from .params import AdamState, ParamStore, adam_step, init_normal, init_zeros
from .rng import rng_for
from .tensor import GradTape


@dataclass(frozen=True)
class PretrainSchedule:
    steps: int = 500
    batch_size: int = 16
    mask_prob: float = 0.15
    lr: float = 1e-3
    max_len: int = 48

    def __post_init__(self):
        if not 0.0 < self.mask_prob < 1.0:
            raise ConfigError(f"mask probability {self.mask_prob} outside (0, 1)")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("invalid pre-training schedule")


def _masked_batch(texts: list[str], vocab: Vocab, config: EncoderConfig,
                  schedule: PretrainSchedule, rng: np.random.Generator):
    """(sequence, masked position indices, original ids) per sampled doc."""
    batch = []
    for _ in range(schedule.batch_size):
        text = texts[int(rng.integers(len(texts)))]
        ids = text_to_ids(text, vocab)
        if len(ids) > schedule.max_len - 2:
            start = int(rng.integers(len(ids) - (schedule.max_len - 2) + 1))
            ids = ids[start:start + schedule.max_len - 2]
        seq = build_tower_sequence(ids, 0, config.max_seq_len)
        text_positions = np.arange(1, 1 + seq.n_text)
        if len(text_positions) == 0:
            continue
        picked = text_positions[rng.random(len(text_positions)) < schedule.mask_prob]
        if len(picked) == 0:
            picked = text_positions[[int(rng.integers(len(text_positions)))]]
        originals = seq.ids[picked].copy()
        masked_ids = seq.ids.copy()
        masked_ids[picked] = MASK_ID
        seq.ids = masked_ids
        batch.append((seq, picked, originals))
    return batch


def pretrain_with_head(texts, config: EncoderConfig, schedule: PretrainSchedule,
                       vocab: Vocab, seed: int):
    """(encoder state, head weight, head bias); the caller decides whether
    to keep the prediction head."""
    texts = [t for t in texts if text_to_ids(t, vocab)]
    if not texts:
        raise DataError("empty corpus for pre-training")
    if vocab.size > config.vocab_size:
        raise ConfigError(
            f"vocab of {vocab.size} exceeds encoder vocab_size {config.vocab_size}")
    store = ParamStore(config.precision)
    state = EncoderState.init_random(config, seed, store=store)
    init_normal(store, "mlm.weight", (config.vocab_size, config.model_dim), seed)
    init_zeros(store, "mlm.bias", (config.vocab_size,))

    sample_rng = rng_for(seed, "pretrain", "sample")
    dropout_rng = rng_for(seed, "pretrain", "dropout")
    adam = AdamState()
    lrs = {"pretrain": schedule.lr}

    for _ in range(schedule.steps):
        batch = _masked_batch(texts, vocab, config, schedule, sample_rng)
        if not batch:
            continue
        with GradTape() as tape:
            losses = []
            for seq, positions, originals in batch:
                hooks = AdapterHooks(train=True, dropout_rng=dropout_rng)
                final = encode(state, seq, hooks)[-1]
                rows = T.gather_rows(final, positions)
                logits = T.add(T.matmul(rows, T.transpose(store.get("mlm.weight"))),
                               store.get("mlm.bias"))
                losses.append(T.softmax_cross_entropy(logits, originals))
            loss = T.mean_scalars(losses)
        grads = backward(loss, tape, store)
        adam_step(store, grads, adam, lrs, group_fn=lambda name: "pretrain")

    return state, store.value("mlm.weight").copy(), store.value("mlm.bias").copy()


def pretrain_masked(texts, config: EncoderConfig, schedule: PretrainSchedule,
                    vocab: Vocab, seed: int) -> EncoderState:
    """Train from random initialization and discard the prediction head;
    deterministic by seed.  Zero steps return the seeded initialization."""
    state, _w, _b = pretrain_with_head(texts, config, schedule, vocab, seed)
    final_store = ParamStore(config.precision)
    result = EncoderState(config, final_store)
    for name in state.names():
        final_store.add(name, state.store.value(name))
    return result


def masked_accuracy(state: EncoderState, head_weight: np.ndarray,
                    head_bias: np.ndarray, texts, vocab: Vocab,
                    schedule: PretrainSchedule, seed: int, batches: int = 8) -> float:
    """Held-out masked-token accuracy under a given prediction head."""
    rng = rng_for(seed, "pretrain", "eval")
    hits = 0
    total = 0
    for _ in range(batches):
        for seq, positions, originals in _masked_batch(list(texts), vocab, state.config,
                                                       schedule, rng):
            final = encode(state, seq)[-1]
            rows = final.data[positions]
            pred = np.argmax(rows @ head_weight.T + head_bias, axis=1)
            hits += int((pred == originals).sum())
            total += len(originals)
    if total == 0:
        raise DataError("no maskable tokens in evaluation texts")
    return hits / total
