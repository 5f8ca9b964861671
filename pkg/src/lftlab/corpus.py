"""Synthetic retrieval corpora and the whitespace tokenizer.

Topics are disjoint word clusters.  Documents draw mostly from one topic
(purity decides graded relevance); queries are keyword-style in the short
regime (mean length 2.5 words) or sentence-style in the long regime (mean
6 words, padded with function words).  Everything is deterministic from
one seed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .encoder import CLS_ID, MASK_ID, PAD_ID, SEP_ID, TokenSequence, UNK_ID
from .errors import ConfigError, DataError
from .metrics import Qrels, Triplet
from .rng import rng_for

RESERVED_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]")

FUNCTION_WORDS = (
    "the", "of", "a", "and", "to", "in", "is", "on", "for", "with",
    "how", "what", "why", "where", "when", "about", "from", "does",
    "are", "between",
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class Vocab:
    """token -> id map with reserved control ids 0..4."""

    def __init__(self, tokens):
        self.token_to_id: dict[str, int] = {}
        for i, tok in enumerate(RESERVED_TOKENS):
            self.token_to_id[tok] = i
        for tok in tokens:
            if tok in self.token_to_id:
                raise ConfigError(f"duplicate or reserved token {tok!r}")
            self.token_to_id[tok] = len(self.token_to_id)
        self.id_to_token = list(self.token_to_id)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.id_to_token[token_id]


def text_tokens(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation."""
    return _TOKEN_RE.findall(text.lower())


def text_to_ids(text: str, vocab: Vocab) -> list[int]:
    return [vocab.id(tok) for tok in text_tokens(text)]


def tokenize(text: str, vocab: Vocab) -> TokenSequence:
    """[CLS] text [SEP] with no slots and no padding."""
    ids = [CLS_ID] + text_to_ids(text, vocab) + [SEP_ID]
    n = len(ids)
    return TokenSequence(ids=np.array(ids, dtype=np.int64),
                         mask=np.ones(n, dtype=np.int64),
                         segments=np.zeros(n, dtype=np.int64),
                         n_slots=0, n_text=n - 2)


def build_vocab(texts, size: int) -> Vocab:
    """Most frequent tokens first (ties alphabetical), capped at ``size``
    including the five reserved ids."""
    if size <= len(RESERVED_TOKENS):
        raise ConfigError(f"vocab size {size} leaves no room beyond reserved tokens")
    counts: dict[str, int] = {}
    for text in texts:
        for tok in text_tokens(text):
            counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocab(ranked[: size - len(RESERVED_TOKENS)])


# ---------------------------------------------------------------------------
# corpus generation

@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_topics: int = 5
    n_docs: int = 200
    n_queries: int = 40
    candidates_per_query: int = 20
    query_regime: str = "short"  # short | long
    doc_length_mean: float = 40.0
    doc_length_spread: float = 12.0
    vocab_size: int = 200
    seed: int = 7

    def __post_init__(self):
        if self.query_regime not in ("short", "long"):
            raise ConfigError(f"unknown query regime {self.query_regime!r}")
        if self.candidates_per_query < 2:
            raise ConfigError("need at least 2 candidates per query")
        if min(self.n_topics, self.n_docs, self.n_queries) < 1:
            raise ConfigError("corpus counts must be positive")


@dataclass
class CorpusBundle:
    documents: dict[str, str]
    queries: dict[str, str]
    qrels: Qrels
    candidates: dict[str, list[str]]
    triplets: list[Triplet]
    topics: dict[str, int] = field(default_factory=dict)


_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]


def _word_list(n: int) -> list[str]:
    """Deterministic pseudo-words: two, then three syllables."""
    words = []
    for i, a in enumerate(_SYLLABLES):
        for b in _SYLLABLES[i:]:
            words.append(a + b)
            if len(words) >= n:
                return words
    for a in _SYLLABLES:
        for b in _SYLLABLES:
            for c in _SYLLABLES:
                words.append(a + b + c)
                if len(words) >= n:
                    return words
    raise ConfigError(f"cannot synthesize {n} distinct words")


def generate_corpus(config: SyntheticCorpusConfig) -> CorpusBundle:
    n_reserved = len(RESERVED_TOKENS)
    n_topic_words = config.vocab_size - n_reserved - len(FUNCTION_WORDS)
    per_topic = n_topic_words // config.n_topics
    if per_topic < 4:
        raise ConfigError(
            f"vocab size {config.vocab_size} too small for {config.n_topics} topics")
    words = _word_list(per_topic * config.n_topics)
    topic_words = [words[t * per_topic:(t + 1) * per_topic] for t in range(config.n_topics)]
    all_topic_words = words

    rng = rng_for(config.seed, "corpus")

    # documents: one dominant topic, filler from function words and leakage
    documents: dict[str, str] = {}
    doc_topic: dict[str, int] = {}
    doc_purity: dict[str, float] = {}
    for i in range(config.n_docs):
        doc_id = f"D{i:04d}"
        topic = i % config.n_topics
        purity = 0.85 if (i // config.n_topics) % 2 == 0 else 0.55
        length = int(np.clip(rng.normal(config.doc_length_mean, config.doc_length_spread),
                             8, 4 * config.doc_length_mean))
        toks = []
        for _ in range(length):
            r = rng.random()
            if r < purity:
                toks.append(topic_words[topic][rng.integers(per_topic)])
            elif r < purity + (1.0 - purity) * 0.55:
                toks.append(FUNCTION_WORDS[rng.integers(len(FUNCTION_WORDS))])
            else:
                toks.append(all_topic_words[rng.integers(len(all_topic_words))])
        documents[doc_id] = " ".join(toks)
        doc_topic[doc_id] = topic
        doc_purity[doc_id] = purity

    # queries: unique texts, topic-matched keywords
    queries: dict[str, str] = {}
    query_topic: dict[str, int] = {}
    seen = set()
    for i in range(config.n_queries):
        qid = f"Q{i:03d}"
        topic = i % config.n_topics
        for _ in range(1000):
            if config.query_regime == "short":
                k = 2 + int(rng.random() < 0.5)
                toks = list(rng.choice(topic_words[topic], size=k, replace=False))
            else:
                total = int(rng.integers(4, 9))
                k = min(3, total - 1)
                content = list(rng.choice(topic_words[topic], size=k, replace=False))
                funcs = [FUNCTION_WORDS[rng.integers(len(FUNCTION_WORDS))]
                         for _ in range(total - k)]
                toks = funcs[: 1] + [v for pair in zip(content, funcs[1:] + [None] * k)
                                     for v in pair if v is not None]
                toks = toks[:total]
            text = " ".join(toks)
            if text not in seen:
                break
        seen.add(text)
        queries[qid] = text
        query_topic[qid] = topic

    # candidates, graded judgments, triplets
    by_topic: dict[int, list[str]] = {t: [] for t in range(config.n_topics)}
    for doc_id, t in doc_topic.items():
        by_topic[t].append(doc_id)
    qrels = Qrels()
    candidates: dict[str, list[str]] = {}
    triplets: list[Triplet] = []
    for qid, text in queries.items():
        topic = query_topic[qid]
        same = by_topic[topic]
        other = [d for t, docs in by_topic.items() if t != topic for d in docs]
        cpq = config.candidates_per_query
        max_rel = min(len(same), cpq - 1, 8)
        if max_rel < 1 or len(other) < 1:
            raise ConfigError("topic structure cannot satisfy candidate invariants")
        n_rel = int(rng.integers(min(4, max_rel), max_rel + 1))
        rel_docs = list(rng.choice(same, size=n_rel, replace=False))
        irr_docs = list(rng.choice(other, size=cpq - n_rel, replace=False))
        cand = sorted(rel_docs + irr_docs)
        candidates[qid] = cand
        for doc_id in rel_docs:
            qrels.set(qid, doc_id, 2 if doc_purity[doc_id] >= 0.7 else 1)
        for doc_id in irr_docs:
            qrels.set(qid, doc_id, 0)
        pairs = [(p, n) for p in rel_docs for n in irr_docs]
        order = rng.permutation(len(pairs))
        for idx in order[:12]:
            pos, neg = pairs[int(idx)]
            triplets.append(Triplet(query=text, pos=pos, neg=neg, qid=qid))

    return CorpusBundle(documents=documents, queries=queries, qrels=qrels,
                        candidates=candidates, triplets=triplets,
                        topics=dict(doc_topic))


def mean_query_length(queries: dict[str, str]) -> float:
    if not queries:
        raise DataError("no queries to measure")
    return float(np.mean([len(text_tokens(t)) for t in queries.values()]))
