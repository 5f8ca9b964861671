import numpy as np
import pytest

from lftlab.corpus import (CorpusBundle, SyntheticCorpusConfig, Vocab, build_vocab,
                           generate_corpus, mean_query_length, text_to_ids, tokenize)
from lftlab.encoder import CLS_ID, SEP_ID, UNK_ID
from lftlab.errors import ConfigError


class TestVocab:
    def test_reserved_ids(self):
        v = Vocab(["apple", "pear"])
        assert v.id("[PAD]") == 0 and v.id("[CLS]") == 1 and v.id("[SEP]") == 2
        assert v.id("[MASK]") == 3 and v.id("[UNK]") == 4
        assert v.id("apple") == 5

    def test_unknown_maps_to_unk(self):
        v = Vocab(["apple"])
        assert v.id("durian") == UNK_ID

    def test_build_vocab_by_frequency(self):
        v = build_vocab(["b b b a a c"], 8)
        assert v.id("b") == 5
        assert v.id("a") == 6
        assert v.id("c") == 7

    def test_build_vocab_caps_size(self):
        v = build_vocab(["a b c d e f g h"], 8)
        assert v.size == 8


class TestTokenize:
    def test_empty_text(self):
        v = Vocab(["a"])
        seq = tokenize("", v)
        assert list(seq.ids) == [CLS_ID, SEP_ID]

    def test_lowercasing(self):
        v = build_vocab(["new fuel sources"], 10)
        assert text_to_ids("New FUEL sources", v) == text_to_ids("new fuel sources", v)

    def test_round_trip_in_vocab(self):
        v = build_vocab(["red green blue"], 10)
        ids = text_to_ids("red blue green", v)
        tokens = [v.token(i) for i in ids]
        assert text_to_ids(" ".join(tokens), v) == ids

    def test_punctuation_split(self):
        v = build_vocab(["what happens when"], 10)
        assert text_to_ids("What happens, when?", v) == text_to_ids("what happens when", v)


class TestGenerateCorpus:
    CFG = SyntheticCorpusConfig(n_topics=3, n_docs=45, n_queries=12,
                                candidates_per_query=10, vocab_size=120, seed=5)

    def test_deterministic(self):
        a = generate_corpus(self.CFG)
        b = generate_corpus(self.CFG)
        assert a.documents == b.documents
        assert a.queries == b.queries
        assert a.candidates == b.candidates
        assert [(t.query, t.pos, t.neg) for t in a.triplets] == \
               [(t.query, t.pos, t.neg) for t in b.triplets]
        assert a.qrels == b.qrels

    def test_short_regime_mean_length(self):
        cfg = SyntheticCorpusConfig(n_topics=5, n_docs=50, n_queries=1000,
                                    candidates_per_query=10, vocab_size=200, seed=1)
        bundle = generate_corpus(cfg)
        assert 2.0 <= mean_query_length(bundle.queries) <= 3.0

    def test_long_regime_mean_length(self):
        cfg = SyntheticCorpusConfig(n_topics=5, n_docs=50, n_queries=500,
                                    candidates_per_query=10, vocab_size=200,
                                    query_regime="long", seed=1)
        bundle = generate_corpus(cfg)
        assert 4.8 <= mean_query_length(bundle.queries) <= 7.2

    def test_triplet_topic_consistency(self):
        bundle = generate_corpus(self.CFG)
        for t in bundle.triplets:
            assert bundle.qrels.rel(t.qid, t.pos) >= 1
            assert bundle.qrels.rel(t.qid, t.neg) == 0

    def test_candidates_contain_relevant_and_irrelevant(self):
        bundle = generate_corpus(self.CFG)
        for qid, cand in bundle.candidates.items():
            rels = [bundle.qrels.rel(qid, d) for d in cand]
            assert len(cand) == self.CFG.candidates_per_query
            assert any(r >= 1 for r in rels)
            assert any(r == 0 for r in rels)

    def test_graded_relevance_present(self):
        bundle = generate_corpus(self.CFG)
        grades = {rel for _q, _d, rel in bundle.qrels.items()}
        assert {0, 1, 2} <= grades

    def test_vocab_too_small(self):
        with pytest.raises(ConfigError):
            generate_corpus(SyntheticCorpusConfig(n_topics=10, n_docs=10, n_queries=5,
                                                  candidates_per_query=4, vocab_size=40))

    def test_query_texts_unique(self):
        bundle = generate_corpus(self.CFG)
        texts = list(bundle.queries.values())
        assert len(texts) == len(set(texts))
