import numpy as np
import pytest

from lftlab import tensor as T
from lftlab.corpus import build_vocab
from lftlab.encoder import EncoderConfig
from lftlab.errors import CacheError, ContractError
from lftlab.lft import LoRA, PrefixTuning
from lftlab.params import ParamStore
from lftlab.rankers import (colbert_rows, init_ranker, precompute_docs,
                            score_colbert, score_mono, score_twin, twin_features)
from lftlab.tensor import Tensor
from lftlab.towers import Cross, NrmModel, SiameseBi

TINY = EncoderConfig(layers=2, model_dim=8, heads=2, ffn_dim=16, vocab_size=16,
                     max_seq_len=32, dropout_rate=0.0)
VOCAB = build_vocab(["red green blue", "cyan magenta yellow", "umber ochre teal"], 16)


def unit_rows(rng, m, p):
    x = rng.normal(size=(m, p))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestScoreMono:
    def test_zero_head_scores_zero(self):
        model = NrmModel(TINY, "mono", Cross(), LoRA(rank=2, dropout=0.0), VOCAB, seed=1)
        model.store.set_value("ranker.mono.weight", np.zeros((1, 8)))
        model.store.set_value("ranker.mono.bias", np.zeros(1))
        assert model.score_text("red", "green blue").item() == 0.0

    def test_linear_in_cls(self):
        store = ParamStore("f64")
        init_ranker(store, "mono", TINY, seed=0)
        from lftlab.encoder import build_tower_sequence
        seq = build_tower_sequence([5, 6], 0, 32)
        hidden = np.random.default_rng(0).normal(size=(seq.length, 8))
        s1 = score_mono(Tensor(hidden), seq, store).item()
        s2 = score_mono(Tensor(2.0 * hidden), seq, store).item()
        bias = float(store.value("ranker.mono.bias")[0])
        assert s2 - bias == pytest.approx(2.0 * (s1 - bias), rel=1e-9)

    def test_hand_sized(self):
        cfg = EncoderConfig(layers=1, model_dim=2, heads=1, ffn_dim=4, vocab_size=8,
                            max_seq_len=8, precision="f64")
        store = ParamStore("f64")
        init_ranker(store, "mono", cfg, seed=0)
        store.set_value("ranker.mono.weight", [[2.0, -1.0]])
        store.set_value("ranker.mono.bias", [0.5])
        from lftlab.encoder import build_tower_sequence
        seq = build_tower_sequence([5], 0, 8)
        hidden = np.array([[3.0, 4.0], [0.0, 0.0], [0.0, 0.0]])
        assert score_mono(Tensor(hidden), seq, store).item() == pytest.approx(2 * 3 - 4 + 0.5)


class TestScoreTwin:
    def _store(self, d=4):
        cfg = EncoderConfig(layers=1, model_dim=d, heads=1, ffn_dim=8, vocab_size=8,
                            max_seq_len=8, precision="f64")
        store = ParamStore("f64")
        init_ranker(store, "twin", cfg, seed=0)
        return store, cfg

    def test_equal_cls_zeroes_difference_feature(self):
        cls = Tensor(np.array([[1.0, -2.0, 3.0, 0.5]]))
        feats = twin_features(cls, cls).data
        assert np.array_equal(feats[0, 8:12], np.zeros(4))

    def test_zero_output_weights_give_bias(self):
        store, _ = self._store()
        store.set_value("ranker.twin.out.weight", np.zeros((1, 16)))
        store.set_value("ranker.twin.out.bias", [0.75])
        a = Tensor(np.random.default_rng(0).normal(size=(1, 4)))
        b = Tensor(np.random.default_rng(1).normal(size=(1, 4)))
        assert score_twin(a, b, store).item() == pytest.approx(0.75)

    def test_hand_sized(self):
        cfg = EncoderConfig(layers=1, model_dim=2, heads=1, ffn_dim=4, vocab_size=8,
                            max_seq_len=8, precision="f64")
        store = ParamStore("f64")
        init_ranker(store, "twin", cfg, seed=0, twin_hidden=2)
        store.set_value("ranker.twin.hidden.weight",
                        [[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
                         [0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]])
        store.set_value("ranker.twin.hidden.bias", [0.0, 0.5])
        store.set_value("ranker.twin.out.weight", [[1.0, 2.0]])
        store.set_value("ranker.twin.out.bias", [-1.0])
        q = Tensor(np.array([[2.0, 3.0]]))
        d = Tensor(np.array([[1.0, -1.0]]))
        # feats = [2, 3, 1, -1, 1, 4, 2, -3]
        # h = relu([2 + (-3), -3 + 1 + 0.5]) = relu([-1, -1.5]) = [0, 0]
        # score = -1
        assert score_twin(q, d, store).item() == pytest.approx(-1.0)

    def test_feature_symmetry(self):
        q = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
        d = Tensor(np.array([[-1.0, 5.0, 0.0, 2.0]]))
        f_qd = twin_features(q, d).data
        f_dq = twin_features(d, q).data
        assert np.array_equal(f_qd[0, 8:], f_dq[0, 8:])
        assert np.array_equal(f_qd[0, :4], f_dq[0, 4:8])


class TestScoreColbert:
    def test_self_similarity(self):
        rng = np.random.default_rng(0)
        row = unit_rows(rng, 1, 8)
        d = np.vstack([unit_rows(rng, 3, 8), row])
        assert score_colbert(Tensor(row), Tensor(d)).item() == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_rows_score_zero(self):
        q = Tensor(np.eye(4)[:2])
        d = Tensor(np.eye(4)[2:])
        assert score_colbert(q, d).item() == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(42)
        q = unit_rows(rng, 4, 8)
        d = unit_rows(rng, 6, 8)
        got = score_colbert(Tensor(q), Tensor(d)).item()
        want = sum(max(float(np.dot(q[i], d[j])) for j in range(6)) for i in range(4))
        assert got == pytest.approx(want, abs=1e-10)

    def test_appending_rows_never_decreases(self):
        rng = np.random.default_rng(3)
        q = unit_rows(rng, 3, 5)
        d = unit_rows(rng, 2, 5)
        base = score_colbert(Tensor(q), Tensor(d)).item()
        for _ in range(5):
            d = np.vstack([d, unit_rows(rng, 1, 5)])
            grown = score_colbert(Tensor(q), Tensor(d)).item()
            assert grown >= base - 1e-12
            base = grown

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            score_colbert(Tensor(np.zeros((0, 4))), Tensor(np.ones((2, 4))))


class TestColbertRows:
    def test_unit_norms_and_slot_exclusion(self):
        spec = PrefixTuning(prefix_len=3, source_dim=4, mlp_hidden=4)
        model = NrmModel(TINY, "colbert", SiameseBi(), spec, VOCAB, seed=2)
        seq = model.tower_sequence("red green")
        final = model.encode_tower(seq, "query")[-1]
        rows = colbert_rows(final, seq, model.store)
        assert rows.shape == (1 + seq.n_text, model.colbert_dim)  # CLS + text only
        assert np.allclose(np.linalg.norm(rows.data, axis=1), 1.0, atol=1e-6)


class TestDocCache:
    DOCS = {"D1": "red green", "D2": "cyan magenta", "D3": "umber teal"}

    def _model(self):
        return NrmModel(TINY, "colbert", SiameseBi(), LoRA(rank=2, dropout=0.0),
                        VOCAB, seed=4)

    def test_cached_scores_equal_direct(self):
        model = self._model()
        cache = precompute_docs(model, self.DOCS)
        qrep = model.query_rep("red blue")
        for doc_id, text in self.DOCS.items():
            direct = model.score_from_reps(qrep, model.doc_rep(text))
            cached = model.score_from_reps(qrep, cache.get(doc_id))
            assert direct == cached

    def test_cache_has_one_entry_per_doc(self):
        cache = precompute_docs(self._model(), self.DOCS)
        assert len(cache) == 3
        assert set(cache.reps) == set(self.DOCS)

    def test_mutation_invalidates(self):
        model = self._model()
        cache = precompute_docs(model, self.DOCS)
        bumped = model.store.value("lora.0.v.B").copy()
        bumped[0, 0] += 0.1
        model.store.set_value("lora.0.v.B", bumped)
        with pytest.raises(CacheError):
            model.check_cache(cache)

    def test_cross_encoder_rejected(self):
        model = NrmModel(TINY, "mono", Cross(), LoRA(rank=2, dropout=0.0), VOCAB, seed=4)
        with pytest.raises(ContractError, match="pre-computation"):
            precompute_docs(model, self.DOCS)

    def test_unknown_doc_id(self):
        with pytest.raises(CacheError, match="D9"):
            precompute_docs(self._model(), self.DOCS, doc_ids=["D1", "D9"])
