import numpy as np
import pytest

from lftlab import tensor as T
from lftlab.encoder import EncoderConfig, LoraEntry, bert_base_like
from lftlab.errors import ConfigError, ScheduleError
from lftlab.gradcheck import backward
from lftlab.lft import (FullFT, FreezePlan, Hybrid, LoRA, LoRAPlus, LoraModule,
                        PrefixStack, PrefixTuning, PromptTuning, approx_param_count,
                        apply_prefix, build_freeze_plan, count_trainable,
                        hybrid_stage, lora_forward, lora_merge,
                        merge_lora_into_encoder, stage_freeze_plan, validate_spec)
from lftlab.params import ParamStore
from lftlab.tensor import GradTape, Tensor

BERT = bert_base_like()
TINY = EncoderConfig(layers=2, model_dim=8, heads=2, ffn_dim=16, vocab_size=12,
                     max_seq_len=32)


class TestGoldenCounts:
    """Exact trainable-parameter counts on the full-scale preset."""

    def test_prompt(self):
        assert count_trainable(PromptTuning(prompt_len=10), BERT) == 7_680
        assert approx_param_count(7_680) == "8K"

    def test_prefix_retained(self):
        n = count_trainable(PrefixTuning(), BERT, convention="retained")
        assert n == 99_840
        assert approx_param_count(n) == "0.1M"

    def test_prefix_optimizer_exceeds_retained(self):
        retained = count_trainable(PrefixTuning(), BERT, convention="retained")
        optimizer = count_trainable(PrefixTuning(), BERT, convention="optimizer")
        assert optimizer > retained

    def test_lora(self):
        n = count_trainable(LoRA(), BERT)
        assert n == 589_824
        assert approx_param_count(n) == "0.6M"

    def test_lora_plus(self):
        n = count_trainable(LoRAPlus(), BERT)
        assert n == 884_736
        assert approx_param_count(n) == "0.9M"

    def test_hybrid(self):
        spec = Hybrid(PrefixTuning(), LoRA(), m_epochs=30, n_epochs=10)
        n = count_trainable(spec, BERT, convention="retained")
        assert n == 689_664
        assert approx_param_count(n) == "0.7M"

    def test_full_ft(self):
        assert approx_param_count(count_trainable(FullFT(), BERT)) == "110M"


class TestPrefixStack:
    def _stack(self, store, spec, config, seed=3):
        return PrefixStack(store, config, spec, seed=seed)

    def test_zero_mlp_weights_give_up_bias(self):
        spec = PrefixTuning(prefix_len=2, source_dim=3, mlp_hidden=4)
        store = ParamStore("f64")
        stack = self._stack(store, spec, TINY)
        for name in stack.param_names():
            if name != "prefix.source" and name.endswith("weight"):
                store.set_value(name, np.zeros_like(store.value(name)))
        store.set_value("prefix.point.1.up.bias", np.arange(8.0))
        out = stack.materialize()
        assert np.allclose(out[0].data, 0.0)
        assert np.allclose(out[1].data, np.tile(np.arange(8.0), (2, 1)))

    def test_hand_computed_vector(self):
        config = EncoderConfig(layers=1, model_dim=2, heads=1, ffn_dim=4,
                               vocab_size=8, max_seq_len=8, precision="f64")
        spec = PrefixTuning(prefix_len=1, source_dim=2, mlp_hidden=2)
        store = ParamStore("f64")
        stack = PrefixStack(store, config, spec, seed=0)
        store.set_value("prefix.source", [[1.0, 2.0]])
        store.set_value("prefix.point.0.down.weight", np.eye(2))
        store.set_value("prefix.point.0.down.bias", [0.5, -3.0])
        store.set_value("prefix.point.0.up.weight", [[2.0, 0.0], [1.0, 1.0]])
        store.set_value("prefix.point.0.up.bias", [0.0, 1.0])
        # down: [1.5, -1]; relu: [1.5, 0]; up: [3.0, 1.5] + [0, 1] = [3.0, 2.5]
        out = stack.materialize()
        assert np.allclose(out[0].data, [[3.0, 2.5]])

    def test_source_index_locality(self):
        spec = PrefixTuning(prefix_len=5, source_dim=4, mlp_hidden=4)
        store = ParamStore("f64")
        stack = self._stack(store, spec, TINY)
        base = [lvl.data.copy() for lvl in stack.materialize()]
        src = store.value("prefix.source").copy()
        src[3] += 1.0
        store.set_value("prefix.source", src)
        bumped = [lvl.data for lvl in stack.materialize()]
        for lvl_a, lvl_b in zip(base, bumped):
            assert np.array_equal(lvl_a[:3], lvl_b[:3])
            assert np.array_equal(lvl_a[4:], lvl_b[4:])
            assert not np.array_equal(lvl_a[3], lvl_b[3])


class TestApplyPrefix:
    def test_replacement_semantics(self):
        hidden = Tensor(np.full((5, 3), 7.0))
        prefixes = Tensor(np.arange(6.0).reshape(2, 3))
        out = apply_prefix(hidden, prefixes)
        assert np.array_equal(out.data[:2], prefixes.data)
        assert np.array_equal(out.data[2:], hidden.data[2:])

    def test_zero_length_is_identity(self):
        hidden = Tensor(np.ones((3, 2)))
        out = apply_prefix(hidden, Tensor(np.zeros((0, 2))))
        assert out is hidden

    def test_no_gradient_through_replaced_rows(self):
        hidden = Tensor(np.ones((4, 2)), grad_enabled=True)
        prefixes = Tensor(np.zeros((2, 2)), grad_enabled=True)
        with GradTape() as tape:
            out = apply_prefix(hidden, prefixes)
            loss = T.sum_all(out)
        g = tape.gradients(loss)[id(hidden)]
        assert np.array_equal(g[:2], np.zeros((2, 2)))
        assert np.array_equal(g[2:], np.ones((2, 2)))


class TestLoraModule:
    def test_zero_init_contribution(self):
        store = ParamStore("f64")
        module = LoraModule(store, TINY, LoRA(rank=2, alpha=4, dropout=0.0), seed=2)
        x = Tensor(np.random.default_rng(0).normal(size=(3, 8)))
        w0 = Tensor(np.random.default_rng(1).normal(size=(8, 8)))
        bias = Tensor(np.zeros(8))
        out = lora_forward(x, w0, bias, module.entry(0, "q"))
        assert np.array_equal(out.data, (x.data @ w0.data.T))

    def test_rank_one_hand_oracle(self):
        entry = LoraEntry(A=Tensor(np.array([[1.0, 0.0]])),
                          B=Tensor(np.array([[1.0], [0.0]])),
                          scale=1.0)
        x = Tensor(np.array([[3.0, 5.0]]))
        w0 = Tensor(np.eye(2))
        out = lora_forward(x, w0, Tensor(np.zeros(2)), entry)
        assert np.allclose(out.data, [[6.0, 5.0]])

    def test_rank_must_be_below_dim(self):
        store = ParamStore("f64")
        with pytest.raises(ConfigError):
            LoraModule(store, TINY, LoRA(rank=8), seed=0)


class TestLoraMerge:
    def _trained_module(self, store, seed=0):
        module = LoraModule(store, TINY, LoRA(rank=2, alpha=4, dropout=0.0), seed=seed)
        rng = np.random.default_rng(seed)
        for name in module.param_names():
            store.set_value(name, rng.normal(0, 0.1, size=store.value(name).shape))
        return module

    def test_zero_adapter_merges_to_identity(self):
        store = ParamStore("f64")
        module = LoraModule(store, TINY, LoRA(rank=2), seed=0)
        w0 = np.random.default_rng(3).normal(size=(8, 8))
        merged = lora_merge(w0, store.value("lora.0.q.A"), store.value("lora.0.q.B"),
                            module.scale)
        assert merged.tobytes() == w0.tobytes()

    def test_dual_path_equivalence(self):
        store = ParamStore("f64")
        module = self._trained_module(store)
        rng = np.random.default_rng(7)
        w0 = rng.normal(size=(8, 8))
        bias = rng.normal(size=8)
        x = rng.normal(size=(4, 8))
        adapter_out = lora_forward(Tensor(x), Tensor(w0), Tensor(bias),
                                   module.entry(1, "v")).data
        merged = lora_merge(w0, store.value("lora.1.v.A"), store.value("lora.1.v.B"),
                            module.scale)
        direct = x @ merged.T + bias
        assert np.allclose(adapter_out, direct, atol=1e-10)

    def test_merge_zeroes_adapters(self):
        store = ParamStore("f64")
        module = self._trained_module(store)
        from lftlab.encoder import EncoderState
        EncoderState.init_random(TINY, seed=0, store=store, ns="encoder.")
        before = {f"encoder.layer.{l}.attn.{p}.weight":
                  store.value(f"encoder.layer.{l}.attn.{p}.weight").copy()
                  for l in range(2) for p in ("wq", "wv")}
        merge_lora_into_encoder(store, module)
        after_first = {name: store.value(name).copy() for name in before}
        for l in range(2):
            for t in ("q", "v"):
                assert np.array_equal(store.value(f"lora.{l}.{t}.B"), 0.0 * store.value(f"lora.{l}.{t}.B"))
        merge_lora_into_encoder(store, module)
        for name in before:
            assert store.value(name).tobytes() == after_first[name].tobytes()
            assert not np.array_equal(store.value(name), before[name])


class TestFreezePlans:
    def _store_with_model(self, spec):
        from lftlab.corpus import build_vocab
        from lftlab.towers import NrmModel, SiameseBi
        vocab = build_vocab(["a b c"], 10)
        model = NrmModel(TINY, "colbert", SiameseBi(), spec, vocab, seed=0)
        return model.store

    def test_lora_plan(self):
        store = self._store_with_model(LoRA(rank=2))
        plan = build_freeze_plan(LoRA(rank=2), store)
        assert all(n.startswith(("lora.", "ranker.")) for n in plan.trainable)
        assert any(n.startswith("lora.") for n in plan.trainable)

    def test_prefix_plan(self):
        spec = PrefixTuning(prefix_len=2, source_dim=4, mlp_hidden=4)
        store = self._store_with_model(spec)
        plan = build_freeze_plan(spec, store)
        assert all(n.startswith(("prefix.", "ranker.")) for n in plan.trainable)
        assert "prefix.source" in plan.trainable

    def test_full_ft_plan_covers_everything(self):
        store = self._store_with_model(FullFT())
        plan = build_freeze_plan(FullFT(), store)
        assert set(plan.trainable) == set(store.names())

    def test_optimizer_count_matches_plan(self):
        cases = [
            (PromptTuning(prompt_len=3), None),
            (PrefixTuning(prefix_len=2, source_dim=4, mlp_hidden=4), None),
            (LoRA(rank=2), None),
            (LoRAPlus(rank=2), None),
            (Hybrid(PrefixTuning(prefix_len=2, source_dim=4, mlp_hidden=4),
                    LoRA(rank=2), m_epochs=1, n_epochs=1), None),
        ]
        for spec, _ in cases:
            store = self._store_with_model(spec)
            plan = build_freeze_plan(spec, store)
            ranker = len(store.names_under("ranker."))
            counted = count_trainable(spec, TINY, convention="optimizer")
            enumerated = store.total_size(plan.trainable) - store.total_size(
                store.names_under("ranker."))
            assert counted == enumerated, spec


class TestHybridStages:
    SPEC = Hybrid(PrefixTuning(), LoRA(), m_epochs=30, n_epochs=10)

    def test_early_epoch_is_stage_one(self):
        stage = hybrid_stage(self.SPEC, 5)
        assert stage.stage == 1 and stage.active == ("first",) and not stage.boundary

    def test_boundary_epoch(self):
        stage = hybrid_stage(self.SPEC, 30)
        assert stage.stage == 2 and stage.active == ("second",) and stage.boundary

    def test_concurrent_always_both(self):
        spec = Hybrid(PrefixTuning(), LoRA(), mode="concurrent", m_epochs=3, n_epochs=2)
        for epoch in (0, 4, 99):
            stage = hybrid_stage(spec, epoch)
            assert stage.active == ("first", "second")

    def test_out_of_range(self):
        with pytest.raises(ScheduleError):
            hybrid_stage(self.SPEC, 40)

    def test_members_must_differ(self):
        with pytest.raises(ConfigError):
            Hybrid(LoRA(), LoRAPlus())

    def test_members_must_be_lightweight(self):
        with pytest.raises(ConfigError):
            Hybrid(FullFT(), LoRA())

    def test_stage_plans(self):
        from lftlab.corpus import build_vocab
        from lftlab.towers import NrmModel, SiameseBi
        spec = Hybrid(PrefixTuning(prefix_len=2, source_dim=4, mlp_hidden=4),
                      LoRA(rank=2), m_epochs=2, n_epochs=2)
        vocab = build_vocab(["a b"], 10)
        model = NrmModel(TINY, "colbert", SiameseBi(), spec, vocab, seed=0)
        plan1 = stage_freeze_plan(spec, model.store, 1)
        plan2 = stage_freeze_plan(spec, model.store, 2)
        assert any(n.startswith("prefix.") for n in plan1.trainable)
        assert not any(n.startswith("lora.") for n in plan1.trainable)
        assert any(n.startswith("lora.") for n in plan2.trainable)
        assert not any(n.startswith("prefix.") for n in plan2.trainable)


class TestSpecValidation:
    def test_rank_range(self):
        with pytest.raises(ConfigError):
            validate_spec(LoRA(rank=8), TINY)

    def test_prefix_slots_must_fit(self):
        with pytest.raises(ConfigError):
            validate_spec(PrefixTuning(prefix_len=30, source_dim=4, mlp_hidden=4), TINY)

    def test_prompt_len_positive(self):
        with pytest.raises(ConfigError):
            PromptTuning(prompt_len=0)
