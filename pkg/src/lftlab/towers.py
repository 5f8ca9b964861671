"""Tower bindings: who shares which adapter between query and document.

A binding is an immutable routing table deciding, per tower, which prefix
stacks and low-rank modules the encoder sees.  Siamese bindings share
everything; semi-Siamese bindings mix a common module with tower-specific
ones; the heterogeneous binding keeps two fully independent encoders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import Vocab, text_to_ids
from .encoder import (AdapterHooks, EncoderConfig, EncoderState, LoraEntry,
                      TokenSequence, build_joint_sequence, build_tower_sequence,
                      encode, encoder_param_shapes)
from .errors import CacheError, ConfigError, ContractError
from .lft import (FullFT, Hybrid, LoRA, LoRAPlus, PrefixStack, PrefixTuning,
                  PromptModule, PromptTuning, build_freeze_plan, LoraModule,
                  validate_spec)
from .params import ParamStore
from .rankers import (DocCache, DocRep, QueryRep, colbert_rows, init_ranker,
                      score_colbert, score_mono, score_twin)
from .tensor import Tensor

PREFIX_VARIANTS = ("shared", "average", "concat", "none", "off")
LORA_VARIANTS = ("shared", "shared_q_hetero_v", "shared_v_hetero_q", "hetero_both", "off")


@dataclass(frozen=True)
class Cross:
    """Single joint tower (cross-encoder)."""


@dataclass(frozen=True)
class SiameseBi:
    """Both towers share every adapter."""


@dataclass(frozen=True)
class SemiSiameseBi:
    prefix_variant: str = "average"
    lora_variant: str = "shared_q_hetero_v"
    common_len: int = 5

    def __post_init__(self):
        if self.prefix_variant not in PREFIX_VARIANTS:
            raise ConfigError(f"unknown prefix sharing variant {self.prefix_variant!r}")
        if self.lora_variant not in LORA_VARIANTS:
            raise ConfigError(f"unknown lora sharing variant {self.lora_variant!r}")
        if self.common_len < 0:
            raise ConfigError("common_len must be >= 0")


@dataclass(frozen=True)
class HeteroFullBi:
    """Two independently fine-tuned full encoders."""
    two_encoders = True


TOWERS = ("query", "document")
_TOWER_KEY = {"query": "query", "document": "doc"}


# ---------------------------------------------------------------------------
# semi-Siamese state and composition

@dataclass
class SsPrefixState:
    """Common plus tower-specific stacks, all reading one source."""
    common: PrefixStack | None
    query: PrefixStack
    doc: PrefixStack
    variant: str
    common_len: int = 5


@dataclass
class SsLoraState:
    """Shared module for common targets, per-tower modules for the rest."""
    shared: LoraModule | None
    query: LoraModule | None
    doc: LoraModule | None
    variant: str


def ss_prefix_compose(state: SsPrefixState, tower: str, variant: str | None = None) -> list[Tensor]:
    """Materialized prefixes one tower should see, per prepend level.

    average: common + specific, elementwise.  concat: the first
    ``common_len`` rows come from the tower-specific stack, the rest from
    the common stack.  none: tower-specific only.
    """
    variant = variant or state.variant
    if tower not in TOWERS:
        raise ContractError(f"unknown tower {tower!r}")
    specific = (state.query if tower == "query" else state.doc).materialize()
    if variant == "none":
        return specific
    if state.common is None:
        raise ConfigError(f"variant {variant!r} needs a common prefix stack")
    common = state.common.materialize()
    if variant == "average":
        return [T.add(c, s) for c, s in zip(common, specific)]
    if variant == "concat":
        k = state.common_len
        total = state.query.spec.prefix_len
        if not 0 < k < total:
            raise ConfigError(f"common_len {k} must lie strictly inside prefix length {total}")
        return [T.concat([T.narrow(s, 0, 0, k), T.narrow(c, 0, k, total)], axis=0)
                for c, s in zip(common, specific)]
    raise ConfigError(f"unknown prefix sharing variant {variant!r}")


def ss_lora_bind(state: SsLoraState, tower: str) -> dict[tuple[int, str], LoraEntry]:
    """Adapter entries the given tower routes through; shared targets
    return the identical module for both towers."""
    if tower not in TOWERS:
        raise ContractError(f"unknown tower {tower!r}")
    hooks: dict[tuple[int, str], LoraEntry] = {}
    if state.shared is not None:
        hooks.update(state.shared.entries())
    specific = state.query if tower == "query" else state.doc
    if specific is not None:
        hooks.update(specific.entries())
    return hooks


def _split_lora_targets(variant: str, targets: tuple[str, ...]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(shared targets, per-tower targets) for a sharing variant; the dense
    target is always shared."""
    hetero = {"shared_q_hetero_v": ("v",), "shared_v_hetero_q": ("q",),
              "hetero_both": ("q", "v")}[variant]
    per_tower = tuple(t for t in targets if t in hetero)
    shared = tuple(t for t in targets if t not in hetero)
    return shared, per_tower


# ---------------------------------------------------------------------------
# full ranking model

class NrmModel:
    """Encoder(s) + adapters + scoring head over one ParamStore."""

    def __init__(self, config: EncoderConfig, ranker: str, binding, spec,
                 vocab: Vocab, seed: int, colbert_dim: int = 32,
                 encoder_arrays: dict[str, np.ndarray] | None = None):
        validate_spec(spec, config)
        _validate_binding(binding, spec, ranker)
        self.config = config
        self.ranker = ranker
        self.binding = binding
        self.spec = spec
        self.vocab = vocab
        self.seed = seed
        self.store = ParamStore(config.precision)
        self.colbert_dim = colbert_dim

        if isinstance(binding, HeteroFullBi):
            self.encoders = {
                tower: _init_encoder(config, seed, self.store, f"encoder.{_TOWER_KEY[tower]}.",
                                     encoder_arrays)
                for tower in TOWERS}
        else:
            shared = _init_encoder(config, seed, self.store, "encoder.", encoder_arrays)
            self.encoders = {"joint": shared, "query": shared, "document": shared}

        init_ranker(self.store, ranker, config, seed, colbert_dim=colbert_dim)

        self.prompt: PromptModule | None = None
        self.prefix_variant: str | None = None
        self.prefix_stacks: dict[str, PrefixStack] = {}
        self.lora_variant: str | None = None
        self.lora_modules: dict[str, LoraModule] = {}
        for member in _members(spec):
            self._build_adapter(member)

        self.n_slots = 0
        for member in _members(spec):
            if isinstance(member, PrefixTuning):
                self.n_slots = member.prefix_len
                break
            if isinstance(member, PromptTuning):
                self.n_slots = member.prompt_len
        self.store.apply_freeze_plan(build_freeze_plan(spec, self.store).trainable)

    # -- construction helpers ------------------------------------------------

    def _build_adapter(self, member) -> None:
        binding = self.binding
        if isinstance(member, PromptTuning):
            self.prompt = PromptModule(self.store, self.config, member, self.seed)
        elif isinstance(member, PrefixTuning):
            variant = getattr(binding, "prefix_variant", "shared")
            if variant in ("shared", "off"):
                self.prefix_variant = "shared"
                self.prefix_stacks["shared"] = PrefixStack(
                    self.store, self.config, member, self.seed)
            else:
                self.prefix_variant = variant
                need_common = variant in ("average", "concat")
                if need_common:
                    self.prefix_stacks["common"] = PrefixStack(
                        self.store, self.config, member, self.seed,
                        ns="prefix.common.point.")
                for tower in TOWERS:
                    key = _TOWER_KEY[tower]
                    self.prefix_stacks[key] = PrefixStack(
                        self.store, self.config, member, self.seed,
                        ns=f"prefix.{key}.point.")
        elif isinstance(member, LoRA):
            variant = getattr(binding, "lora_variant", "shared")
            if variant in ("shared", "off"):
                self.lora_variant = "shared"
                self.lora_modules["shared"] = LoraModule(
                    self.store, self.config, member, self.seed)
            else:
                self.lora_variant = variant
                shared_targets, tower_targets = _split_lora_targets(variant, member.targets)
                if shared_targets:
                    self.lora_modules["shared"] = LoraModule(
                        self.store, self.config, member, self.seed, targets=shared_targets)
                for tower in TOWERS:
                    key = _TOWER_KEY[tower]
                    self.lora_modules[key] = LoraModule(
                        self.store, self.config, member, self.seed,
                        ns=f"lora.{key}.", targets=tower_targets)
        else:
            raise ConfigError(f"cannot build adapters for {member!r}")

    def ss_prefix_state(self) -> SsPrefixState:
        if self.prefix_variant in (None, "shared"):
            raise ConfigError("model has no semi-Siamese prefix state")
        return SsPrefixState(common=self.prefix_stacks.get("common"),
                             query=self.prefix_stacks["query"],
                             doc=self.prefix_stacks["doc"],
                             variant=self.prefix_variant,
                             common_len=getattr(self.binding, "common_len", 5))

    def ss_lora_state(self) -> SsLoraState:
        if self.lora_variant in (None, "shared"):
            raise ConfigError("model has no semi-Siamese lora state")
        return SsLoraState(shared=self.lora_modules.get("shared"),
                           query=self.lora_modules.get("query"),
                           doc=self.lora_modules.get("doc"),
                           variant=self.lora_variant)

    # -- properties ----------------------------------------------------------

    @property
    def is_bi_encoder(self) -> bool:
        return not isinstance(self.binding, Cross)

    # -- hooks and encoding --------------------------------------------------

    def hooks_for(self, tower: str, train: bool = False,
                  rng: np.random.Generator | None = None) -> AdapterHooks:
        hooks = AdapterHooks(train=train, dropout_rng=rng)
        if self.prompt is not None:
            hooks.prompt = self.prompt.vectors()
        if self.prefix_variant == "shared":
            hooks.prefixes = self.prefix_stacks["shared"].materialize()
        elif self.prefix_variant is not None:
            hooks.prefixes = ss_prefix_compose(self.ss_prefix_state(), tower)
        if self.lora_variant == "shared":
            hooks.lora = self.lora_modules["shared"].entries()
        elif self.lora_variant is not None:
            hooks.lora = ss_lora_bind(self.ss_lora_state(), tower)
        return hooks

    def encode_tower(self, seq: TokenSequence, tower: str, train: bool = False,
                     rng: np.random.Generator | None = None) -> list[Tensor]:
        if isinstance(self.binding, Cross):
            if tower != "joint":
                raise ContractError("cross binding has a single joint tower")
        elif tower not in TOWERS:
            raise ContractError(f"bi-encoder towers are {TOWERS}, got {tower!r}")
        if isinstance(self.binding, HeteroFullBi):
            state = self.encoders[tower]
            hooks = AdapterHooks(train=train, dropout_rng=rng)
        else:
            state = self.encoders[tower if tower != "joint" else "joint"]
            hooks = self.hooks_for(tower, train=train, rng=rng)
        return encode(state, seq, hooks)

    # -- sequences -----------------------------------------------------------

    def text_ids(self, text: str) -> list[int]:
        return text_to_ids(text, self.vocab)

    def tower_sequence(self, text: str) -> TokenSequence:
        return build_tower_sequence(self.text_ids(text), self.n_slots,
                                    self.config.max_seq_len)

    def joint_sequence(self, query: str, doc: str) -> TokenSequence:
        return build_joint_sequence(self.text_ids(query), self.text_ids(doc),
                                    self.n_slots, self.config.max_seq_len)

    # -- scoring -------------------------------------------------------------

    def score_text(self, query: str, doc: str, train: bool = False,
                   rng: np.random.Generator | None = None) -> Tensor:
        if isinstance(self.binding, Cross):
            seq = self.joint_sequence(query, doc)
            levels = self.encode_tower(seq, "joint", train=train, rng=rng)
            return score_mono(levels[-1], seq, self.store)
        q_seq = self.tower_sequence(query)
        q_final = self.encode_tower(q_seq, "query", train=train, rng=rng)[-1]
        return self._score_against_query(q_final, q_seq, doc, train=train, rng=rng)

    def triplet_scores(self, query: str, pos_doc: str, neg_doc: str,
                       train: bool = False,
                       rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """(s_pos, s_neg) with the query encoded once for bi-encoders."""
        if isinstance(self.binding, Cross):
            return (self.score_text(query, pos_doc, train, rng),
                    self.score_text(query, neg_doc, train, rng))
        q_seq = self.tower_sequence(query)
        q_final = self.encode_tower(q_seq, "query", train=train, rng=rng)[-1]
        s_pos = self._score_against_query(q_final, q_seq, pos_doc, train, rng)
        s_neg = self._score_against_query(q_final, q_seq, neg_doc, train, rng)
        return s_pos, s_neg

    def _score_against_query(self, q_final: Tensor, q_seq: TokenSequence, doc: str,
                             train: bool = False,
                             rng: np.random.Generator | None = None) -> Tensor:
        d_seq = self.tower_sequence(doc)
        d_final = self.encode_tower(d_seq, "document", train=train, rng=rng)[-1]
        if self.ranker == "twin":
            cls_q = T.narrow(q_final, 0, q_seq.n_slots, q_seq.n_slots + 1)
            cls_d = T.narrow(d_final, 0, d_seq.n_slots, d_seq.n_slots + 1)
            return score_twin(cls_q, cls_d, self.store)
        if self.ranker == "colbert":
            q_rows = colbert_rows(q_final, q_seq, self.store)
            d_rows = colbert_rows(d_final, d_seq, self.store)
            return score_colbert(q_rows, d_rows)
        raise ContractError(f"bi-encoder scoring unsupported for ranker {self.ranker!r}")

    # -- cached inference ----------------------------------------------------

    def query_rep(self, text: str) -> QueryRep:
        seq = self.tower_sequence(text)
        final = self.encode_tower(seq, "query")[-1]
        if self.ranker == "twin":
            cls = T.narrow(final, 0, seq.n_slots, seq.n_slots + 1)
            return QueryRep(cls_vector=cls.data)
        return QueryRep(token_matrix=colbert_rows(final, seq, self.store).data)

    def doc_rep(self, text: str) -> DocRep:
        seq = self.tower_sequence(text)
        final = self.encode_tower(seq, "document")[-1]
        if self.ranker == "twin":
            cls = T.narrow(final, 0, seq.n_slots, seq.n_slots + 1)
            return DocRep(cls_vector=cls.data)
        return DocRep(token_matrix=colbert_rows(final, seq, self.store).data)

    def score_from_reps(self, qrep: QueryRep, drep: DocRep) -> float:
        if self.ranker == "twin":
            return score_twin(Tensor(qrep.cls_vector), Tensor(drep.cls_vector),
                              self.store).item()
        if self.ranker == "colbert":
            return score_colbert(Tensor(qrep.token_matrix),
                                 Tensor(drep.token_matrix)).item()
        raise ContractError(f"rep scoring unsupported for ranker {self.ranker!r}")

    def check_cache(self, cache: DocCache) -> None:
        if cache.fingerprint != self.store.fingerprint():
            raise CacheError("document cache is stale: parameters changed after caching")

    # -- persistence ---------------------------------------------------------

    def save(self, path: str) -> None:
        from .container import write_tensors
        write_tensors(path, {n: self.store.value(n) for n in self.store.names()})

    def load_arrays(self, path: str) -> None:
        from .container import read_tensors, validate_names
        tensors = read_tensors(path)
        validate_names(tensors, self.store.names(), path)
        for name, arr in tensors.items():
            self.store.set_value(name, arr)


def _members(spec) -> list:
    if isinstance(spec, Hybrid):
        return [spec.first, spec.second]
    if isinstance(spec, FullFT):
        return []
    return [spec]


def _init_encoder(config, seed, store, ns, encoder_arrays) -> EncoderState:
    if encoder_arrays is None:
        return EncoderState.init_random(config, seed, store=store, ns=ns)
    shapes = encoder_param_shapes(config)
    if set(encoder_arrays) != set(shapes):
        raise ConfigError("pre-trained encoder arrays do not match the config's scheme")
    state = EncoderState(config, store, ns)
    for name in shapes:
        arr = encoder_arrays[name]
        if tuple(arr.shape) != shapes[name]:
            raise ConfigError(f"encoder tensor {name!r} has shape {arr.shape}, "
                              f"expected {shapes[name]}")
        store.add(ns + name, arr)
    return state


def _validate_binding(binding, spec, ranker: str) -> None:
    if ranker not in ("mono", "twin", "colbert"):
        raise ConfigError(f"unknown ranker {ranker!r}")
    if isinstance(binding, Cross) != (ranker == "mono"):
        raise ConfigError("the joint-CLS ranker pairs with the cross binding only")
    if isinstance(binding, HeteroFullBi) and not isinstance(spec, FullFT):
        raise ConfigError("heterogeneous encoders require full fine-tuning")
    if isinstance(binding, SemiSiameseBi):
        if isinstance(spec, FullFT):
            raise ConfigError("semi-Siamese binding needs a lightweight spec")
        members = _members(spec)
        has_prefix = any(isinstance(m, PrefixTuning) for m in members)
        has_lora = any(isinstance(m, LoRA) for m in members)
        if binding.prefix_variant == "off" and has_prefix:
            raise ConfigError("prefix module present but prefix sharing is 'off'")
        if binding.prefix_variant not in ("off", "shared") and not has_prefix:
            raise ConfigError(f"prefix sharing {binding.prefix_variant!r} without a prefix module")
        if binding.lora_variant == "off" and has_lora:
            raise ConfigError("lora module present but lora sharing is 'off'")
        if binding.lora_variant not in ("off", "shared") and not has_lora:
            raise ConfigError(f"lora sharing {binding.lora_variant!r} without a lora module")
