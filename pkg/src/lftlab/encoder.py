"""Miniature BERT-style transformer encoder with adapter hook points.

Sequence layout: ``[prefix slots][CLS][text tokens][SEP]`` for bi-encoder
towers and ``[prefix slots][CLS][query][SEP][document][SEP]`` (segment ids
0/1) for the joint cross-encoder input.  Prefix slots occupy the leading
positions, consume position-embedding indices 0..n_slots-1 and are
overwritten at every layer when prefix hooks are present.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .container import read_tensors, validate_names, write_tensors
from .errors import ConfigError, ContractError, DimensionError
from .params import ParamStore, init_normal, init_ones, init_zeros
from .tensor import Tensor

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
MASK_ID = 3
UNK_ID = 4

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    vocab_size: int = 200
    max_seq_len: int = 96
    dropout_rate: float = 0.1
    precision: str = "f32"

    def __post_init__(self):
        if min(self.layers, self.model_dim, self.heads, self.ffn_dim,
               self.vocab_size, self.max_seq_len) <= 0:
            raise ConfigError("all encoder dimensions must be positive")
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


def bert_base_like() -> EncoderConfig:
    """Full-scale preset used only for parameter accounting."""
    return EncoderConfig(layers=12, model_dim=768, heads=12, ffn_dim=3072,
                         vocab_size=30522, max_seq_len=512)


def encoder_param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """The documented naming scheme with shapes, in deterministic order."""
    d = config.model_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (config.vocab_size, d),
        "embeddings.position": (config.max_seq_len, d),
        "embeddings.segment": (2, d),
        "embeddings.ln.gain": (d,),
        "embeddings.ln.bias": (d,),
    }
    for i in range(config.layers):
        base = f"layer.{i}"
        for proj in ("wq", "wk", "wv", "dense"):
            shapes[f"{base}.attn.{proj}.weight"] = (d, d)
            shapes[f"{base}.attn.{proj}.bias"] = (d,)
        shapes[f"{base}.ln1.gain"] = (d,)
        shapes[f"{base}.ln1.bias"] = (d,)
        shapes[f"{base}.ffn.up.weight"] = (config.ffn_dim, d)
        shapes[f"{base}.ffn.up.bias"] = (config.ffn_dim,)
        shapes[f"{base}.ffn.down.weight"] = (d, config.ffn_dim)
        shapes[f"{base}.ffn.down.bias"] = (d,)
        shapes[f"{base}.ln2.gain"] = (d,)
        shapes[f"{base}.ln2.bias"] = (d,)
    return shapes


def count_parameters(config: EncoderConfig) -> int:
    """Closed-form encoder parameter count (matches exact enumeration)."""
    d = config.model_dim
    embeddings = (config.vocab_size + config.max_seq_len + 2) * d + 2 * d
    per_layer = (
        4 * (d * d + d)                      # wq, wk, wv, dense
        + 2 * d                              # ln1
        + config.ffn_dim * d + config.ffn_dim  # up
        + d * config.ffn_dim + d             # down
        + 2 * d                              # ln2
    )
    return embeddings + config.layers * per_layer


class EncoderState:
    """View of one encoder's parameters inside a ParamStore.

    ``ns`` is the name prefix inside the store ("" for a standalone
    encoder, "encoder." inside a full ranking model).
    """

    def __init__(self, config: EncoderConfig, store: ParamStore, ns: str = ""):
        self.config = config
        self.store = store
        self.ns = ns

    def p(self, name: str) -> Tensor:
        return self.store.get(self.ns + name)

    def names(self) -> list[str]:
        return [self.ns + n for n in encoder_param_shapes(self.config)]

    @classmethod
    def init_random(cls, config: EncoderConfig, seed: int, store: ParamStore | None = None,
                    ns: str = "") -> "EncoderState":
        store = store if store is not None else ParamStore(config.precision)
        for name, shape in encoder_param_shapes(config).items():
            full = ns + name
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "gain":
                init_ones(store, full, shape)
            elif leaf == "bias":
                init_zeros(store, full, shape)
            else:
                init_normal(store, full, shape, seed=seed, std=0.02)
        return cls(config, store, ns)

    def save(self, path: str) -> None:
        write_tensors(path, {n: self.store.value(self.ns + n)
                             for n in encoder_param_shapes(self.config)})

    @classmethod
    def load(cls, path: str, config: EncoderConfig, store: ParamStore | None = None,
             ns: str = "") -> "EncoderState":
        tensors = read_tensors(path)
        shapes = encoder_param_shapes(config)
        validate_names(tensors, shapes, path)
        for name, arr in tensors.items():
            if arr.shape != shapes[name]:
                raise ConfigError(
                    f"tensor {name!r} has shape {arr.shape}, config expects {shapes[name]}")
        store = store if store is not None else ParamStore(config.precision)
        for name in shapes:
            store.add(ns + name, tensors[name])
        return cls(config, store, ns)


# ---------------------------------------------------------------------------
# token sequences

@dataclass
class TokenSequence:
    ids: np.ndarray
    mask: np.ndarray
    segments: np.ndarray
    n_slots: int = 0
    n_text: int = 0

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=np.int64)
        self.segments = np.asarray(self.segments, dtype=np.int64)
        if not (len(self.ids) == len(self.mask) == len(self.segments)):
            raise ContractError("ids/mask/segments lengths differ")
        pad_started = False
        for m in self.mask:
            if m == 0:
                pad_started = True
            elif pad_started:
                raise ContractError("padding must be a contiguous suffix")

    @property
    def length(self) -> int:
        return int(len(self.ids))

    def pad_to(self, length: int) -> "TokenSequence":
        extra = length - self.length
        if extra < 0:
            raise ContractError(f"cannot pad length {self.length} down to {length}")
        if extra == 0:
            return self
        return TokenSequence(
            ids=np.concatenate([self.ids, np.full(extra, PAD_ID, dtype=np.int64)]),
            mask=np.concatenate([self.mask, np.zeros(extra, dtype=np.int64)]),
            segments=np.concatenate([self.segments, np.zeros(extra, dtype=np.int64)]),
            n_slots=self.n_slots, n_text=self.n_text)


def build_tower_sequence(text_ids, n_slots: int, max_seq_len: int) -> TokenSequence:
    """[slots][CLS][text][SEP]; text is truncated to fit the budget."""
    budget = max_seq_len - n_slots - 2
    if budget < 0:
        raise ContractError(
            f"{n_slots} slots do not fit a max_seq_len of {max_seq_len}")
    text = list(text_ids)[:budget]
    ids = [PAD_ID] * n_slots + [CLS_ID] + text + [SEP_ID]
    n = len(ids)
    return TokenSequence(ids=np.array(ids), mask=np.ones(n, dtype=np.int64),
                         segments=np.zeros(n, dtype=np.int64),
                         n_slots=n_slots, n_text=len(text))


def build_joint_sequence(query_ids, doc_ids, n_slots: int, max_seq_len: int) -> TokenSequence:
    """[slots][CLS][query][SEP][document][SEP] with segment ids 0/1.

    The query keeps at most a quarter of the text budget (minimum 4
    tokens); the document fills the remainder.
    """
    budget = max_seq_len - n_slots - 3
    if budget < 2:
        raise ContractError(
            f"{n_slots} slots leave no room for text at max_seq_len {max_seq_len}")
    q_budget = max(4, budget // 4)
    query = list(query_ids)[:min(q_budget, budget - 1)]
    doc = list(doc_ids)[:budget - len(query)]
    ids = [PAD_ID] * n_slots + [CLS_ID] + query + [SEP_ID] + doc + [SEP_ID]
    seg0 = n_slots + 1 + len(query) + 1
    segments = [0] * seg0 + [1] * (len(doc) + 1)
    n = len(ids)
    return TokenSequence(ids=np.array(ids), mask=np.ones(n, dtype=np.int64),
                         segments=np.array(segments),
                         n_slots=n_slots, n_text=len(query) + len(doc))


# ---------------------------------------------------------------------------
# adapter hooks

@dataclass
class LoraEntry:
    """Low-rank residual attached to one projection: scale * B @ (A @ x)."""
    A: Tensor
    B: Tensor
    scale: float
    dropout: float = 0.0


@dataclass
class AdapterHooks:
    prompt: Tensor | None = None
    prefixes: list[Tensor] | None = None
    lora: dict[tuple[int, str], LoraEntry] = field(default_factory=dict)
    train: bool = False
    dropout_rng: np.random.Generator | None = None


# ---------------------------------------------------------------------------
# forward pass

def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, T.transpose(w)), b)


def _project(x: Tensor, w: Tensor, b: Tensor, entry: LoraEntry | None,
             hooks: AdapterHooks) -> Tensor:
    h = _linear(x, w, b)
    if entry is None:
        return h
    inp = x
    if hooks.train and entry.dropout > 0.0 and hooks.dropout_rng is not None:
        inp = T.dropout(inp, entry.dropout, hooks.dropout_rng)
    low = T.matmul(inp, T.transpose(entry.A))
    residual = T.scale(T.matmul(low, T.transpose(entry.B)), entry.scale)
    return T.add(h, residual)


def attention_block(hidden: Tensor, state: EncoderState, layer: int,
                    mask_bias: np.ndarray, hooks: AdapterHooks) -> Tensor:
    """Multi-head self-attention + residual + layer norm for one layer."""
    cfg = state.config
    base = f"layer.{layer}.attn"
    q = _project(hidden, state.p(f"{base}.wq.weight"), state.p(f"{base}.wq.bias"),
                 hooks.lora.get((layer, "q")), hooks)
    k = _linear(hidden, state.p(f"{base}.wk.weight"), state.p(f"{base}.wk.bias"))
    v = _project(hidden, state.p(f"{base}.wv.weight"), state.p(f"{base}.wv.bias"),
                 hooks.lora.get((layer, "v")), hooks)
    hd = cfg.head_dim
    inv_sqrt = 1.0 / float(np.sqrt(hd))
    bias_t = Tensor(mask_bias.astype(hidden.data.dtype))
    heads = []
    for h in range(cfg.heads):
        lo, hi = h * hd, (h + 1) * hd
        qh = T.narrow(q, 1, lo, hi)
        kh = T.narrow(k, 1, lo, hi)
        vh = T.narrow(v, 1, lo, hi)
        scores = T.add(T.scale(T.matmul(qh, T.transpose(kh)), inv_sqrt), bias_t)
        attn = T.softmax_rows(scores)
        if hooks.train and cfg.dropout_rate > 0.0 and hooks.dropout_rng is not None:
            attn = T.dropout(attn, cfg.dropout_rate, hooks.dropout_rng)
        heads.append(T.matmul(attn, vh))
    ctx = heads[0] if len(heads) == 1 else T.concat(heads, axis=1)
    out = _project(ctx, state.p(f"{base}.dense.weight"), state.p(f"{base}.dense.bias"),
                   hooks.lora.get((layer, "dense")), hooks)
    return T.layer_norm(T.add(hidden, out),
                        state.p(f"layer.{layer}.ln1.gain"),
                        state.p(f"layer.{layer}.ln1.bias"), eps=LN_EPS)


def _ffn_block(hidden: Tensor, state: EncoderState, layer: int,
               hooks: AdapterHooks) -> Tensor:
    cfg = state.config
    up = _linear(hidden, state.p(f"layer.{layer}.ffn.up.weight"),
                 state.p(f"layer.{layer}.ffn.up.bias"))
    act = T.gelu(up)
    down = _linear(act, state.p(f"layer.{layer}.ffn.down.weight"),
                   state.p(f"layer.{layer}.ffn.down.bias"))
    if hooks.train and cfg.dropout_rate > 0.0 and hooks.dropout_rng is not None:
        down = T.dropout(down, cfg.dropout_rate, hooks.dropout_rng)
    return T.layer_norm(T.add(hidden, down),
                        state.p(f"layer.{layer}.ln2.gain"),
                        state.p(f"layer.{layer}.ln2.bias"), eps=LN_EPS)


def encode(state: EncoderState, seq: TokenSequence,
           hooks: AdapterHooks | None = None) -> list[Tensor]:
    """Hidden states per level: index 0 after embedding, index L after
    the last layer.  Prefix hooks overwrite the slot rows of every level;
    a prompt hook overwrites slot rows of level 0 only."""
    hooks = hooks if hooks is not None else AdapterHooks()
    cfg = state.config
    n = seq.length
    if n > cfg.max_seq_len:
        raise ContractError(f"sequence length {n} exceeds max_seq_len {cfg.max_seq_len}")
    if hooks.prefixes is not None and len(hooks.prefixes) != cfg.layers + 1:
        raise ContractError(
            f"expected {cfg.layers + 1} prefix levels, got {len(hooks.prefixes)}")
    if hooks.prompt is not None and hooks.prefixes is not None:
        raise ContractError("prompt and prefix hooks are mutually exclusive")

    positions = np.arange(n)
    emb = T.add(T.add(T.embedding(state.p("embeddings.token"), seq.ids),
                      T.embedding(state.p("embeddings.position"), positions)),
                T.embedding(state.p("embeddings.segment"), seq.segments))
    hidden = T.layer_norm(emb, state.p("embeddings.ln.gain"),
                          state.p("embeddings.ln.bias"), eps=LN_EPS)
    if hooks.prompt is not None:
        hidden = T.overwrite_rows(hidden, hooks.prompt)
    if hooks.prefixes is not None:
        hidden = T.overwrite_rows(hidden, hooks.prefixes[0])

    # additive key mask: masked columns get -1e9 before the row softmax
    mask_bias = np.where(seq.mask == 0, -1e9, 0.0)[None, :].repeat(n, axis=0)

    levels = [hidden]
    for layer in range(cfg.layers):
        hidden = attention_block(hidden, state, layer, mask_bias, hooks)
        hidden = _ffn_block(hidden, state, layer, hooks)
        if hooks.prefixes is not None:
            hidden = T.overwrite_rows(hidden, hooks.prefixes[layer + 1])
        levels.append(hidden)
    return levels
