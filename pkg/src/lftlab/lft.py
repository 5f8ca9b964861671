"""Lightweight fine-tuning methods and their accounting.

Covers trainable prompts (input layer only), prefix stacks (a shared
low-dimensional source re-projected by per-level MLPs), low-rank adapters
on attention projections (optionally including the post-attention dense
layer), sequential/concurrent two-stage hybrids, freeze plans, and
trainable-parameter counting under two conventions:

* ``optimizer``: everything the optimizer touches (prefix source + MLPs).
* ``retained``: what a deployed model keeps (materialized prefixes only;
  identical to ``optimizer`` for prompts and low-rank adapters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, LoraEntry, count_parameters
from .errors import ConfigError, ScheduleError
from .params import ParamStore, init_normal, init_zeros
from .tensor import Tensor


# ---------------------------------------------------------------------------
# method specs

@dataclass(frozen=True)
class FullFT:
    """Update every encoder and ranker weight."""


@dataclass(frozen=True)
class PromptTuning:
    prompt_len: int = 10

    def __post_init__(self):
        if self.prompt_len < 1:
            raise ConfigError("prompt_len must be >= 1")


@dataclass(frozen=True)
class PrefixTuning:
    prefix_len: int = 10
    source_dim: int = 768
    mlp_hidden: int = 256

    def __post_init__(self):
        if self.prefix_len < 1:
            raise ConfigError("prefix_len must be >= 1")
        if self.source_dim < 1 or self.mlp_hidden < 1:
            raise ConfigError("prefix source/hidden dimensions must be >= 1")


@dataclass(frozen=True)
class LoRA:
    rank: int = 16
    alpha: float = 32.0
    dropout: float = 0.1
    targets: tuple[str, ...] = ("q", "v")

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        bad = set(self.targets) - {"q", "v", "dense"}
        if bad:
            raise ConfigError(f"unknown adapter targets {sorted(bad)}")


@dataclass(frozen=True)
class LoRAPlus(LoRA):
    targets: tuple[str, ...] = ("q", "v", "dense")


@dataclass(frozen=True)
class Hybrid:
    first: object
    second: object
    mode: str = "sequential"  # sequential | concurrent
    m_epochs: int = 30
    n_epochs: int = 10

    def __post_init__(self):
        for member in (self.first, self.second):
            if isinstance(member, (Hybrid, FullFT)):
                raise ConfigError("hybrid members must be non-hybrid adapter specs")
        if _family(self.first) == _family(self.second):
            raise ConfigError("hybrid members must use distinct adapter families")
        if self.mode not in ("sequential", "concurrent"):
            raise ConfigError(f"unknown hybrid mode {self.mode!r}")
        if self.m_epochs < 1 or self.n_epochs < 1:
            raise ConfigError("hybrid stage epoch counts must be >= 1")


def _family(spec) -> str:
    if isinstance(spec, PromptTuning):
        return "prompt"
    if isinstance(spec, PrefixTuning):
        return "prefix"
    if isinstance(spec, LoRA):
        return "lora"
    raise ConfigError(f"not an adapter spec: {spec!r}")


def validate_spec(spec, config: EncoderConfig) -> None:
    if isinstance(spec, LoRA) and spec.rank >= config.model_dim:
        raise ConfigError(
            f"rank {spec.rank} must be smaller than model_dim {config.model_dim}")
    if isinstance(spec, (PromptTuning, PrefixTuning)):
        n = spec.prompt_len if isinstance(spec, PromptTuning) else spec.prefix_len
        if config.max_seq_len < n + 3:
            raise ConfigError(
                f"max_seq_len {config.max_seq_len} too small for {n} leading slots")
    if isinstance(spec, Hybrid):
        validate_spec(spec.first, config)
        validate_spec(spec.second, config)


# ---------------------------------------------------------------------------
# prompt

class PromptModule:
    """Trainable vectors replacing the leading slot rows at the input layer."""

    def __init__(self, store: ParamStore, config: EncoderConfig, spec: PromptTuning,
                 seed: int, ns: str = "prompt."):
        self.store = store
        self.spec = spec
        self.name = f"{ns}vectors"
        if not store.has(self.name):
            init_normal(store, self.name, (spec.prompt_len, config.model_dim), seed)

    def vectors(self) -> Tensor:
        return self.store.get(self.name)


def prompt_prepend(embeddings: Tensor, prompt_params: Tensor) -> Tensor:
    """Overwrite the leading slot rows of the embedding output."""
    return T.overwrite_rows(embeddings, prompt_params)


# ---------------------------------------------------------------------------
# prefix stacks

class PrefixStack:
    """Per-level MLPs (down, ReLU, up) reading a shared source matrix.

    One stack materializes prefixes for all L+1 prepend levels: the input
    layer plus every transformer layer output.
    """

    def __init__(self, store: ParamStore, config: EncoderConfig, spec: PrefixTuning,
                 seed: int, source_name: str = "prefix.source", ns: str = "prefix.point."):
        self.store = store
        self.config = config
        self.spec = spec
        self.source_name = source_name
        self.ns = ns
        self.points = config.layers + 1
        if not store.has(source_name):
            init_normal(store, source_name, (spec.prefix_len, spec.source_dim), seed)
        for level in range(self.points):
            base = f"{ns}{level}"
            if store.has(f"{base}.down.weight"):
                continue
            init_normal(store, f"{base}.down.weight", (spec.mlp_hidden, spec.source_dim), seed)
            init_zeros(store, f"{base}.down.bias", (spec.mlp_hidden,))
            init_normal(store, f"{base}.up.weight", (config.model_dim, spec.mlp_hidden), seed)
            init_zeros(store, f"{base}.up.bias", (config.model_dim,))

    def materialize(self) -> list[Tensor]:
        """Prefix vectors per level: up(relu(down(source))), recomputed on
        every call so gradients reach the source and all MLPs."""
        source = self.store.get(self.source_name)
        out = []
        for level in range(self.points):
            base = f"{self.ns}{level}"
            low = T.add(T.matmul(source, T.transpose(self.store.get(f"{base}.down.weight"))),
                        self.store.get(f"{base}.down.bias"))
            act = T.relu(low)
            up = T.add(T.matmul(act, T.transpose(self.store.get(f"{base}.up.weight"))),
                       self.store.get(f"{base}.up.bias"))
            out.append(up)
        return out

    def param_names(self) -> list[str]:
        names = [self.source_name]
        for level in range(self.points):
            base = f"{self.ns}{level}"
            names += [f"{base}.down.weight", f"{base}.down.bias",
                      f"{base}.up.weight", f"{base}.up.bias"]
        return names


def materialize_prefixes(stack: PrefixStack) -> list[Tensor]:
    return stack.materialize()


def apply_prefix(hidden: Tensor, prefixes_level: Tensor) -> Tensor:
    """Replace (not add) the slot rows; no gradient flows through the
    replaced rows into lower layers."""
    return T.overwrite_rows(hidden, prefixes_level)


# ---------------------------------------------------------------------------
# low-rank adapters

class LoraModule:
    """A (Gaussian) and B (zero) factors per layer and projection target."""

    def __init__(self, store: ParamStore, config: EncoderConfig, spec: LoRA,
                 seed: int, ns: str = "lora.", targets: tuple[str, ...] | None = None):
        validate_spec(spec, config)
        self.store = store
        self.config = config
        self.spec = spec
        self.ns = ns
        self.targets = tuple(targets if targets is not None else spec.targets)
        d = config.model_dim
        for layer in range(config.layers):
            for target in self.targets:
                base = f"{ns}{layer}.{target}"
                if store.has(f"{base}.A"):
                    continue
                init_normal(store, f"{base}.A", (spec.rank, d), seed)
                init_zeros(store, f"{base}.B", (d, spec.rank))

    @property
    def scale(self) -> float:
        return self.spec.alpha / self.spec.rank

    def entry(self, layer: int, target: str) -> LoraEntry:
        base = f"{self.ns}{layer}.{target}"
        return LoraEntry(A=self.store.get(f"{base}.A"), B=self.store.get(f"{base}.B"),
                         scale=self.scale, dropout=self.spec.dropout)

    def entries(self) -> dict[tuple[int, str], LoraEntry]:
        return {(layer, target): self.entry(layer, target)
                for layer in range(self.config.layers) for target in self.targets}

    def param_names(self) -> list[str]:
        return [f"{self.ns}{layer}.{target}.{m}"
                for layer in range(self.config.layers)
                for target in self.targets for m in ("A", "B")]


def lora_forward(x: Tensor, w0: Tensor, bias: Tensor, entry: LoraEntry,
                 train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """h = W0 x + b + scale * B (A dropout(x)); dropout only in training."""
    h = T.add(T.matmul(x, T.transpose(w0)), bias)
    inp = x
    if train and entry.dropout > 0.0 and rng is not None:
        inp = T.dropout(inp, entry.dropout, rng)
    low = T.matmul(inp, T.transpose(entry.A))
    return T.add(h, T.scale(T.matmul(low, T.transpose(entry.B)), entry.scale))


def lora_merge(w0: np.ndarray, a: np.ndarray, b: np.ndarray, scale: float) -> np.ndarray:
    """W0 + scale * B A, in the arrays' own precision."""
    if b.shape[0] != w0.shape[0] or a.shape[1] != w0.shape[1] or a.shape[0] != b.shape[1]:
        raise ConfigError(
            f"adapter shapes A{a.shape} / B{b.shape} do not match W0 {w0.shape}")
    return w0 + w0.dtype.type(scale) * (b @ a)


def merge_lora_into_encoder(store: ParamStore, module: LoraModule,
                            encoder_ns: str = "encoder.") -> None:
    """Fold adapters into the frozen projection weights, then zero every B
    so repeating the merge is a no-op."""
    target_param = {"q": "wq", "v": "wv", "dense": "dense"}
    for layer in range(module.config.layers):
        for target in module.targets:
            base = f"{module.ns}{layer}.{target}"
            a = store.value(f"{base}.A")
            b = store.value(f"{base}.B")
            wname = f"{encoder_ns}layer.{layer}.attn.{target_param[target]}.weight"
            store.set_value(wname, lora_merge(store.value(wname), a, b, module.scale))
            store.set_value(f"{base}.B", np.zeros_like(b))


# ---------------------------------------------------------------------------
# freeze plans and hybrid schedule

@dataclass(frozen=True)
class FreezePlan:
    trainable: frozenset[str]

    def __len__(self):
        return len(self.trainable)


ADAPTER_NAMESPACES = ("prompt.", "prefix.", "lora.")


def _names_under(store: ParamStore, prefixes) -> set[str]:
    out: set[str] = set()
    for p in prefixes:
        out.update(store.names_under(p))
    return out


def build_freeze_plan(spec, store: ParamStore) -> FreezePlan:
    """Trainable-name set for a spec: the ranker is always trainable; the
    encoder base is trainable only under full fine-tuning.  For hybrids
    this is the stage-agnostic union; the stage controller narrows it."""
    trainable = _names_under(store, ("ranker.",))
    if isinstance(spec, FullFT):
        trainable |= _names_under(store, ("encoder.",))
    elif isinstance(spec, Hybrid):
        trainable |= _names_under(store, ADAPTER_NAMESPACES)
    else:
        trainable |= _names_under(store, (f"{_family(spec)}.",))
    return FreezePlan(frozenset(trainable))


def stage_freeze_plan(spec: Hybrid, store: ParamStore, stage: int) -> FreezePlan:
    member = spec.first if stage == 1 else spec.second
    trainable = _names_under(store, ("ranker.", f"{_family(member)}."))
    return FreezePlan(frozenset(trainable))


@dataclass(frozen=True)
class HybridStage:
    stage: int
    active: tuple[str, ...]
    boundary: bool


def hybrid_stage(spec: Hybrid, epoch: int) -> HybridStage:
    """Stage routing for one epoch.

    Sequential: epochs [0, m) train the first member; at epoch m the first
    member is restored to its best-validation checkpoint and frozen;
    epochs [m, m+n) train the second member.  Concurrent: both members are
    trainable every epoch.
    """
    if epoch < 0:
        raise ScheduleError(f"epoch {epoch} out of range")
    if spec.mode == "concurrent":
        return HybridStage(stage=1, active=("first", "second"), boundary=False)
    total = spec.m_epochs + spec.n_epochs
    if epoch >= total:
        raise ScheduleError(f"epoch {epoch} outside sequential schedule of {total}")
    if epoch < spec.m_epochs:
        return HybridStage(stage=1, active=("first",), boundary=False)
    return HybridStage(stage=2, active=("second",), boundary=epoch == spec.m_epochs)


# ---------------------------------------------------------------------------
# trainable-parameter accounting

def _lora_count(spec: LoRA, config: EncoderConfig, lora_variant: str | None) -> int:
    d = config.model_dim
    per_target = config.layers * spec.rank * (d + d)
    if lora_variant in (None, "shared", "off"):
        return per_target * len(spec.targets)
    multiplier = {
        "shared_q_hetero_v": {"q": 1, "v": 2, "dense": 1},
        "shared_v_hetero_q": {"q": 2, "v": 1, "dense": 1},
        "hetero_both": {"q": 2, "v": 2, "dense": 1},
    }.get(lora_variant)
    if multiplier is None:
        raise ConfigError(f"unknown lora sharing variant {lora_variant!r}")
    return per_target * sum(multiplier[t] for t in spec.targets)


def _prefix_count(spec: PrefixTuning, config: EncoderConfig, convention: str,
                  prefix_variant: str | None) -> int:
    points = config.layers + 1
    stacks = 3 if prefix_variant in ("average", "concat", "none") else 1
    if convention == "retained":
        return stacks * points * spec.prefix_len * config.model_dim
    mlp = (spec.mlp_hidden * spec.source_dim + spec.mlp_hidden
           + config.model_dim * spec.mlp_hidden + config.model_dim)
    return spec.prefix_len * spec.source_dim + stacks * points * mlp


def count_trainable(spec, config: EncoderConfig, convention: str = "retained",
                    binding=None) -> int:
    """Closed-form trainable count, excluding the ranker head.

    ``binding`` (a towers.TowerBinding) selects semi-Siamese multiplicities;
    None counts the Siamese/cross layout.
    """
    if convention not in ("optimizer", "retained"):
        raise ConfigError(f"unknown counting convention {convention!r}")
    prefix_variant = getattr(binding, "prefix_variant", None)
    lora_variant = getattr(binding, "lora_variant", None)
    if isinstance(spec, FullFT):
        encoders = 2 if getattr(binding, "two_encoders", False) else 1
        return encoders * count_parameters(config)
    if isinstance(spec, PromptTuning):
        return spec.prompt_len * config.model_dim
    if isinstance(spec, PrefixTuning):
        return _prefix_count(spec, config, convention, prefix_variant)
    if isinstance(spec, LoRA):
        return _lora_count(spec, config, lora_variant)
    if isinstance(spec, Hybrid):
        return (count_trainable(spec.first, config, convention, binding)
                + count_trainable(spec.second, config, convention, binding))
    raise ConfigError(f"unknown spec {spec!r}")


def approx_param_count(n: int) -> str:
    """Human form used in summary tables: 7,680 -> "8K", 589,824 -> "0.6M",
    984,576 -> "1M", 108,891,648 -> "110M"."""
    if n < 10_000:
        return f"{round(n / 1e3):.0f}K"
    if n < 10_000_000:
        v = round(n / 1e5) / 10.0
        return f"{v:g}M"
    return f"{round(n / 1e7) * 10:.0f}M"
