"""Named parameter collections and the Adam updater.

A :class:`ParamStore` maps dotted-path names to tensors with a trainable
flag.  Freezing is enforced structurally: a frozen parameter's tensor is
not grad-enabled, receives no gradient, and is never rebuilt by the
optimizer, so it stays bitwise identical across any number of steps.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .rng import rng_for
from .tensor import DTYPES, Tensor


@dataclass
class Param:
    tensor: Tensor
    trainable: bool


class ParamStore:
    """Ordered name -> (tensor, trainable) map in one precision."""

    def __init__(self, precision: str = "f32"):
        if precision not in DTYPES:
            raise ConfigError(f"unknown precision {precision!r}")
        self.precision = precision
        self._entries: dict[str, Param] = {}

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), grad_enabled=trainable)
        self._entries[name] = Param(t, trainable)
        return t

    def has(self, name: str) -> bool:
        return name in self._entries

    def get(self, name: str) -> Tensor:
        try:
            return self._entries[name].tensor
        except KeyError:
            raise ConfigError(f"unknown parameter {name!r}") from None

    def value(self, name: str) -> np.ndarray:
        return self.get(name).data

    def set_value(self, name: str, value) -> None:
        entry = self._entries[name]
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != entry.tensor.shape:
            raise ContractError(
                f"shape change for {name!r}: {entry.tensor.shape} -> {arr.shape}"
            )
        entry.tensor = Tensor(arr, grad_enabled=entry.trainable)

    def is_trainable(self, name: str) -> bool:
        return self._entries[name].trainable

    def set_trainable(self, name: str, trainable: bool) -> None:
        entry = self._entries[name]
        if entry.trainable != trainable:
            entry.trainable = trainable
            entry.tensor = Tensor(entry.tensor.data, grad_enabled=trainable)

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable_names(self) -> list[str]:
        return [n for n, p in self._entries.items() if p.trainable]

    def names_under(self, prefix: str) -> list[str]:
        return [n for n in self._entries if n.startswith(prefix)]

    def apply_freeze_plan(self, trainable_names) -> None:
        """Make exactly the given names trainable, freeze the rest."""
        wanted = set(trainable_names)
        unknown = wanted - set(self._entries)
        if unknown:
            raise ConfigError(f"freeze plan names unknown parameters: {sorted(unknown)}")
        for name in self._entries:
            self.set_trainable(name, name in wanted)

    def snapshot(self, names=None) -> dict[str, np.ndarray]:
        names = self.names() if names is None else list(names)
        return {n: self.value(n).copy() for n in names}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in snap.items():
            self.set_value(name, arr)

    def size(self, name: str) -> int:
        return int(self.get(name).size)

    def total_size(self, names=None) -> int:
        names = self.names() if names is None else names
        return sum(self.size(n) for n in names)

    def fingerprint(self) -> str:
        """Content hash over names and raw parameter bytes."""
        h = hashlib.sha256()
        for name, p in self._entries.items():
            h.update(name.encode("utf-8"))
            h.update(b"\x00")
            h.update(np.ascontiguousarray(p.tensor.data).tobytes())
        return h.hexdigest()

    def copy(self, precision: str | None = None) -> "ParamStore":
        out = ParamStore(precision or self.precision)
        for name, p in self._entries.items():
            out.add(name, p.tensor.data.astype(out.dtype), trainable=p.trainable)
        return out


def init_normal(store: ParamStore, name: str, shape, seed: int, std: float = 0.02,
                trainable: bool = True) -> None:
    rng = rng_for(seed, "init", name)
    store.add(name, rng.normal(0.0, std, size=shape), trainable=trainable)


def init_zeros(store: ParamStore, name: str, shape, trainable: bool = True) -> None:
    store.add(name, np.zeros(shape), trainable=trainable)


def init_ones(store: ParamStore, name: str, shape, trainable: bool = True) -> None:
    store.add(name, np.ones(shape), trainable=trainable)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def group_of(name: str) -> str:
    """Learning-rate group for a parameter name.

    encoder.* -> "encoder"; ranker.* -> "ranker"; prefix.* and prompt.* ->
    "prefix"; lora.* -> "lora".
    """
    head = name.split(".", 1)[0]
    if head == "encoder":
        return "encoder"
    if head == "ranker":
        return "ranker"
    if head in ("prefix", "prompt"):
        return "prefix"
    if head == "lora":
        return "lora"
    raise ConfigError(f"no learning-rate group for parameter {name!r}")


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              lr_by_group: dict[str, float], group_fn=group_of) -> None:
    """One Adam update over the trainable parameters with gradients.

    Frozen parameters are untouched (their Tensor objects are not even
    rebuilt).  Deterministic: identical inputs give bitwise-identical
    results.
    """
    state.step += 1
    t = state.step
    dtype = store.dtype
    b1 = dtype(state.beta1)
    b2 = dtype(state.beta2)
    eps = dtype(state.epsilon)
    c1 = dtype(1.0 - state.beta1 ** t)
    c2 = dtype(1.0 - state.beta2 ** t)
    for name in store.trainable_names():
        if name not in grads:
            continue
        group = group_fn(name)
        if group not in lr_by_group:
            raise ConfigError(f"no learning rate configured for group {group!r} ({name})")
        lr = dtype(lr_by_group[group])
        g = np.asarray(grads[name], dtype=dtype)
        theta = store.value(name)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        else:
            v = state.v[name]
        m = b1 * m + (dtype(1.0) - b1) * g
        v = b2 * v + (dtype(1.0) - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if state.weight_decay:
            update = update + dtype(state.weight_decay) * theta
        store.set_value(name, theta - lr * update)
