"""Dense tensors with taped reverse-mode gradients.

Tensors wrap read-only numpy arrays in a single precision (float32 for
training, float64 for verification).  Operations executed while a
:class:`GradTape` is active are recorded in execution order; a reverse
sweep over the record accumulates gradients, so every node is visited
after all of its consumers without an explicit topological sort.

Tensors are immutable values: an "update" always builds a new Tensor.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DTYPES = {"f32": np.float32, "f64": np.float64}

_active_tape: "GradTape | None" = None
_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf screening of every op output (slow; for tests)."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    """Immutable dense array, optionally tracked for gradients."""

    __slots__ = ("data", "grad_enabled")

    def __init__(self, data, dtype=None, grad_enabled: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.base is not None or arr.flags.writeable:
            arr = arr.copy()
        arr.flags.writeable = False
        self.data = arr
        self.grad_enabled = grad_enabled

    @classmethod
    def _wrap(cls, data: np.ndarray, grad_enabled: bool = False) -> "Tensor":
        """Adopt a freshly computed array without copying."""
        obj = object.__new__(cls)
        if data.base is not None:
            data = data.copy()
        data.flags.writeable = False
        obj.data = data
        obj.grad_enabled = grad_enabled
        return obj

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.grad_enabled})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __matmul__(self, other):
        return matmul(self, other)


class GradTape:
    """Ordered record of executed operations for one reverse pass."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable, tuple[bool, ...]]] = []

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise ContractError("nested GradTapes are not supported")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def __len__(self):
        return len(self._nodes)

    def gradients(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradient of a scalar loss w.r.t. every tracked tensor, by id."""
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, bwd, needs in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            input_grads = bwd(g, needs)
            for tensor, ig in zip(inputs, input_grads):
                if ig is None or not tensor.grad_enabled:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        return grads


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def constant(data, dtype=np.float32) -> Tensor:
    """Untracked tensor (no gradient ever flows into it)."""
    return Tensor(np.asarray(data, dtype=dtype))


def _check_dtypes(*ts: Tensor):
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise ContractError(f"mixed tensor dtypes {dt} vs {t.dtype}")


def _out(data: np.ndarray, inputs: tuple[Tensor, ...], bwd: Callable) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise ContractError("non-finite values produced by tensor op")
    tape = _active_tape
    tracked = tape is not None and any(t.grad_enabled for t in inputs)
    result = Tensor._wrap(np.asarray(data), grad_enabled=tracked)
    if tracked:
        needs = tuple(t.grad_enabled for t in inputs)
        tape._nodes.append((result, inputs, bwd, needs))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b)
    data = a.data + b.data

    def bwd(g, needs):
        ga = _unbroadcast(g, a.data.shape) if needs[0] else None
        gb = _unbroadcast(g, b.data.shape) if needs[1] else None
        return ga, gb

    return _out(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b)
    data = a.data - b.data

    def bwd(g, needs):
        ga = _unbroadcast(g, a.data.shape) if needs[0] else None
        gb = _unbroadcast(-g, b.data.shape) if needs[1] else None
        return ga, gb

    return _out(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b)
    data = a.data * b.data

    def bwd(g, needs):
        ga = _unbroadcast(g * b.data, a.data.shape) if needs[0] else None
        gb = _unbroadcast(g * a.data, b.data.shape) if needs[1] else None
        return ga, gb

    return _out(data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b)
    data = a.data / b.data

    def bwd(g, needs):
        ga = _unbroadcast(g / b.data, a.data.shape) if needs[0] else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape) if needs[1] else None
        return ga, gb

    return _out(data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    data = a.data * c

    def bwd(g, needs):
        return (g * c,)

    return _out(data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def bwd(g, needs):
        return (g * (a.data > 0),)

    return _out(data, (a,), bwd)


_GELU_C = 0.7978845608  # sqrt(2/pi), tanh approximation
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(_GELU_A)
    u = c * (x + k * x**3)
    t = np.tanh(u)
    data = 0.5 * x * (1.0 + t)

    def bwd(g, needs):
        du = c * (1.0 + 3.0 * k * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _out(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bwd(g, needs):
        return (g * data * (1.0 - data),)

    return _out(data, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bwd(g, needs):
        return (g * (1.0 - data * data),)

    return _out(data, (a,), bwd)


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def bwd(g, needs):
        return (g * np.sign(a.data),)

    return _out(data, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and structure ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bwd(g, needs):
        ga = g @ b.data.T if needs[0] else None
        gb = a.data.T @ g if needs[1] else None
        return ga, gb

    return _out(data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    data = a.data.T.copy()

    def bwd(g, needs):
        return (g.T,)

    return _out(data, (a,), bwd)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if axis == 0:
        data = a.data[start:stop].copy()
    elif axis == 1:
        data = a.data[:, start:stop].copy()
    else:
        raise DimensionError(f"narrow supports axis 0/1, got {axis}")

    def bwd(g, needs):
        full = np.zeros_like(a.data)
        full.flags.writeable = True
        if axis == 0:
            full[start:stop] = g
        else:
            full[:, start:stop] = g
        return (full,)

    return _out(data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    _check_dtypes(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g, needs):
        return tuple(np.split(g, offsets, axis=axis))

    return _out(data, tensors, bwd)


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]

    def bwd(g, needs):
        full = np.zeros_like(a.data)
        full.flags.writeable = True
        np.add.at(full, idx, g)
        return (full,)

    return _out(data, (a,), bwd)


# embedding lookup is row gathering over a parameter table
embedding = gather_rows


def overwrite_rows(base: Tensor, rows: Tensor) -> Tensor:
    """Replace base[0:len(rows)] with ``rows``; no gradient reaches the
    replaced region of ``base`` (replacement, not addition)."""
    n = rows.data.shape[0]
    if base.data.shape[0] < n:
        raise ContractError(
            f"cannot overwrite {n} rows of a {base.data.shape[0]}-row tensor"
        )
    if n == 0:
        return base
    return concat([rows, narrow(base, 0, n, base.data.shape[0])], axis=0)


def max_rows(a: Tensor) -> Tensor:
    """Row-wise maximum of a 2-D tensor (subgradient to first argmax)."""
    if a.data.ndim != 2:
        raise DimensionError(f"max_rows expects 2-D input, got {a.shape}")
    idx = np.argmax(a.data, axis=1)
    data = a.data[np.arange(a.data.shape[0]), idx]

    def bwd(g, needs):
        full = np.zeros_like(a.data)
        full.flags.writeable = True
        full[np.arange(a.data.shape[0]), idx] = g
        return (full,)

    return _out(data, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum()

    def bwd(g, needs):
        return (np.full_like(a.data, g),)

    return _out(np.asarray(data, dtype=a.dtype), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    data = a.data.mean()

    def bwd(g, needs):
        return (np.full_like(a.data, g / n),)

    return _out(np.asarray(data, dtype=a.dtype), (a,), bwd)


def mean_scalars(losses: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of scalar tensors (batch loss aggregation)."""
    losses = list(losses)
    if not losses:
        raise ContractError("mean_scalars of empty sequence")
    total = losses[0]
    for t in losses[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(losses))


# ---------------------------------------------------------------------------
# fused neural-network kernels

def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    x = a.data
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects 2-D input, got {a.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def bwd(g, needs):
        dot = (g * data).sum(axis=1, keepdims=True)
        return (data * (g - dot),)

    return _out(data, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    _check_dtypes(a, gain, bias)
    x = a.data
    d = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x - mu) * inv
    data = xhat * gain.data + bias.data

    def bwd(g, needs):
        dgain = (g * xhat).reshape(-1, d).sum(axis=0) if needs[1] else None
        dbias = g.reshape(-1, d).sum(axis=0) if needs[2] else None
        dx = None
        if needs[0]:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dx = (dxhat - m1 - xhat * m2) * inv
        return dx, dgain, dbias

    return _out(data, (a, gain, bias), bwd)


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    x = a.data
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, x.dtype.type(eps))
    data = x / norm

    def bwd(g, needs):
        dot = (g * data).sum(axis=1, keepdims=True)
        return ((g - data * dot) / norm,)

    return _out(data, (a,), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a caller-supplied stream; identity at rate 0."""
    if rate <= 0.0:
        return a
    if not 0.0 < rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    mask = keep / a.dtype.type(1.0 - rate)

    def bwd(g, needs):
        return (g * mask,)

    return _out(a.data * mask, (a,), bwd)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer target ids per row."""
    t = np.asarray(targets, dtype=np.int64)
    x = logits.data
    if x.ndim != 2 or t.shape != (x.shape[0],):
        raise DimensionError(
            f"cross entropy expects [n,v] logits and n targets, got {x.shape} and {t.shape}"
        )
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    n = x.shape[0]
    data = -logp[np.arange(n), t].mean()

    def bwd(g, needs):
        p = np.exp(logp)
        p[np.arange(n), t] -= 1.0
        return (g * p / n,)

    return _out(np.asarray(data, dtype=x.dtype), (logits,), bwd)
