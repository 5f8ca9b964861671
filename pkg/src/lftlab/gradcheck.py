"""Finite-difference verification of taped gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .params import ParamStore
from .tensor import GradTape, Tensor
from .rng import rng_for


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    tol: float
    checked_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def backward(loss: Tensor, tape: GradTape, store: ParamStore) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every trainable parameter.

    Trainable parameters not reachable from the loss get zeros.
    """
    by_id = tape.gradients(loss)
    grads: dict[str, np.ndarray] = {}
    for name in store.trainable_names():
        t = store.get(name)
        g = by_id.get(id(t))
        grads[name] = np.zeros_like(t.data) if g is None else g
    return grads


def grad_check(f, store: ParamStore, h: float = 1e-5, tol: float = 1e-5,
               max_coords_per_param: int = 5, seed: int = 0,
               noise_floor: float = 1e-9) -> GradCheckReport:
    """Compare taped gradients of ``f(store)`` against central differences.

    ``f`` must be a deterministic map from the store to a scalar Tensor
    with all stochastic elements disabled, evaluated at 64-bit precision.
    A random subsample of coordinates per trainable parameter is
    perturbed; relative error uses max(|analytic|, |numeric|, 1e-12) as
    the denominator.  Central differences carry cancellation noise of
    about eps * |f| / h (~1e-11 here), so coordinates where the
    analytic/numeric gap is below ``noise_floor`` are numerically
    unmeasurable and count as clean.  Failure is reported, never raised.
    """
    if store.precision != "f64":
        raise ContractError("grad_check requires a 64-bit parameter store")

    with GradTape() as tape:
        loss = f(store)
        if not isinstance(loss, Tensor):
            raise ContractError("grad_check objective must return a Tensor")
        analytic = backward(loss, tape, store)

    def evaluate() -> float:
        out = f(store)
        return out.item()

    rng = rng_for(seed, "gradcheck")
    worst = 0.0
    worst_param = ""
    checked = 0
    for name in store.trainable_names():
        base = store.value(name)
        flat = base.reshape(-1)
        n = flat.size
        k = min(n, max_coords_per_param)
        coords = rng.choice(n, size=k, replace=False) if n > k else np.arange(n)
        for c in coords:
            perturbed = flat.copy()
            perturbed[c] = flat[c] + h
            store.set_value(name, perturbed.reshape(base.shape))
            up = evaluate()
            perturbed[c] = flat[c] - h
            store.set_value(name, perturbed.reshape(base.shape))
            down = evaluate()
            store.set_value(name, base)
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[c])
            gap = abs(a - numeric)
            rel = 0.0 if gap <= noise_floor else gap / max(abs(a), abs(numeric), 1e-12)
            checked += 1
            if rel > worst:
                worst = rel
                worst_param = name
    return GradCheckReport(max_rel_err=worst, worst_param=worst_param,
                           tol=tol, checked_coords=checked)
