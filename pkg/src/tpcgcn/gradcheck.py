"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from tpcgcn.autodiff import Tensor
from tpcgcn.rng import SeededRng


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    max_coords_per_param: int | None = None,
    rng: SeededRng | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the loss from the current parameter values and
    be deterministic (dropout disabled or re-seeded identically per call).
    For large parameters a random subset of coordinates can be sampled with
    ``max_coords_per_param``. The error for one coordinate is
    ``|a - n| / max(|a|, |n|, 1e-4)``; the floor keeps finite-difference
    noise on near-zero gradients from dominating.
    """

    def loss_value() -> float:
        out = loss_fn()
        v = float(out.value[0, 0])
        if not np.isfinite(v):
            raise NumericError(f"loss is not finite: {v}")
        return v

    for p in params:
        p.grad = np.zeros_like(p.value)
    loss = loss_fn()
    if not np.isfinite(loss.value[0, 0]):
        raise NumericError(f"loss is not finite: {loss.value[0, 0]}")
    loss.backward()
    analytic = [np.array(p.grad) for p in params]

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat_value = p.value.reshape(-1)
        flat_grad = grads.reshape(-1)
        coords = np.arange(flat_value.size)
        if max_coords_per_param is not None and flat_value.size > max_coords_per_param:
            pick = rng if rng is not None else SeededRng(0)
            u = pick.uniform(max_coords_per_param)
            coords = np.unique((u * flat_value.size).astype(np.int64))
        for c in coords:
            original = flat_value[c]
            flat_value[c] = original + epsilon
            f_plus = loss_value()
            flat_value[c] = original - epsilon
            f_minus = loss_value()
            flat_value[c] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = flat_grad[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            if err > worst:
                worst = err
    return worst
