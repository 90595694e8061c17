"""Central finite-difference verification of backward passes.

The checker re-evaluates a loss closure with each parameter coordinate
nudged by +/-h and compares the secant slope against the recorded analytic
gradient. Callers are expected to build the computation in float64 (shadow
mode) so the comparison is limited by truncation error, not rounding.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import Tensor


def finite_difference_check(
    loss_fn,
    params: list[Tensor],
    h: float = 1e-3,
    max_coords_per_param: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Return the worst relative error between analytic and numeric gradients.

    ``loss_fn`` must rebuild the forward pass from the current ``params``
    data buffers on every call. Relative error uses a 1e-3 denominator floor
    so near-zero gradients are compared absolutely.

    Each coordinate is scored against the central, left and right secants and
    the best match counts. At smooth points all three agree to O(h), so this
    loses no detection power; at relu kinks (where the central secant
    straddles the corner) the analytic gradient is a one-sided derivative and
    matches the secant from its own side.
    """
    for p in params:
        p.grad = np.zeros_like(p.data)
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    f_zero = loss.item()

    def rel_err(ana: float, numeric: float) -> float:
        return abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-3)

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat = p.data.reshape(-1)
        flat_grad = grads.reshape(-1)
        coords = list(range(flat.size))
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            picker = rng or Rng(0)
            picker.shuffle(coords)
            coords = sorted(coords[:max_coords_per_param])
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn().item()
            flat[i] = orig - h
            f_minus = loss_fn().item()
            flat[i] = orig
            ana = float(flat_grad[i])
            central = (f_plus - f_minus) / (2.0 * h)
            right = (f_plus - f_zero) / h
            left = (f_zero - f_minus) / h
            err = min(rel_err(ana, central), rel_err(ana, right), rel_err(ana, left))
            worst = max(worst, err)
    return worst
