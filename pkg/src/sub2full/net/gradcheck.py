"""Central-difference verification of the analytic gradients."""
from __future__ import annotations

import numpy as np

from ..phantom import stream
from .unet import DenoiserParams, l2_loss, net_backward, net_forward


def _loss(params, x, target, mask):
    out, _ = net_forward(params, x, keep_cache=False)
    return l2_loss(out, target, mask)[0]


def grad_check(
    params: DenoiserParams,
    batch: tuple[np.ndarray, np.ndarray] | tuple[np.ndarray, np.ndarray, np.ndarray],
    eps: float = 1e-5,
    n_samples: int | None = 600,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every scalar parameter when ``n_samples`` is None or exceeds the
    parameter count, otherwise a seeded subsample. Relative error uses
    max(|a|, |n|) clamped below at 1e-12 as the denominator.
    """
    x, target, *rest = batch
    mask = rest[0] if rest else None
    out, cache = net_forward(params, x)
    grads = net_backward(cache, l2_loss(out, target, mask)[1])
    index = [(name, i) for name, v in params.items() for i in range(v.size)]
    if n_samples is not None and n_samples < len(index):
        pick = stream(seed, 0x6C).choice(len(index), size=n_samples, replace=False)
        index = [index[i] for i in np.sort(pick)]
    worst = 0.0
    for name, i in index:
        flat = params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        up = _loss(params, x, target, mask)
        flat[i] = orig - eps
        down = _loss(params, x, target, mask)
        flat[i] = orig
        numeric = (up - down) / (2 * eps)
        analytic = float(grads[name].reshape(-1)[i])
        denom = max(abs(numeric), abs(analytic), 1e-12)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
