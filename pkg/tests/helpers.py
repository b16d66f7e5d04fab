"""Finite-difference gradient checking shared by the test modules."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch

# relative error floor: coordinates whose true gradient is exactly zero (e.g. biases
# feeding an instance norm) would otherwise divide rounding noise by zero
REL_FLOOR = 1e-7


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    tensors: Sequence[torch.Tensor],
    n_coords: int,
    seed: int = 0,
    h: float = 1e-5,
) -> list[tuple[float, float, float]]:
    """Compare autograd against central differences at ``n_coords`` random coordinates.

    ``tensors`` must be float64 leaves with ``requires_grad``. Coordinates are drawn
    uniformly over the concatenation of all tensors. Returns (analytic, numeric, rel_err).
    """
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(tensors), allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]
    sizes = np.array([t.numel() for t in tensors])
    rng = np.random.default_rng(seed)
    flat_picks = rng.choice(sizes.sum(), size=min(n_coords, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    with torch.no_grad():
        for flat in flat_picks:
            k = int(np.searchsorted(bounds, flat, side="right"))
            idx = int(flat - (bounds[k - 1] if k else 0))
            view = tensors[k].view(-1)
            orig = view[idx].item()
            view[idx] = orig + h
            up = loss_fn().item()
            view[idx] = orig - h
            down = loss_fn().item()
            view[idx] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[k].reshape(-1)[idx].item()
            out.append((analytic, numeric, relative_error(analytic, numeric)))
    return out


def worst(results) -> float:
    return max(r[2] for r in results)
