"""Training objectives: least-squares adversarial terms, SSL reconstruction, cycle and identity.

Expectations are realized as plain means over batch and spatial dimensions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .errors import DimensionError, NumericError


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_id: float = 0.5
    ssl_weight: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cyc", "lambda_id", "ssl_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


@dataclass
class LossBreakdown:
    adv_g: float
    adv_f: float
    adv_dx: float
    adv_dy: float
    ssl_dx: float
    ssl_dy: float
    cyc: float
    id: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _nonempty(t: torch.Tensor, what: str) -> None:
    if t.numel() == 0:
        raise ValueError(f"{what} is empty")


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape {tuple(a.shape)} does not match {tuple(b.shape)}")


def mae(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b, "mean absolute error")
    return (a - b).abs().mean()


def lsgan_generator_loss(d_fake_logits: torch.Tensor) -> torch.Tensor:
    """mean((D(G(x)) - 1)^2)."""
    _nonempty(d_fake_logits, "discriminator logit map")
    return (d_fake_logits - 1).pow(2).mean()


def lsgan_discriminator_loss(d_real_logits: torch.Tensor, d_fake_logits: torch.Tensor) -> torch.Tensor:
    """mean((D(y) - 1)^2) + mean(D(G(x))^2), without the SSL term."""
    _nonempty(d_real_logits, "real logit map")
    _nonempty(d_fake_logits, "fake logit map")
    return (d_real_logits - 1).pow(2).mean() + d_fake_logits.pow(2).mean()


def ssl_reconstruction_loss(
    decoded_full: torch.Tensor,
    target_full: torch.Tensor,
    decoded_part: torch.Tensor,
    target_part: torch.Tensor,
) -> torch.Tensor:
    """L1 reconstruction of the whole image plus L1 reconstruction of one quadrant."""
    return mae(decoded_full, target_full) + mae(decoded_part, target_part)


def cycle_loss(x: torch.Tensor, x_cycled: torch.Tensor, y: torch.Tensor, y_cycled: torch.Tensor) -> torch.Tensor:
    return mae(x_cycled, x) + mae(y_cycled, y)


def identity_loss(x: torch.Tensor, f_of_x: torch.Tensor, y: torch.Tensor, g_of_y: torch.Tensor) -> torch.Tensor:
    return mae(f_of_x, x) + mae(g_of_y, y)


def _scalar(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def total_loss(
    *,
    adv_g,
    adv_f,
    adv_dx,
    adv_dy,
    cyc,
    id,
    ssl_dx=0.0,
    ssl_dy=0.0,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Combine component losses into a LossBreakdown.

    The discriminator terms carry their (weighted) SSL losses, so
    ``total = adv_g + adv_f + adv_dx + adv_dy + w_ssl*(ssl_dx + ssl_dy)
    + lambda_cyc*cyc + lambda_id*id``.
    """
    parts = dict(
        adv_g=_scalar(adv_g), adv_f=_scalar(adv_f), adv_dx=_scalar(adv_dx), adv_dy=_scalar(adv_dy),
        ssl_dx=_scalar(ssl_dx), ssl_dy=_scalar(ssl_dy), cyc=_scalar(cyc), id=_scalar(id),
    )
    for name, value in parts.items():
        if math.isnan(value):
            raise NumericError(f"loss component {name} is NaN")
    adv = (
        parts["adv_g"] + parts["adv_f"] + parts["adv_dx"] + parts["adv_dy"]
        + weights.ssl_weight * (parts["ssl_dx"] + parts["ssl_dy"])
    )
    total = adv + weights.lambda_cyc * parts["cyc"] + weights.lambda_id * parts["id"]
    return LossBreakdown(**parts, total=total)
