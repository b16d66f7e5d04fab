"""Load-time augmentation and differentiable augmentation (DiffAug) for discriminator inputs."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError

DIFFAUG_ORDER = ("color", "translation", "cutout")


def hflip(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mirror the images selected by boolean ``mask`` (shape (b,)) left-right."""
    return torch.where(mask.view(-1, 1, 1, 1), x.flip(-1), x)


def standard_augment(x: torch.Tensor, generator: torch.Generator, size: int | None = None) -> torch.Tensor:
    """Upscale to 1.12x, random-crop back to ``size``, flip each image with probability 0.5."""
    b = x.shape[0]
    size = size or x.shape[-1]
    big = int(round(size * 1.12))
    up = F.interpolate(x, size=(big, big), mode="bilinear", align_corners=False)
    offs = torch.randint(0, big - size + 1, (b, 2), generator=generator)
    crops = torch.stack(
        [up[i, :, oy : oy + size, ox : ox + size] for i, (oy, ox) in enumerate(offs.tolist())]
    )
    flip = torch.rand(b, generator=generator) < 0.5
    return hflip(crops, flip)


@dataclass(frozen=True)
class DiffAugPolicy:
    transforms: tuple[str, ...] = DIFFAUG_ORDER
    stream: int = 0

    @classmethod
    def parse(cls, text: str | None, stream: int = 0) -> "DiffAugPolicy":
        """Parse ``color,translation,cutout``; empty, ``off`` or ``none`` means no augmentation."""
        if text is None or text.strip().lower() in ("", "off", "none", "false"):
            return cls((), stream)
        tokens = [t.strip() for t in text.split(",") if t.strip()]
        unknown = [t for t in tokens if t not in DIFFAUG_ORDER]
        if unknown:
            raise ConfigError(f"unknown DiffAug policy token(s) {unknown}; allowed: {DIFFAUG_ORDER}")
        return cls(tuple(t for t in DIFFAUG_ORDER if t in tokens), stream)

    def __bool__(self) -> bool:
        return bool(self.transforms)

    def __str__(self) -> str:
        return ",".join(self.transforms) or "off"


@dataclass
class DiffAugParams:
    """Per-image random draws for one application of a policy."""

    brightness: torch.Tensor | None = None  # (b,) in [-0.5, 0.5)
    saturation: torch.Tensor | None = None  # (b,) in [0, 2)
    contrast: torch.Tensor | None = None  # (b,) in [0.5, 1.5)
    shift: torch.Tensor | None = None  # (b, 2) integer (dx, dy)
    cutout: torch.Tensor | None = None  # (b, 2) integer top-left corner (row, col)


def sample_diffaug_params(
    policy: DiffAugPolicy, batch: int, size: int, generator: torch.Generator
) -> DiffAugParams:
    p = DiffAugParams()
    if "color" in policy.transforms:
        p.brightness = torch.rand(batch, generator=generator) - 0.5
        p.saturation = torch.rand(batch, generator=generator) * 2
        p.contrast = torch.rand(batch, generator=generator) + 0.5
    if "translation" in policy.transforms:
        max_shift = size // 8
        p.shift = torch.randint(-max_shift, max_shift + 1, (batch, 2), generator=generator)
    if "cutout" in policy.transforms:
        half = size // 2
        p.cutout = torch.randint(0, size - half + 1, (batch, 2), generator=generator)
    return p


def adjust_color(x: torch.Tensor, brightness, saturation, contrast) -> torch.Tensor:
    v = lambda t: t.to(x.dtype).view(-1, 1, 1, 1)  # noqa: E731
    x = x + v(brightness)
    mean_c = x.mean(dim=1, keepdim=True)
    x = (x - mean_c) * v(saturation) + mean_c
    mean_all = x.mean(dim=(1, 2, 3), keepdim=True)
    return (x - mean_all) * v(contrast) + mean_all


def translate(x: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Shift image i by ``shift[i] = (dx, dy)`` pixels with zero fill.

    Output pixel (r, c) takes input pixel (r - dy, c - dx).
    """
    b, _, h, w = x.shape
    rows = torch.arange(h).view(1, h, 1) - shift[:, 1].view(b, 1, 1)
    cols = torch.arange(w).view(1, 1, w) - shift[:, 0].view(b, 1, 1)
    valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    # clamped gather, out-of-frame positions masked to zero
    flat = rows.clamp(0, h - 1) * w + cols.clamp(0, w - 1)
    gathered = x.flatten(2).gather(2, flat.flatten(1).unsqueeze(1).expand(b, x.shape[1], h * w))
    return gathered.view_as(x) * valid.unsqueeze(1).to(x.dtype)


def cutout_mask(corner: torch.Tensor, size: int, dtype=torch.float32) -> torch.Tensor:
    """(b, 1, size, size) mask with one zeroed (size/2)^2 square per image."""
    b = corner.shape[0]
    half = size // 2
    r = torch.arange(size).view(1, size, 1)
    c = torch.arange(size).view(1, 1, size)
    r0 = corner[:, 0].view(b, 1, 1)
    c0 = corner[:, 1].view(b, 1, 1)
    inside = (r >= r0) & (r < r0 + half) & (c >= c0) & (c < c0 + half)
    return (~inside).to(dtype).unsqueeze(1)


def apply_diffaug(x: torch.Tensor, params: DiffAugParams) -> torch.Tensor:
    if params.brightness is not None:
        x = adjust_color(x, params.brightness, params.saturation, params.contrast)
    if params.shift is not None:
        x = translate(x, params.shift)
    if params.cutout is not None:
        x = x * cutout_mask(params.cutout, x.shape[-1], x.dtype)
    return x


def diffaug(x: torch.Tensor, policy: DiffAugPolicy, generator: torch.Generator) -> torch.Tensor:
    if not policy:
        return x
    return apply_diffaug(x, sample_diffaug_params(policy, x.shape[0], x.shape[-1], generator))
