"""Generator and self-supervised discriminator networks.

The generator is the ResNet-style translator used by CycleGAN. The
discriminator is a patch discriminator whose encoder also feeds two small
reconstruction decoders: one rebuilds the whole (downsampled) input from the
coarsest feature map, the other rebuilds one quadrant of the input from the
matching quadrant of a finer feature map.
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError

SUPPORTED_SIZES = (64, 128, 256)
DECODER_SIZE = 64
INIT_STD = 0.02

Quadrant = Literal["top-left", "top-right", "bottom-left", "bottom-right"]
QUADRANTS: tuple[Quadrant, ...] = ("top-left", "top-right", "bottom-left", "bottom-right")


def check_image_batch(x: torch.Tensor, *, multiple: int = 1, min_size: int = 1) -> None:
    """Raise DimensionError unless ``x`` is a (b, 3, s, s) batch with s % multiple == 0."""
    if x.dim() != 4:
        raise DimensionError(f"expected a rank-4 image batch, got shape {tuple(x.shape)}")
    b, c, h, w = x.shape
    if c != 3:
        raise DimensionError(f"expected 3 channels, got {c} (shape {tuple(x.shape)})")
    if h != w:
        raise DimensionError(f"expected square images, got {h}x{w}")
    if h % multiple:
        raise DimensionError(f"image size {h} is not divisible by {multiple}")
    if h < min_size:
        raise DimensionError(f"image size {h} is smaller than the minimum {min_size}")


def instance_norm(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    # per-sample, per-channel statistics; no affine, no running stats
    return F.instance_norm(x, eps=eps)


class InstanceNorm(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return instance_norm(x)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            InstanceNorm(),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            InstanceNorm(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class Generator(nn.Module):
    """ResNet translator: stem, two downsamplings, residual trunk, two upsamplings, RGB head."""

    def __init__(self, n_res_blocks: int = 9, width: int = 64):
        super().__init__()
        self.n_res_blocks = n_res_blocks
        self.width = width
        w = width
        self.stem = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(3, w, 7), InstanceNorm(), nn.ReLU(inplace=True)
        )
        self.down = nn.Sequential(
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), InstanceNorm(), nn.ReLU(inplace=True),
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1), InstanceNorm(), nn.ReLU(inplace=True),
        )
        self.trunk = nn.Sequential(*[ResidualBlock(4 * w) for _ in range(n_res_blocks)])
        self.up = nn.Sequential(
            nn.ConvTranspose2d(4 * w, 2 * w, 3, stride=2, padding=1, output_padding=1),
            InstanceNorm(), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * w, w, 3, stride=2, padding=1, output_padding=1),
            InstanceNorm(), nn.ReLU(inplace=True),
        )
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(w, 3, 7), nn.Tanh())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # below 8px the trunk would be 1x1 and instance norm undefined
        check_image_batch(x, multiple=4, min_size=8)
        return self.head(self.up(self.trunk(self.down(self.stem(x)))))


def _encoder_widths(image_size: int, width: int) -> list[int]:
    # stride-2 stages down to 8x8, and at least down to size/16
    n_stages = max(4, int(math.log2(image_size // 8)))
    return [min(width * 2**i, 8 * width) for i in range(n_stages)]


class Decoder(nn.Module):
    """Four convolutions, three of them preceded by 2x nearest upsampling: 8x8 -> 64x64 RGB."""

    def __init__(self, in_channels: int, width: int = 64):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(in_channels, 2 * width, 3, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * width, width, 3, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(width, width // 2, 3, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width // 2, 3, 3, padding=1), nn.Tanh(),
        )

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.dim() != 4 or f.shape[-2:] != (8, 8):
            raise DimensionError(f"decoder expects an 8x8 feature map, got shape {tuple(f.shape)}")
        return self.layers(f)


class SslDiscriminator(nn.Module):
    """Patch discriminator whose encoder doubles as the backbone of two reconstruction decoders.

    Encoder stages are 4x4 stride-2 convolutions with zero padding and LeakyReLU(0.2);
    every stage but the first is instance-normalized. The stage with 16x16 output is
    tapped as ``f_part``, the 8x8 one as ``f_full``; the logit head is a 1x1 convolution
    on the size/16 stage.
    """

    def __init__(self, image_size: int = 128, width: int = 64):
        super().__init__()
        if image_size not in SUPPORTED_SIZES:
            raise ConfigError(
                f"unsupported image size {image_size}; allowed sizes are {SUPPORTED_SIZES}"
            )
        self.image_size = image_size
        widths = _encoder_widths(image_size, width)
        stages = []
        c_in = 3
        for i, c_out in enumerate(widths):
            layers: list[nn.Module] = [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1)]
            if i > 0:
                layers.append(InstanceNorm())
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            stages.append(nn.Sequential(*layers))
            c_in = c_out
        self.stages = nn.ModuleList(stages)
        # output sizes of stage i is image_size / 2**(i+1)
        sizes = [image_size // 2 ** (i + 1) for i in range(len(widths))]
        self._part_idx = sizes.index(16)
        self._full_idx = sizes.index(8)
        self._logit_idx = sizes.index(image_size // 16)
        self.part_channels = widths[self._part_idx]
        self.full_channels = widths[self._full_idx]
        self.head = nn.Conv2d(widths[self._logit_idx], 1, 1)
        self.dec_full = Decoder(self.full_channels, width)
        self.dec_part = Decoder(self.part_channels, width)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Return ``(logits, f_part, f_full)``."""
        check_image_batch(x, multiple=16, min_size=64)
        if x.shape[-1] != self.image_size:
            raise DimensionError(
                f"discriminator built for {self.image_size}px inputs, got {x.shape[-1]}px"
            )
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        logits = self.head(feats[self._logit_idx])
        return logits, feats[self._part_idx], feats[self._full_idx]

    def decode_full(self, f_full: torch.Tensor) -> torch.Tensor:
        return self.dec_full(f_full)

    def decode_part(self, f_part: torch.Tensor, quadrant: Quadrant) -> torch.Tensor:
        return self.dec_part(crop_quadrant(f_part, quadrant, expected_size=16))


def crop_quadrant(t: torch.Tensor, quadrant: Quadrant, expected_size: int | None = None) -> torch.Tensor:
    """Half-size crop of the last two axes at the named quadrant."""
    h, w = t.shape[-2:]
    if expected_size is not None and (h, w) != (expected_size, expected_size):
        raise DimensionError(
            f"quadrant crop expects a {expected_size}x{expected_size} map, got {h}x{w}"
        )
    if quadrant not in QUADRANTS:
        raise ConfigError(f"unknown quadrant {quadrant!r}; expected one of {QUADRANTS}")
    rows = slice(0, h // 2) if quadrant.startswith("top") else slice(h // 2, h)
    cols = slice(0, w // 2) if quadrant.endswith("left") else slice(w // 2, w)
    return t[..., rows, cols]


class TranslationModel(nn.Module):
    """Both generators and both discriminators.

    ``gen_xy`` maps domain X (A) to Y (B), ``gen_yx`` maps back; ``disc_x`` judges
    X images and ``disc_y`` judges Y images.
    """

    def __init__(
        self,
        image_size: int = 64,
        n_res_blocks: int = 9,
        gen_width: int = 64,
        disc_width: int = 64,
    ):
        super().__init__()
        if image_size not in SUPPORTED_SIZES:
            raise ConfigError(
                f"unsupported image size {image_size}; allowed sizes are {SUPPORTED_SIZES}"
            )
        self.arch = dict(
            image_size=image_size, n_res_blocks=n_res_blocks, gen_width=gen_width, disc_width=disc_width
        )
        self.gen_xy = Generator(n_res_blocks, gen_width)
        self.gen_yx = Generator(n_res_blocks, gen_width)
        self.disc_x = SslDiscriminator(image_size, disc_width)
        self.disc_y = SslDiscriminator(image_size, disc_width)

    def generator_parameters(self):
        yield from self.gen_xy.parameters()
        yield from self.gen_yx.parameters()

    def discriminator_parameters(self):
        yield from self.disc_x.parameters()
        yield from self.disc_y.parameters()


def _seed_for(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed % 2**64, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@torch.no_grad()
def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Normal(0, 0.02) for every convolution weight, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            m.weight.copy_(
                torch.randn(m.weight.shape, generator=generator, dtype=m.weight.dtype) * INIT_STD
            )
            if m.bias is not None:
                m.bias.zero_()


def init_model(
    image_size: int,
    seed: int,
    *,
    n_res_blocks: int = 9,
    gen_width: int = 64,
    disc_width: int = 64,
) -> TranslationModel:
    """Build a TranslationModel with weights fully determined by ``seed``.

    Each of the four networks draws from its own stream derived from ``seed``.
    """
    model = TranslationModel(image_size, n_res_blocks, gen_width, disc_width)
    for i, net in enumerate((model.gen_xy, model.gen_yx, model.disc_x, model.disc_y)):
        g = torch.Generator().manual_seed(_seed_for(seed, i))
        init_weights(net, g)
    return model


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
