"""FID and KID on features from a seeded, pluggable extractor.

The default extractor is a fixed random convolutional network, not Inception. Scores are
meaningful as relative comparisons under one extractor and seed only; they are not
comparable with Inception-based FID/KID values reported elsewhere.
"""

from __future__ import annotations

import datetime as _dt
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from .data import list_pngs, load_folder
from .errors import ConfigError, DimensionError

EXTRACTOR_KINDS = ("random-conv", "flatten-downsample", "external-file")
DEFAULT_EXTRACTOR_SEED = 2021


class RandomConvFeatures(nn.Module):
    """Four stride-2 convolutions (32/64/128/256), LeakyReLU, global average pool -> 256-d."""

    def __init__(self, seed: int = DEFAULT_EXTRACTOR_SEED):
        super().__init__()
        chans = [3, 32, 64, 128, 256]
        layers = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            layers += [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.net = nn.Sequential(*layers)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for m in self.net:
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    m.weight.copy_(torch.randn(m.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
                    m.bias.copy_(torch.randn(m.bias.shape, generator=g) * 0.1)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).mean(dim=(2, 3))


class FlattenDownsample(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (8, 8):
            x = F.interpolate(x, size=(8, 8), mode="bilinear", align_corners=False, antialias=True)
        return x.flatten(1)


@dataclass(frozen=True)
class FeatureExtractor:
    kind: str = "random-conv"
    seed: int = DEFAULT_EXTRACTOR_SEED
    path: str | None = None

    def __post_init__(self):
        if self.kind not in EXTRACTOR_KINDS:
            raise ConfigError(f"unknown extractor {self.kind!r}; expected one of {EXTRACTOR_KINDS}")
        if self.kind == "external-file" and not self.path:
            raise ConfigError("the external-file extractor needs a TorchScript file path")

    def build(self) -> nn.Module:
        if self.kind == "random-conv":
            return RandomConvFeatures(self.seed)
        if self.kind == "flatten-downsample":
            return FlattenDownsample()
        module = torch.jit.load(self.path, map_location="cpu")
        module.eval()
        return module

    @property
    def dim(self) -> int | None:
        return {"random-conv": 256, "flatten-downsample": 192}.get(self.kind)


@torch.no_grad()
def extract_features(
    extractor: FeatureExtractor, images: torch.Tensor | Iterable[torch.Tensor], batch_size: int = 64
) -> np.ndarray:
    """(n, d) float64 feature matrix, rows in input order."""
    net = extractor.build()
    if isinstance(images, torch.Tensor):
        chunks = [images[i : i + batch_size] for i in range(0, len(images), batch_size)]
    else:
        chunks = list(images)
    feats = [net(c.to(torch.float32)).to(torch.float64) for c in chunks if len(c)]
    out = torch.cat(feats).numpy() if feats else np.zeros((0, 0))
    if out.shape[0] < 2:
        raise ValueError(f"need at least 2 images to extract statistics, got {out.shape[0]}")
    return out


@dataclass
class DistributionStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "DistributionStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError(f"need an (n >= 2, d) feature matrix, got shape {feats.shape}")
        return cls(feats.mean(axis=0), np.cov(feats, rowvar=False, ddof=1).reshape(feats.shape[1], -1), feats.shape[0])


def _check_symmetric(c: np.ndarray, what: str, tol: float = 1e-8) -> None:
    scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    if np.abs(c - c.T).max(initial=0.0) > tol * scale:
        raise ValueError(f"{what} covariance is not symmetric")


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(c)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _trace_sqrt_product(c1: np.ndarray, c2: np.ndarray) -> float:
    """Tr((c1^1/2 c2 c1^1/2)^1/2) via symmetric eigendecompositions."""
    s1 = _psd_sqrt(c1)
    m = s1 @ c2 @ s1
    m = (m + m.T) / 2
    w = np.linalg.eigvalsh(m)
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def frechet_distance(a: DistributionStats, b: DistributionStats, eps: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a) + Tr(S_b) - 2 Tr((S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0."""
    mu1, mu2 = np.atleast_1d(a.mean), np.atleast_1d(b.mean)
    c1, c2 = np.atleast_2d(a.cov), np.atleast_2d(b.cov)
    if mu1.shape != mu2.shape or c1.shape != c2.shape or c1.shape != (mu1.size, mu1.size):
        raise DimensionError(f"statistics dimensions differ: {mu1.shape}/{c1.shape} vs {mu2.shape}/{c2.shape}")
    _check_symmetric(c1, "first")
    _check_symmetric(c2, "second")
    try:
        tr_sqrt = _trace_sqrt_product(c1, c2)
    except np.linalg.LinAlgError:
        jitter = eps * np.eye(c1.shape[0])
        tr_sqrt = _trace_sqrt_product(c1 + jitter, c2 + jitter)
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased MMD^2 with the cubic polynomial kernel."""
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD^2 needs at least 2 samples per set")
    kxx, kyy, kxy = polynomial_kernel(x, x), polynomial_kernel(y, y), polynomial_kernel(x, y)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def kid(
    features_real: np.ndarray,
    features_fake: np.ndarray,
    subset_size: int = 100,
    n_subsets: int = 10,
    seed: int = DEFAULT_EXTRACTOR_SEED,
) -> tuple[float, float]:
    """Mean and standard deviation of unbiased MMD^2 over random subsets."""
    real = np.asarray(features_real, dtype=np.float64)
    fake = np.asarray(features_fake, dtype=np.float64)
    if len(real) < 2 or len(fake) < 2:
        raise ValueError("KID needs at least 2 samples in each feature set")
    if real.shape[1] != fake.shape[1]:
        raise DimensionError(f"feature dimensions differ: {real.shape[1]} vs {fake.shape[1]}")
    m = min(subset_size, len(real), len(fake))
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(n_subsets):
        ri = rng.choice(len(real), m, replace=False)
        fi = rng.choice(len(fake), m, replace=False)
        values.append(mmd2_unbiased(real[ri], fake[fi]))
    values = np.asarray(values)
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std


@dataclass
class MetricReport:
    fid: float
    kid_mean: float
    kid_std: float
    kid_mean_x100: float
    kid_values_scaled_x100: bool
    n_real: int
    n_fake: int
    extractor: str
    extractor_seed: int
    kid_subset_size: int
    kid_n_subsets: int
    kid_seed: int
    timestamp: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def compare_features(
    real: np.ndarray,
    fake: np.ndarray,
    extractor: FeatureExtractor,
    subset_size: int = 100,
    n_subsets: int = 10,
    seed: int = DEFAULT_EXTRACTOR_SEED,
) -> MetricReport:
    fid = frechet_distance(DistributionStats.from_features(real), DistributionStats.from_features(fake))
    kid_mean, kid_std = kid(real, fake, subset_size, n_subsets, seed)
    return MetricReport(
        fid=fid, kid_mean=kid_mean, kid_std=kid_std, kid_mean_x100=100.0 * kid_mean,
        kid_values_scaled_x100=False, n_real=len(real), n_fake=len(fake),
        extractor=extractor.kind, extractor_seed=extractor.seed,
        kid_subset_size=subset_size, kid_n_subsets=n_subsets, kid_seed=seed,
    )


def compare_images(
    real: torch.Tensor, fake: torch.Tensor, extractor: FeatureExtractor | None = None, **kid_options
) -> MetricReport:
    extractor = extractor or FeatureExtractor()
    return compare_features(
        extract_features(extractor, real), extract_features(extractor, fake), extractor, **kid_options
    )


def _load_images(folder: str | os.PathLike, size: int | None) -> torch.Tensor:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"image directory not found: {folder}")
    paths = list_pngs(folder)
    if len(paths) < 2:
        raise FileNotFoundError(f"{folder} holds fewer than 2 images")
    if size is None:
        with Image.open(paths[0]) as im:
            size = im.size[0]
    imgs = load_folder(folder, size)
    if len(imgs) < 2:
        raise FileNotFoundError(f"{folder} holds fewer than 2 images")
    return imgs


def evaluate_dirs(
    real_dir: str | os.PathLike,
    fake_dir: str | os.PathLike,
    extractor: FeatureExtractor | None = None,
    *,
    subset_size: int = 100,
    n_subsets: int = 10,
    seed: int = DEFAULT_EXTRACTOR_SEED,
    size: int | None = None,
) -> MetricReport:
    """FID and KID between two PNG folders; both are resized to ``size`` (default: first real image)."""
    extractor = extractor or FeatureExtractor()
    real = _load_images(real_dir, size)
    fake = _load_images(fake_dir, size or real.shape[-1])
    report = compare_images(real, fake, extractor, subset_size=subset_size, n_subsets=n_subsets, seed=seed)
    report.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return report
