"""Unpaired image folders, PNG codec, and the synthetic two-domain tasks.

A dataset root holds ``trainA``, ``trainB``, ``testA`` and ``testB`` folders of PNG
files. Images are mapped to [-1, 1] with ``v / 127.5 - 1``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal

import numpy as np
import torch
from PIL import Image, ImageDraw

from .errors import ConfigError, DimensionError, UnsupportedOracleError

SUBFOLDERS = ("trainA", "trainB", "testA", "testB")
MANIFEST = "manifest.json"
TaskKind = Literal["channel-swap", "stripes"]
TASK_KINDS = ("channel-swap", "stripes")
NOISE_SIGMA = 0.02
STRIPE_AMPLITUDE = 0.3


# --- codec -------------------------------------------------------------------

def to_unit(arr: np.ndarray) -> torch.Tensor:
    """uint8 (h, w, 3) array -> float32 (3, h, w) tensor in [-1, 1]."""
    t = torch.from_numpy(np.array(arr, dtype=np.uint8)).permute(2, 0, 1).to(torch.float32)
    return t / 127.5 - 1.0


def to_uint8(t: torch.Tensor) -> np.ndarray:
    """(3, h, w) tensor in [-1, 1] -> uint8 (h, w, 3) array."""
    v = ((t.detach().cpu().to(torch.float32) + 1.0) * 127.5).round().clamp(0, 255)
    return v.to(torch.uint8).permute(1, 2, 0).numpy()


def decode_png(path: str | os.PathLike, size: int | None = None) -> torch.Tensor:
    """Read a PNG as a (3, s, s) tensor in [-1, 1]; grayscale is replicated to RGB."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot decode image {path}: {exc}") from exc
    return to_unit(arr)


def encode_png(t: torch.Tensor, path: str | os.PathLike) -> None:
    Image.fromarray(to_uint8(t), mode="RGB").save(path, format="PNG")


def list_pngs(folder: str | os.PathLike) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"image folder not found: {folder}")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() == ".png")


def load_folder(folder: str | os.PathLike, size: int | None = None) -> torch.Tensor:
    paths = list_pngs(folder)
    if not paths:
        raise FileNotFoundError(f"no PNG images in {folder}")
    return torch.stack([decode_png(p, size) for p in paths])


# --- unpaired dataset ----------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    size: int

    def folder(self, name: str) -> Path:
        return Path(self.root) / name


class UnpairedDataset:
    """In-memory train/test tensors for two unpaired domains."""

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        for name in SUBFOLDERS:
            if not spec.folder(name).is_dir():
                raise FileNotFoundError(f"missing dataset folder: {spec.folder(name)}")
        self.train_a = load_folder(spec.folder("trainA"), spec.size)
        self.train_b = load_folder(spec.folder("trainB"), spec.size)
        self.test_a = self._load_optional("testA")
        self.test_b = self._load_optional("testB")

    def _load_optional(self, name: str) -> torch.Tensor:
        paths = list_pngs(self.spec.folder(name))
        if not paths:
            return torch.empty(0, 3, self.spec.size, self.spec.size)
        return torch.stack([decode_png(p, self.spec.size) for p in paths])

    def steps_per_epoch(self, batch_size: int) -> int:
        return math.ceil(max(len(self.train_a), len(self.train_b)) / batch_size)

    def batches(self, epoch: int, batch_size: int, seed: int) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        """Yield ``(x, y)`` train batches; the order is a pure function of (seed, epoch).

        Each domain is shuffled independently and the smaller one is cycled.
        """
        steps = self.steps_per_epoch(batch_size)
        order_a = _epoch_order(len(self.train_a), seed, epoch, 0)
        order_b = _epoch_order(len(self.train_b), seed, epoch, 1)
        for step in range(steps):
            pos = np.arange(step * batch_size, (step + 1) * batch_size)
            ia = order_a[pos % len(order_a)]
            ib = order_b[pos % len(order_b)]
            yield self.train_a[torch.from_numpy(ia)], self.train_b[torch.from_numpy(ib)]


def _epoch_order(n: int, seed: int, epoch: int, domain: int) -> np.ndarray:
    rng = np.random.default_rng([seed % 2**63, epoch, domain, 0xDA7A])
    return rng.permutation(n)


def load_dataset(spec: DatasetSpec) -> UnpairedDataset:
    return UnpairedDataset(spec)


# --- oracle --------------------------------------------------------------------

def channel_rotate(x: torch.Tensor) -> torch.Tensor:
    """(R, G, B) -> (G, B, R) on the channel axis (-3)."""
    return x[..., [1, 2, 0], :, :]


def stripe_field(size: int, amplitude: float, period: float, phase: float, vertical: bool) -> torch.Tensor:
    coord = torch.arange(size, dtype=torch.float64)
    wave = amplitude * torch.sin(2 * math.pi * coord / period + phase)
    field = wave.view(1, size) if vertical else wave.view(size, 1)
    return field.expand(size, size).to(torch.float32)


def oracle_translate(kind: str, x: torch.Tensor, stripe_params: list[dict] | None = None) -> torch.Tensor:
    """Ground-truth A -> B map of a synthetic task.

    ``stripes`` needs the per-image parameters recorded in the dataset manifest.
    """
    if kind == "channel-swap":
        return channel_rotate(x)
    if kind == "stripes":
        if stripe_params is None:
            raise UnsupportedOracleError(
                "the stripes oracle needs per-image stripe parameters from a synthetic manifest"
            )
        if len(stripe_params) != x.shape[0]:
            raise DimensionError(f"{len(stripe_params)} stripe parameter sets for {x.shape[0]} images")
        size = x.shape[-1]
        out = []
        for img, p in zip(x, stripe_params):
            h = stripe_field(size, p["amplitude"], p["period"], p["phase"], vertical=False)
            v = stripe_field(size, p["amplitude"], p["period"], p["phase"], vertical=True)
            out.append((img - h + v).clamp(-1, 1))
        return torch.stack(out)
    raise UnsupportedOracleError(f"no oracle for task kind {kind!r}")


# --- synthetic tasks -------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "channel-swap"
    n_train: int = 200
    n_test: int = 50
    size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown synthetic task {self.kind!r}; expected one of {TASK_KINDS}")
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError("n_train must be >= 1 and n_test >= 0")
        if self.size < 16 or self.size % 4:
            raise ConfigError(f"synthetic image size must be >= 16 and divisible by 4, got {self.size}")


_SPLIT_CODES = {"train": 0, "test": 1}
_DOMAIN_CODES = {"A": 0, "B": 1}


def _content_rng(seed: int, split: str, domain: str, index: int) -> np.random.Generator:
    # one stream per (split, domain, index): A and B never share a content draw
    return np.random.default_rng([seed % 2**63, _SPLIT_CODES[split], _DOMAIN_CODES[domain], index])


def draw_content(rng: np.random.Generator, size: int) -> np.ndarray:
    """2-5 anti-aliased warm-colored ellipses/rectangles on gray, as float32 (3, s, s) in [-1, 1]."""
    ss = 4
    canvas = Image.new("RGB", (size * ss, size * ss), (128, 128, 128))
    draw = ImageDraw.Draw(canvas)
    for _ in range(int(rng.integers(2, 6))):
        # red-dominant palette, so the channel rotation changes the color distribution
        color = (
            int(rng.integers(150, 256)),
            int(rng.integers(0, 150)),
            int(rng.integers(0, 110)),
        )
        w, h = (rng.uniform(0.15, 0.45, size=2) * size * ss).astype(int)
        x0 = int(rng.integers(0, size * ss - w))
        y0 = int(rng.integers(0, size * ss - h))
        box = (x0, y0, x0 + w, y0 + h)
        if rng.random() < 0.5:
            draw.ellipse(box, fill=color)
        else:
            draw.rectangle(box, fill=color)
    img = canvas.resize((size, size), Image.LANCZOS)
    arr = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 127.5 - 1.0
    arr = arr + rng.normal(0.0, NOISE_SIGMA, size=arr.shape).astype(np.float32)
    return np.clip(arr, -1.0, 1.0)


def _stripe_params(rng: np.random.Generator) -> dict:
    return {
        "amplitude": STRIPE_AMPLITUDE,
        "period": float(rng.uniform(6.0, 12.0)),
        "phase": float(rng.uniform(0.0, 2 * math.pi)),
    }


def synth_image(task: SyntheticTask, split: str, domain: str, index: int) -> tuple[torch.Tensor, dict | None]:
    rng = _content_rng(task.seed, split, domain, index)
    x = torch.from_numpy(draw_content(rng, task.size))
    if task.kind == "channel-swap":
        return (channel_rotate(x) if domain == "B" else x), None
    params = _stripe_params(rng)
    field = stripe_field(task.size, params["amplitude"], params["period"], params["phase"], vertical=domain == "B")
    return (x + field).clamp(-1, 1), params


def generate_synthetic(task: SyntheticTask, out: str | os.PathLike, overwrite: bool = False) -> DatasetSpec:
    """Write a synthetic unpaired dataset tree plus ``manifest.json``; returns its DatasetSpec."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise FileExistsError(f"output directory {out} is not empty (use overwrite to replace it)")
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "task": task.kind, "seed": task.seed, "n_train": task.n_train,
        "n_test": task.n_test, "size": task.size,
    }
    stripes: dict = {}
    for split, n in (("train", task.n_train), ("test", task.n_test)):
        for domain in ("A", "B"):
            folder = out / f"{split}{domain}"
            if folder.exists():
                for old in folder.glob("*.png"):
                    old.unlink()
            folder.mkdir(exist_ok=True)
            for i in range(n):
                img, params = synth_image(task, split, domain, i)
                name = f"{i:05d}.png"
                encode_png(img, folder / name)
                if params is not None:
                    stripes[f"{split}{domain}/{name}"] = params
    if stripes:
        manifest["stripes"] = stripes
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return DatasetSpec(out, task.size)


def read_manifest(root: str | os.PathLike) -> dict:
    return json.loads((Path(root) / MANIFEST).read_text(encoding="utf-8"))


def task_from_manifest(root: str | os.PathLike) -> SyntheticTask:
    m = read_manifest(root)
    return SyntheticTask(m["task"], m["n_train"], m["n_test"], m["size"], m["seed"])


__all__ = [
    "DatasetSpec", "SyntheticTask", "UnpairedDataset", "channel_rotate", "decode_png",
    "encode_png", "generate_synthetic", "load_dataset", "load_folder", "oracle_translate",
    "read_manifest", "task_from_manifest", "to_uint8", "to_unit",
]
