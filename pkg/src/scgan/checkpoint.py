"""Directory checkpoint format: one raw little-endian float32 file per tensor.

Layout::

    <dir>/manifest.txt      one ``name, dtype, shape`` line per tensor
    <dir>/tensors/<name>.bin
    <dir>/model.json        architecture keyword arguments
    <dir>/state.json        trainer counters (written by the trainer)
"""

from __future__ import annotations

import json
import os
import shutil
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import ConfigError, DimensionError
from .models import TranslationModel

MANIFEST = "manifest.txt"
TENSOR_DIR = "tensors"
MODEL_JSON = "model.json"
_LE_F32 = np.dtype("<f4")


def _format_shape(shape) -> str:
    return "x".join(str(s) for s in shape) if len(shape) else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def write_tensors(directory: str | os.PathLike, tensors: Mapping[str, torch.Tensor]) -> None:
    directory = Path(directory)
    (directory / TENSOR_DIR).mkdir(parents=True, exist_ok=True)
    lines = []
    for name, t in tensors.items():
        if "/" in name or name.startswith("."):
            raise ConfigError(f"tensor name {name!r} is not a valid file name")
        arr = t.detach().cpu().to(torch.float32).numpy().astype(_LE_F32, copy=False)
        (directory / TENSOR_DIR / f"{name}.bin").write_bytes(arr.tobytes(order="C"))
        lines.append(f"{name}, float32, {_format_shape(arr.shape)}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(directory: str | os.PathLike) -> dict[str, tuple[int, ...]]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    entries = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or parts[1] != "float32":
            raise ConfigError(f"{path}:{lineno}: malformed manifest line {line!r}")
        entries[parts[0]] = _parse_shape(parts[2])
    return entries


def read_tensors(directory: str | os.PathLike) -> dict[str, torch.Tensor]:
    directory = Path(directory)
    out = {}
    for name, shape in read_manifest(directory).items():
        raw = (directory / TENSOR_DIR / f"{name}.bin").read_bytes()
        arr = np.frombuffer(raw, dtype=_LE_F32)
        expected = int(np.prod(shape)) if shape else 1
        if arr.size != expected:
            raise DimensionError(
                f"tensor {name}: file holds {arr.size} values, manifest says shape {shape}"
            )
        out[name] = torch.from_numpy(arr.astype(np.float32).reshape(shape))
    return out


def save_model(model: TranslationModel, directory: str | os.PathLike, extra: Mapping[str, torch.Tensor] | None = None) -> None:
    """Write model parameters (plus optional extra tensors) and architecture to ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = dict(model.state_dict())
    if extra:
        clash = set(tensors) & set(extra)
        if clash:
            raise ConfigError(f"extra tensor names collide with parameters: {sorted(clash)}")
        tensors.update(extra)
    write_tensors(directory, tensors)
    (directory / MODEL_JSON).write_text(json.dumps(model.arch, indent=2), encoding="utf-8")


def load_model(directory: str | os.PathLike) -> tuple[TranslationModel, dict[str, torch.Tensor]]:
    """Rebuild the model stored in ``directory``; returns it with any non-parameter tensors.

    Every parameter name and shape is validated against the constructed architecture.
    """
    directory = Path(directory)
    arch_path = directory / MODEL_JSON
    if not arch_path.is_file():
        raise FileNotFoundError(f"no {MODEL_JSON} in checkpoint {directory}")
    arch = json.loads(arch_path.read_text(encoding="utf-8"))
    model = TranslationModel(**arch)
    tensors = read_tensors(directory)
    expected = model.state_dict()
    missing = [k for k in expected if k not in tensors]
    if missing:
        raise ConfigError(f"checkpoint {directory} is missing parameters: {missing[:5]}")
    for name, ref in expected.items():
        if tuple(tensors[name].shape) != tuple(ref.shape):
            raise DimensionError(
                f"parameter {name}: checkpoint shape {tuple(tensors[name].shape)}, "
                f"model expects {tuple(ref.shape)}"
            )
    model.load_state_dict({k: tensors[k] for k in expected})
    extra = {k: v for k, v in tensors.items() if k not in expected}
    return model, extra


def replace_dir(tmp: Path, final: Path) -> None:
    """Move a fully written ``tmp`` directory onto ``final``."""
    old = final.with_name(final.name + ".old")
    if old.exists():
        shutil.rmtree(old)
    if final.exists():
        final.rename(old)
    tmp.rename(final)
    if old.exists():
        shutil.rmtree(old)
