"""Alternating generator/discriminator optimization with SSL, image pools and checkpointing.

All randomness inside a step is drawn from streams keyed by ``(seed, global_step,
purpose)``, so resuming from a checkpoint only needs the step counter plus the
stored tensors (parameters, Adam moments, pool contents) to continue bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import random
import shutil
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torchvision.utils import make_grid

from . import checkpoint as ckpt
from .augment import DiffAugPolicy, apply_diffaug, sample_diffaug_params, standard_augment
from .data import DatasetSpec, UnpairedDataset, encode_png
from .errors import ConfigError, DimensionError, TrainingDiverged
from .losses import (
    LossBreakdown,
    LossWeights,
    cycle_loss,
    identity_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    ssl_reconstruction_loss,
    total_loss,
)
from .models import DECODER_SIZE, QUADRANTS, SslDiscriminator, TranslationModel, crop_quadrant, init_model

log = logging.getLogger(__name__)

LATEST = "latest"
STATE_JSON = "state.json"
LOG_FILE = "train_log.jsonl"
LOG_FIELDS = ("step", "epoch", "lr", "adv_g", "adv_f", "adv_dx", "adv_dy", "ssl_dx", "ssl_dy", "cyc", "id", "total")


@dataclass
class TrainConfig:
    data_root: str = ""
    checkpoint_dir: str = "runs/default"
    image_size: int = 64
    epochs: int = 200
    batch_size: int = 8
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_cyc: float = 10.0
    lambda_id: float = 0.5
    ssl: bool = True
    ssl_weight: float = 1.0
    diffaug: str = "off"
    pool_size: int = 50
    seed: int = 0
    log_every: int = 1
    augment: bool = True
    n_res_blocks: int = 9
    gen_width: int = 64
    disc_width: int = 64
    n_samples: int = 4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.pool_size < 0:
            raise ConfigError(f"pool_size must be >= 0, got {self.pool_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")
        DiffAugPolicy.parse(self.diffaug)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_cyc, self.lambda_id, self.ssl_weight)

    @property
    def policy(self) -> DiffAugPolicy:
        return DiffAugPolicy.parse(self.diffaug)

    @property
    def model_name(self) -> str:
        if self.ssl:
            return "scgan"
        return "cyclegan-diffaug" if self.policy else "cyclegan-baseline"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_BOOL_WORDS = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}


def _coerce(name: str, typ, text: str):
    try:
        if typ in (bool, "bool"):
            return _BOOL_WORDS[text.lower()]
        if typ in (int, "int"):
            return int(text)
        if typ in (float, "float"):
            return float(text)
    except (KeyError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot parse {text!r} as {typ}") from None
    return text


def parse_config(text: str, **overrides) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) into a TrainConfig."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        values[key] = _coerce(key, types[key], value)
    values.update(overrides)
    return TrainConfig(**values)


def load_config(path: str | os.PathLike, **overrides) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, bool):
            v = "on" if v else "off"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Constant for the first half of training, then linear decay reaching 0 at ``cfg.epochs``."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    half = cfg.epochs / 2
    if epoch < half:
        return cfg.lr
    return cfg.lr * (1.0 - (epoch - half) / half)


# --- randomness ------------------------------------------------------------------

_PURPOSES = {
    "augment_x": 1, "augment_y": 2, "diffaug_x": 3, "diffaug_y": 4,
    "pool_x": 5, "pool_y": 6, "crop_x": 7, "crop_y": 8,
}


def step_generator(seed: int, step: int, purpose: str) -> torch.Generator:
    ss = np.random.SeedSequence([seed % 2**63, step, _PURPOSES[purpose]])
    return torch.Generator().manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0]))


# --- image pool --------------------------------------------------------------------

class ImagePool:
    """History buffer of generated images fed to the discriminators."""

    def __init__(self, capacity: int = 50):
        self.capacity = capacity
        self.images: list[torch.Tensor] = []

    def query(self, fresh: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
        if self.capacity == 0:
            return fresh
        out = []
        for img in fresh.detach():
            if len(self.images) < self.capacity:
                self.images.append(img.clone())
                out.append(img)
            elif torch.rand((), generator=generator).item() < 0.5:
                idx = int(torch.randint(self.capacity, (), generator=generator).item())
                out.append(self.images[idx].clone())
                self.images[idx] = img.clone()
            else:
                out.append(img)
        return torch.stack(out)

    def tensors(self, prefix: str) -> dict[str, torch.Tensor]:
        if not self.images:
            return {}
        return {prefix: torch.stack(self.images)}

    def restore(self, stacked: torch.Tensor | None) -> None:
        self.images = [] if stacked is None else [t.clone() for t in stacked]


def pool_query(pool: ImagePool, fresh: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    return pool.query(fresh, generator)


# --- training state ------------------------------------------------------------------

@dataclass
class TrainState:
    model: TranslationModel
    opt_gen: torch.optim.Adam
    opt_disc: torch.optim.Adam
    pool_x: ImagePool
    pool_y: ImagePool
    epoch: int = 0
    global_step: int = 0
    history: list[dict] = field(default_factory=list)
    last_checkpoint: str | None = None


def new_state(cfg: TrainConfig) -> TrainState:
    model = init_model(
        cfg.image_size, cfg.seed,
        n_res_blocks=cfg.n_res_blocks, gen_width=cfg.gen_width, disc_width=cfg.disc_width,
    )
    betas = (cfg.beta1, cfg.beta2)
    return TrainState(
        model=model,
        opt_gen=torch.optim.Adam(model.generator_parameters(), lr=cfg.lr, betas=betas),
        opt_disc=torch.optim.Adam(model.discriminator_parameters(), lr=cfg.lr, betas=betas),
        pool_x=ImagePool(cfg.pool_size),
        pool_y=ImagePool(cfg.pool_size),
    )


def set_lr(state: TrainState, lr: float) -> None:
    for opt in (state.opt_gen, state.opt_disc):
        for group in opt.param_groups:
            group["lr"] = lr


def _param_names(model: TranslationModel) -> dict[int, str]:
    return {id(p): name for name, p in model.named_parameters()}


def _optimizer_tensors(state: TrainState) -> tuple[dict[str, torch.Tensor], dict[str, int]]:
    names = _param_names(state.model)
    tensors, steps = {}, {}
    for tag, opt in (("optgen", state.opt_gen), ("optdisc", state.opt_disc)):
        for group in opt.param_groups:
            for p in group["params"]:
                st = opt.state.get(p)
                if not st:
                    continue
                name = names[id(p)]
                tensors[f"{tag}.exp_avg.{name}"] = st["exp_avg"]
                tensors[f"{tag}.exp_avg_sq.{name}"] = st["exp_avg_sq"]
                steps[f"{tag}.{name}"] = int(st["step"])
    return tensors, steps


def _restore_optimizers(state: TrainState, tensors: dict[str, torch.Tensor], steps: dict[str, int]) -> None:
    names = _param_names(state.model)
    for tag, opt in (("optgen", state.opt_gen), ("optdisc", state.opt_disc)):
        for group in opt.param_groups:
            for p in group["params"]:
                name = names[id(p)]
                key = f"{tag}.{name}"
                if key not in steps:
                    continue
                opt.state[p] = {
                    "step": torch.tensor(float(steps[key])),
                    "exp_avg": tensors[f"{tag}.exp_avg.{name}"].clone(),
                    "exp_avg_sq": tensors[f"{tag}.exp_avg_sq.{name}"].clone(),
                }


def save_checkpoint(state: TrainState, cfg: TrainConfig, directory: str | os.PathLike) -> Path:
    """Write parameters, Adam moments, pools and ``state.json`` atomically to ``directory``."""
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    extra, steps = _optimizer_tensors(state)
    extra.update(state.pool_x.tensors("pool.x"))
    extra.update(state.pool_y.tensors("pool.y"))
    ckpt.save_model(state.model, tmp, extra)
    meta = {
        "epoch": state.epoch,
        "global_step": state.global_step,
        "seed": cfg.seed,
        "rng": "counter-based: streams derived from (seed, global_step, purpose)",
        "adam_steps": steps,
        "history": state.history,
        "config": cfg.to_dict(),
    }
    (tmp / STATE_JSON).write_text(json.dumps(meta), encoding="utf-8")
    ckpt.replace_dir(tmp, directory)
    return directory


def load_checkpoint(directory: str | os.PathLike, cfg: TrainConfig) -> TrainState:
    directory = Path(directory)
    model, extra = ckpt.load_model(directory)
    meta = json.loads((directory / STATE_JSON).read_text(encoding="utf-8"))
    state = new_state(cfg)
    state.model.load_state_dict(model.state_dict())
    _restore_optimizers(state, extra, meta["adam_steps"])
    state.pool_x.restore(extra.get("pool.x"))
    state.pool_y.restore(extra.get("pool.y"))
    state.epoch = meta["epoch"]
    state.global_step = meta["global_step"]
    state.history = meta["history"]
    state.last_checkpoint = str(directory)
    return state


# --- one step --------------------------------------------------------------------------

def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def ssl_targets(real: torch.Tensor, quadrant: str) -> tuple[torch.Tensor, torch.Tensor]:
    """Bilinear 64x64 resizes of the whole real image and of its quadrant crop."""
    size = (DECODER_SIZE, DECODER_SIZE)
    full = F.interpolate(real, size=size, mode="bilinear", align_corners=False)
    part = F.interpolate(crop_quadrant(real, quadrant), size=size, mode="bilinear", align_corners=False)
    return full, part


def ssl_loss_on_real(d: SslDiscriminator, real: torch.Tensor, f_part, f_full, quadrant: str) -> torch.Tensor:
    """SSL reconstruction term for one discriminator; ``real`` is the real-image input it encoded."""
    target_full, target_part = ssl_targets(real, quadrant)
    return ssl_reconstruction_loss(
        d.decode_full(f_full), target_full, d.decode_part(f_part, quadrant), target_part
    )


def _check_finite(value: torch.Tensor, what: str, state: TrainState) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDiverged(
            f"non-finite {what} at step {state.global_step}; last good checkpoint: {state.last_checkpoint}",
            state.last_checkpoint,
        )


def train_step(state: TrainState, batch_x: torch.Tensor, batch_y: torch.Tensor, cfg: TrainConfig) -> LossBreakdown:
    """One generator update followed by one discriminator update."""
    size = cfg.image_size
    for name, b in (("batch_x", batch_x), ("batch_y", batch_y)):
        if b.dim() != 4 or tuple(b.shape[1:]) != (3, size, size):
            raise DimensionError(f"{name} has shape {tuple(b.shape)}, expected (b, 3, {size}, {size})")
    m = state.model
    step = state.global_step
    policy = cfg.policy
    # one draw of DiffAug parameters per discriminator per step, shared by real and fake inputs
    aug_x = aug_y = None
    if policy:
        aug_x = sample_diffaug_params(policy, batch_x.shape[0], size, step_generator(cfg.seed, step, "diffaug_x"))
        aug_y = sample_diffaug_params(policy, batch_y.shape[0], size, step_generator(cfg.seed, step, "diffaug_y"))

    def d_in(img, params):
        return img if params is None else apply_diffaug(img, params)

    # generators, discriminators frozen
    _set_requires_grad(m.disc_x, False)
    _set_requires_grad(m.disc_y, False)
    fake_y = m.gen_xy(batch_x)
    fake_x = m.gen_yx(batch_y)
    rec_x = m.gen_yx(fake_y)
    rec_y = m.gen_xy(fake_x)
    id_x = m.gen_yx(batch_x)
    id_y = m.gen_xy(batch_y)
    adv_g = lsgan_generator_loss(m.disc_y(d_in(fake_y, aug_y))[0])
    adv_f = lsgan_generator_loss(m.disc_x(d_in(fake_x, aug_x))[0])
    cyc = cycle_loss(batch_x, rec_x, batch_y, rec_y)
    idt = identity_loss(batch_x, id_x, batch_y, id_y)
    gen_obj = adv_g + adv_f + cfg.lambda_cyc * cyc + cfg.lambda_id * idt
    # abort before any parameter is touched
    _check_finite(gen_obj, "generator objective", state)
    state.opt_gen.zero_grad(set_to_none=True)
    gen_obj.backward()
    state.opt_gen.step()
    _set_requires_grad(m.disc_x, True)
    _set_requires_grad(m.disc_y, True)

    # discriminators on pooled fakes; SSL only on the real inputs
    pooled_y = state.pool_y.query(fake_y.detach(), step_generator(cfg.seed, step, "pool_y"))
    pooled_x = state.pool_x.query(fake_x.detach(), step_generator(cfg.seed, step, "pool_x"))
    real_y_in = d_in(batch_y, aug_y)
    real_x_in = d_in(batch_x, aug_x)
    logit_ry, fpart_y, ffull_y = m.disc_y(real_y_in)
    logit_rx, fpart_x, ffull_x = m.disc_x(real_x_in)
    adv_dy = lsgan_discriminator_loss(logit_ry, m.disc_y(d_in(pooled_y, aug_y))[0])
    adv_dx = lsgan_discriminator_loss(logit_rx, m.disc_x(d_in(pooled_x, aug_x))[0])
    zero = torch.zeros((), dtype=adv_dx.dtype)
    ssl_dy = ssl_dx = zero
    if cfg.ssl:
        qy = QUADRANTS[int(torch.randint(4, (), generator=step_generator(cfg.seed, step, "crop_y")))]
        qx = QUADRANTS[int(torch.randint(4, (), generator=step_generator(cfg.seed, step, "crop_x")))]
        # SSL targets come from the real discriminator inputs only, never from fakes
        assert real_y_in.data_ptr() != pooled_y.data_ptr() and real_x_in.data_ptr() != pooled_x.data_ptr()
        ssl_dy = ssl_loss_on_real(m.disc_y, real_y_in, fpart_y, ffull_y, qy)
        ssl_dx = ssl_loss_on_real(m.disc_x, real_x_in, fpart_x, ffull_x, qx)
    disc_obj = adv_dx + adv_dy + cfg.ssl_weight * (ssl_dx + ssl_dy)
    _check_finite(disc_obj, "discriminator objective", state)
    state.opt_disc.zero_grad(set_to_none=True)
    disc_obj.backward()
    state.opt_disc.step()

    breakdown = total_loss(
        adv_g=adv_g, adv_f=adv_f, adv_dx=adv_dx, adv_dy=adv_dy,
        ssl_dx=ssl_dx, ssl_dy=ssl_dy, cyc=cyc, id=idt, weights=cfg.weights,
    )
    if not math.isfinite(breakdown.total):
        raise TrainingDiverged(
            f"non-finite loss at step {step}: {breakdown.as_dict()}", state.last_checkpoint
        )
    state.global_step += 1
    return breakdown


# --- full run ----------------------------------------------------------------------------

def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


@torch.no_grad()
def translate(model: TranslationModel, images: torch.Tensor, direction: str = "AtoB", batch_size: int = 16) -> torch.Tensor:
    if direction not in ("AtoB", "BtoA"):
        raise ConfigError(f"direction must be AtoB or BtoA, got {direction!r}")
    net = model.gen_xy if direction == "AtoB" else model.gen_yx
    return torch.cat([net(images[i : i + batch_size]) for i in range(0, len(images), batch_size)])


@torch.no_grad()
def cycle_mae(model: TranslationModel, xs: torch.Tensor, ys: torch.Tensor) -> float:
    """Test-set cycle reconstruction error: mean |F(G(x)) - x| + mean |G(F(y)) - y|."""
    rec_x = translate(model, translate(model, xs, "AtoB"), "BtoA")
    rec_y = translate(model, translate(model, ys, "BtoA"), "AtoB")
    return float(cycle_loss(xs, rec_x, ys, rec_y))


@torch.no_grad()
def sample_grid(model: TranslationModel, xs: torch.Tensor, ys: torch.Tensor) -> torch.Tensor:
    """Rows: x, G(x), F(G(x)), y, F(y), G(F(y))."""
    gx = translate(model, xs, "AtoB")
    fy = translate(model, ys, "BtoA")
    rows = [xs, gx, translate(model, gx, "BtoA"), ys, fy, translate(model, fy, "AtoB")]
    return make_grid(torch.cat(rows), nrow=len(xs), padding=2, pad_value=1.0)


def _append_log(path: Path, record: dict) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def _truncate_log(path: Path, keep_before_step: int) -> None:
    if not path.exists():
        return
    kept = []
    for line in path.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        if "step" not in rec or rec["step"] < keep_before_step:
            kept.append(line)
    path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")


def fit(
    cfg: TrainConfig,
    *,
    stop_after_epoch: int | None = None,
    dataset: UnpairedDataset | None = None,
    on_step: Callable[[int, LossBreakdown], None] | None = None,
) -> TrainState:
    """Train for ``cfg.epochs`` epochs, resuming from ``<checkpoint_dir>/latest`` if present.

    ``stop_after_epoch`` ends the run early after that many completed epochs, leaving a
    resumable checkpoint (used to exercise interruption).
    """
    seed_everything(cfg.seed)
    out = Path(cfg.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = UnpairedDataset(DatasetSpec(Path(cfg.data_root), cfg.image_size))
    log_path = out / LOG_FILE
    latest = out / LATEST
    if (latest / STATE_JSON).is_file():
        state = load_checkpoint(latest, cfg)
        _truncate_log(log_path, state.global_step)
        log.info("resuming %s at epoch %d (step %d)", cfg.model_name, state.epoch, state.global_step)
    else:
        state = new_state(cfg)
        log_path.write_text(
            json.dumps({"model": cfg.model_name, "diffaug": str(cfg.policy), "config": cfg.to_dict()}) + "\n",
            encoding="utf-8",
        )
        (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")

    n = cfg.n_samples
    sample_x, sample_y = dataset.test_a[:n], dataset.test_b[:n]
    if len(sample_x) == 0 or len(sample_y) == 0:
        sample_x, sample_y = dataset.train_a[:n], dataset.train_b[:n]
    (out / "samples").mkdir(exist_ok=True)

    while state.epoch < cfg.epochs:
        if stop_after_epoch is not None and state.epoch >= stop_after_epoch:
            break
        lr = lr_schedule(state.epoch, cfg)
        set_lr(state, lr)
        for batch_x, batch_y in dataset.batches(state.epoch, cfg.batch_size, cfg.seed):
            if cfg.augment:
                batch_x = standard_augment(batch_x, step_generator(cfg.seed, state.global_step, "augment_x"))
                batch_y = standard_augment(batch_y, step_generator(cfg.seed, state.global_step, "augment_y"))
            step = state.global_step
            losses = train_step(state, batch_x, batch_y, cfg)
            record = {"step": step, "epoch": state.epoch, "lr": lr, **losses.as_dict()}
            state.history.append(record)
            if step % cfg.log_every == 0:
                _append_log(log_path, {k: record[k] for k in LOG_FIELDS})
            if on_step is not None:
                on_step(step, losses)
        state.epoch += 1
        encode_png(sample_grid(state.model, sample_x, sample_y), out / "samples" / f"epoch_{state.epoch:04d}.png")
        save_checkpoint(state, cfg, latest)
        state.last_checkpoint = str(latest)
        log.info("epoch %d/%d done, step %d, last total %.4f", state.epoch, cfg.epochs, state.global_step,
                 state.history[-1]["total"] if state.history else float("nan"))
    return state
