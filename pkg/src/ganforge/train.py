"""Adversarial training: losses, the alternating update step and the epoch driver.

The discriminator minimizes -(E[log D(x)] + E[log(1 - D(G(z)))]), i.e. it
ascends the GAN value function. The generator uses the non-saturating
objective -E[log D(G(z))]. Each step performs ``d_steps`` discriminator
updates followed by one generator update on a fresh latent batch.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import tensor as T
from .checkpoint import read_checkpoint, write_checkpoint
from .data import DatasetHandle, grid_columns, sample_latent, save_image_grid
from .errors import CheckpointError, ConfigError, DatasetError, NumericError
from .models import DiscriminatorNet, GeneratorNet, build_discriminator, build_generator, generate
from .optim import Adam
from .tensor import Tape, Tensor

__all__ = [
    "TrainConfig",
    "TrainRunState",
    "TrainingRun",
    "StepResult",
    "d_loss",
    "g_loss_nonsaturating",
    "g_loss_saturating",
    "gan_value",
    "train_step",
    "run_training",
    "load_run",
    "load_generator",
    "load_discriminator",
    "LOSS_CSV",
    "LOSS_HEADER",
]

log = logging.getLogger(__name__)

CLAMP = 1e-7
LOSS_CSV = "losses.csv"
LOSS_HEADER = "iteration,epoch,d_loss,g_loss"


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 80
    latent_dim: int = 100
    resolution: int = 64
    base_channels: int = 64
    channels: int = 1
    snapshot_period_epochs: int = 10
    snapshot_latent_count: int = 16
    seed: int = 0
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: bool = False
    d_steps: int = 1
    strict_batchnorm: bool = False
    leaky_slope: float = 0.2
    sample_mode: str = "eval"

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch norm needs batch statistics)")
        if self.snapshot_period_epochs < 1:
            raise ConfigError("snapshot_period_epochs must be at least 1")
        if self.snapshot_latent_count < 1:
            raise ConfigError("snapshot_latent_count must be at least 1")
        if self.latent_dim < 1 or self.base_channels < 1:
            raise ConfigError("latent_dim and base_channels must be positive")
        if self.d_steps < 1:
            raise ConfigError("d_steps must be at least 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("leaky_slope must lie in (0, 1)")
        if self.sample_mode not in ("train", "eval"):
            raise ConfigError("sample_mode must be 'train' or 'eval'")
        if self.resolution < 16 or self.resolution % 16:
            raise ConfigError(f"resolution {self.resolution} must be a positive multiple of 16")
        return self

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


@dataclass
class TrainRunState:
    epoch: int
    snapshot_latents: np.ndarray
    rng: np.random.Generator
    iteration: int = 0
    history: list[tuple[int, int, float, float]] = field(default_factory=list)

    def record(self, d: float, g: float) -> None:
        self.iteration += 1
        self.history.append((self.iteration, self.epoch, d, g))


@dataclass(frozen=True)
class StepResult:
    d_loss: float
    g_loss: float


def _clamped(p: Tensor, what: str) -> Tensor:
    lo, hi = CLAMP, 1.0 - CLAMP
    outside = int(((p.data < lo) | (p.data > hi)).sum())
    if outside:
        log.debug("clamp event: %d %s probabilities outside [%g, 1-%g]", outside, what, CLAMP, CLAMP)
    return T.clip(p, lo, hi)


def d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-(mean(log D(x)) + mean(log(1 - D(G(z)))))."""
    real = T.log(_clamped(d_real, "real"))
    fake = T.log(_clamped(1.0 - d_fake, "fake"))
    return T.neg(T.add(T.mean(real), T.mean(fake)))


def gan_value(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """The GAN value function mean(log D(x)) + mean(log(1 - D(G(z))))."""
    return T.neg(d_loss(d_real, d_fake))


def g_loss_nonsaturating(d_fake: Tensor) -> Tensor:
    """-mean(log D(G(z)))."""
    return T.neg(T.mean(T.log(_clamped(d_fake, "fake"))))


def g_loss_saturating(d_fake: Tensor) -> Tensor:
    """mean(log(1 - D(G(z)))), the generator's term of the value function."""
    return T.mean(T.log(_clamped(1.0 - d_fake, "fake")))


def _checked(value: Tensor, name: str) -> float:
    v = value.item()
    if not math.isfinite(v):
        raise NumericError(f"{name} is non-finite ({v})")
    return v


def train_step(batch: Tensor, generator: GeneratorNet, discriminator: DiscriminatorNet,
               opt_g: Adam, opt_d: Adam, rng: np.random.Generator, d_steps: int = 1) -> StepResult:
    """One adversarial step: ``d_steps`` discriminator updates, then one generator update."""
    n = batch.shape[0]
    if n < 2:
        raise ConfigError("train_step needs a batch of at least 2 images")
    generator.train()
    discriminator.train()
    d_params = discriminator.named_parameters()
    g_params = generator.named_parameters()

    for _ in range(d_steps):
        try:
            fake = generator(sample_latent(n, generator.latent_dim, rng)).detach()
            with Tape() as tape:
                loss = d_loss(discriminator(batch), discriminator(fake))
            d_value = _checked(loss, "d_loss")
            opt_d.step(tape.gradient(loss, d_params))
        except NumericError as e:
            raise NumericError(f"discriminator update aborted: {e}") from e

    discriminator.requires_grad_(False)
    try:
        with Tape() as tape:
            loss = g_loss_nonsaturating(discriminator(generator(sample_latent(n, generator.latent_dim, rng))))
        g_value = _checked(loss, "g_loss")
        opt_g.step(tape.gradient(loss, g_params))
    except NumericError as e:
        raise NumericError(f"generator update aborted: {e}") from e
    finally:
        discriminator.requires_grad_(True)
    return StepResult(d_value, g_value)


def _seeds(seed: int) -> dict[str, int]:
    names = ("generator", "discriminator", "snapshot", "loop")
    states = np.random.SeedSequence(seed).generate_state(len(names))
    return {k: int(v) for k, v in zip(names, states)}


class TrainingRun:
    """Networks, optimizers and run state for one training run."""

    def __init__(self, config: TrainConfig):
        self.config = config.validate()
        seeds = _seeds(config.seed)
        self.generator = build_generator(config.latent_dim, config.resolution, config.base_channels,
                                         seed=seeds["generator"], channels=config.channels,
                                         strict_batchnorm=config.strict_batchnorm)
        self.discriminator = build_discriminator(config.resolution, config.base_channels,
                                                 seed=seeds["discriminator"], channels=config.channels,
                                                 strict_batchnorm=config.strict_batchnorm,
                                                 leaky_slope=config.leaky_slope)
        adam = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        self.opt_g = Adam(self.generator.named_parameters(), **adam)
        self.opt_d = Adam(self.discriminator.named_parameters(), **adam)
        latents = sample_latent(config.snapshot_latent_count, config.latent_dim, seeds["snapshot"]).data
        latents.flags.writeable = False
        self.state = TrainRunState(epoch=0, snapshot_latents=latents,
                                   rng=np.random.default_rng(seeds["loop"]))

    def step(self, batch: Tensor) -> StepResult:
        result = train_step(batch, self.generator, self.discriminator, self.opt_g, self.opt_d,
                            self.state.rng, self.config.d_steps)
        self.state.record(result.d_loss, result.g_loss)
        return result

    def sample(self, z) -> np.ndarray:
        """Generator images for latents ``z`` in the configured sampling mode, no tape.

        Running batch-norm statistics are left untouched in either mode.
        """
        saved = {k: b.copy() for k, b in self.generator.named_buffers().items()}
        try:
            return generate(self.generator, Tensor(z, dtype=np.float32), mode=self.config.sample_mode).data
        finally:
            for k, b in self.generator.named_buffers().items():
                b[...] = saved[k]

    def snapshot_images(self) -> np.ndarray:
        return self.sample(self.state.snapshot_latents)

    def set_epoch_lr(self, epoch: int) -> None:
        if self.config.lr_decay and self.config.epochs:
            lr = self.config.lr * (1.0 - (epoch - 1) / self.config.epochs)
            self.opt_g.lr = self.opt_d.lr = lr

    # -- persistence ------------------------------------------------------

    def checkpoint_payload(self) -> tuple[dict, dict[str, np.ndarray]]:
        s = self.state
        config = {
            "generator": self.generator.config(),
            "discriminator": self.discriminator.config(),
            "train_config": dataclasses.asdict(self.config),
            "state": {
                "epoch": s.epoch,
                "iteration": s.iteration,
                "rng": s.rng.bit_generator.state,
                "history": [list(h) for h in s.history],
                "opt_g": self.opt_g.state.hyperparameters(),
                "opt_d": self.opt_d.state.hyperparameters(),
            },
        }
        tensors: dict[str, np.ndarray] = {}
        tensors.update({f"G.{k}": v for k, v in self.generator.state_dict().items()})
        tensors.update({f"D.{k}": v for k, v in self.discriminator.state_dict().items()})
        tensors.update(self.opt_g.state_tensors("opt_g"))
        tensors.update(self.opt_d.state_tensors("opt_d"))
        tensors["snapshot_latents"] = s.snapshot_latents
        return config, tensors

    def save(self, path: Union[str, Path]) -> Path:
        config, tensors = self.checkpoint_payload()
        return write_checkpoint(path, config, tensors)

    def write_losses(self, path: Union[str, Path]) -> Path:
        lines = [LOSS_HEADER]
        lines += [f"{it},{ep},{d!r},{g!r}" for it, ep, d, g in self.state.history]
        Path(path).write_text("\n".join(lines) + "\n")
        return Path(path)


def load_run(path: Union[str, Path]) -> TrainingRun:
    """Restore a :class:`TrainingRun` exactly as it was checkpointed."""
    ckpt = read_checkpoint(path)
    try:
        config = TrainConfig.from_dict(ckpt.config["train_config"])
        st = ckpt.config["state"]
        run = TrainingRun(config)
        run.generator.load_state_dict(ckpt.section("G"))
        run.discriminator.load_state_dict(ckpt.section("D"))
        run.opt_g.load_state_tensors("opt_g", ckpt.tensors, st["opt_g"])
        run.opt_d.load_state_tensors("opt_d", ckpt.tensors, st["opt_d"])
        latents = np.array(ckpt.tensors["snapshot_latents"], dtype=np.float32)
        latents.flags.writeable = False
        run.state.snapshot_latents = latents
        run.state.epoch = st["epoch"]
        run.state.iteration = st["iteration"]
        run.state.history = [tuple(h) for h in st["history"]]
        run.state.rng.bit_generator.state = st["rng"]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: incomplete training checkpoint ({e})") from e
    return run


def load_generator(path: Union[str, Path]) -> GeneratorNet:
    ckpt = read_checkpoint(path)
    try:
        cfg = dict(ckpt.config["generator"])
        cfg.pop("kind", None)
        net = GeneratorNet(**cfg)
        net.load_state_dict(ckpt.section("G"))
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: no usable generator in checkpoint ({e})") from e
    return net.eval()


def load_discriminator(path: Union[str, Path]) -> DiscriminatorNet:
    ckpt = read_checkpoint(path)
    try:
        cfg = dict(ckpt.config["discriminator"])
        cfg.pop("kind", None)
        net = DiscriminatorNet(**cfg)
        net.load_state_dict(ckpt.section("D"))
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: no usable discriminator in checkpoint ({e})") from e
    return net.eval()


def _ensure_writable(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".ganforge-write-probe"
    probe.write_bytes(b"")
    probe.unlink()


EpochCallback = Callable[[int, TrainingRun], None]


def run_training(config: TrainConfig, dataset: DatasetHandle, out_dir: Union[str, Path],
                 on_epoch_end: Optional[EpochCallback] = None,
                 resume: Optional[Union[str, Path]] = None) -> TrainingRun:
    """Train for ``config.epochs`` epochs, writing snapshots, checkpoints and the loss log.

    Artifacts in ``out_dir``: ``snapshot_epoch{E:04}.png`` every
    ``snapshot_period_epochs`` epochs (epoch 0 before any update),
    ``checkpoint_epoch{E:04}.gfck`` at the same epochs and at the final
    epoch, and ``losses.csv``. ``on_epoch_end(epoch, run)`` is called after
    every epoch including epoch 0.
    """
    config.validate()
    out = Path(out_dir)
    _ensure_writable(out)
    if len(dataset) < config.batch_size:
        raise DatasetError(f"dataset has {len(dataset)} images, fewer than batch size {config.batch_size}")
    if dataset.resolution != config.resolution:
        raise ConfigError(f"dataset resolution {dataset.resolution} != configured {config.resolution}")

    if resume is not None:
        run = load_run(resume)
        if dataclasses.replace(run.config, epochs=config.epochs) != config:
            raise ConfigError("resumed checkpoint was trained with a different configuration")
        run.config = config
    else:
        run = TrainingRun(config)

    def snapshot(epoch: int) -> None:
        images = run.snapshot_images()
        save_image_grid(images, grid_columns(len(images)), out / f"snapshot_epoch{epoch:04d}.png")

    def checkpoint(epoch: int) -> None:
        run.save(out / f"checkpoint_epoch{epoch:04d}.gfck")
        run.write_losses(out / LOSS_CSV)

    if run.state.epoch == 0:
        snapshot(0)
        checkpoint(0)
        if on_epoch_end is not None:
            on_epoch_end(0, run)

    period = config.snapshot_period_epochs
    for epoch in range(run.state.epoch + 1, config.epochs + 1):
        run.state.epoch = epoch
        run.set_epoch_lr(epoch)
        for batch in dataset.batches(config.batch_size, run.state.rng):
            run.step(batch)
        log.info("epoch %d/%d: d_loss %.4f g_loss %.4f", epoch, config.epochs,
                 *run.state.history[-1][2:] if run.state.history else (float("nan"),) * 2)
        if epoch % period == 0:
            snapshot(epoch)
        if epoch % period == 0 or epoch == config.epochs:
            checkpoint(epoch)
        if on_epoch_end is not None:
            on_epoch_end(epoch, run)

    run.write_losses(out / LOSS_CSV)
    return run
