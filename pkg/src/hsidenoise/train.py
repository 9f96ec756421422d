"""MSE training loop: Adam, staged learning-rate decay, seeded patch
sampling with dihedral augmentation, and a mixed-noise curriculum.

Determinism contract: one np.random.default_rng(seed) stream drives the
sampler (cube index, top, left, rotation, flip, in that order per
sample) and a second stream at seed+1 drives the noise curriculum (case
index, then a 63-bit noise seed, per sample). Everything downstream is
pure, so a (config, seed, data) triple fixes the whole trajectory.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .cubeio import save_checkpoint
from .errors import ConfigError, DataError, NumericError
from .metrics import psnr
from .model import DenoiserModel
from .noise import NOISE_CASES, NoiseSpec, corrupt
from .tensor import Tensor

CURRICULUM_CASES = NOISE_CASES[:4]    # mixture is reserved for evaluation


@dataclass
class TrainConfig:
    lr_init: float = 3e-4
    lr_decay_factor: float = 5.0
    lr_decay_every: int = 20
    epochs: int = 100
    steps_per_epoch: int = 100
    batch_size: int = 8
    patch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr_init <= 0.0:
            raise ConfigError("lr_init must be positive")
        if self.lr_decay_factor < 1.0:
            raise ConfigError("lr_decay_factor must be >= 1 (non-increasing lr)")
        if self.lr_decay_every < 1 or self.epochs < 1:
            raise ConfigError("lr_decay_every and epochs must be >= 1")
        if self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ConfigError("steps_per_epoch and batch_size must be >= 1")
        if self.patch_size < 2:
            raise ConfigError("patch_size must be >= 2")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ConfigError("epoch must be >= 0")
        return self.lr_init / self.lr_decay_factor ** (epoch // self.lr_decay_every)

    @classmethod
    def desk_profile(cls, seed: int = 0) -> "TrainConfig":
        """CPU-scale schedule: 32x32 patches, short staged run."""
        return cls(lr_init=2e-3, lr_decay_every=4, epochs=10,
                   steps_per_epoch=120, patch_size=32, seed=seed)


class Adam:
    """Bias-corrected Adam over named parameter tensors."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for (name, p), m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name} "
                                   f"at adam step {self.t}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PatchSampler:
    """Random crops plus exact dihedral augmentation from source cubes."""

    def __init__(self, cubes, patch_size: int, seed: int = 0,
                 rotate: bool = True, flip: bool = True):
        if not cubes:
            raise DataError("PatchSampler needs at least one source cube")
        self.cubes = [np.asarray(c, dtype=np.float32) for c in cubes]
        bands = self.cubes[0].shape[0]
        for c in self.cubes:
            if c.ndim != 3 or c.shape[0] != bands:
                raise DataError("source cubes must share a [B, H, W] layout")
            if c.shape[1] < patch_size or c.shape[2] < patch_size:
                raise DataError(f"cube {c.shape} smaller than patch "
                                f"{patch_size}x{patch_size}")
        self.patch_size = patch_size
        self.rotate = rotate
        self.flip = flip
        self.rng = np.random.default_rng(seed)

    def sample(self) -> np.ndarray:
        p = self.patch_size
        cube = self.cubes[int(self.rng.integers(len(self.cubes)))]
        top = int(self.rng.integers(cube.shape[1] - p + 1))
        left = int(self.rng.integers(cube.shape[2] - p + 1))
        patch = cube[:, top:top + p, left:left + p]
        if self.rotate:
            patch = np.rot90(patch, int(self.rng.integers(4)), axes=(1, 2))
        if self.flip and int(self.rng.integers(2)):
            patch = patch[:, :, ::-1]
        return np.ascontiguousarray(patch)


@dataclass
class TrainLog:
    """Per-epoch rows: (epoch, cumulative step, mean loss, lr, val psnr)."""

    rows: list = field(default_factory=list)

    def append(self, epoch, step, loss, lr, val_psnr):
        self.rows.append((epoch, step, loss, lr, val_psnr))

    def to_csv(self) -> str:
        lines = ["epoch,step,loss,lr,val_psnr"]
        for epoch, step, loss, lr, val in self.rows:
            lines.append(f"{epoch},{step},{loss:.8f},{lr:.8g},{val:.4f}")
        return "\n".join(lines) + "\n"


def mse_loss(model: DenoiserModel, noisy: np.ndarray, clean: np.ndarray,
             weight: float = 1.0) -> Tensor:
    diff = T.sub(model.forward(Tensor(noisy)), Tensor(clean))
    out = T.mul(diff, diff).mean()
    return T.scale(out, weight) if weight != 1.0 else out


def make_validation_pairs(cubes, seed: int, case: str = "mixture",
                          base: NoiseSpec | None = None):
    """Corrupt each cube once, deterministically, for validation."""
    proto = NoiseSpec(case) if base is None else base
    return [(corrupt(c, replace(proto, case=case, seed=seed + i)), c)
            for i, c in enumerate(cubes)]


def validation_psnr(model: DenoiserModel, pairs) -> float:
    scores = [psnr(clean, model.forward(Tensor(noisy)).data)
              for noisy, clean in pairs]
    return float(np.mean(scores))


def train(model: DenoiserModel, cubes, cfg: TrainConfig, val_pairs=None,
          out_dir=None, quiet: bool = True,
          base_noise: NoiseSpec | None = None) -> TrainLog:
    """Fit the model on noisy/clean patch pairs synthesized on the fly.

    When val_pairs is None, a seeded permutation holds out 10% of the
    cubes (at least one, never all) and corrupts them with mixture noise
    for validation. base_noise, when given, supplies the strength ranges
    for curriculum and validation corruption (its case/seed fields are
    overridden per draw). Returns the per-epoch log; per-epoch
    checkpoints and the CSV log land in out_dir when given. Non-finite
    losses abort via NumericError, leaving the last epoch checkpoint in
    place.
    """
    cubes = list(cubes)
    if not cubes:
        raise DataError("train: no source cubes")
    proto = NoiseSpec(CURRICULUM_CASES[0]) if base_noise is None else base_noise
    if val_pairs is None:
        order = np.random.default_rng(cfg.seed).permutation(len(cubes))
        n_val = max(1, len(cubes) // 10) if len(cubes) > 1 else 0
        val_idx = set(order[:n_val].tolist())
        val_pairs = make_validation_pairs(
            [cubes[i] for i in sorted(val_idx)], seed=cfg.seed * 1000 + 1,
            base=base_noise)
        cubes = [c for i, c in enumerate(cubes) if i not in val_idx]
        if not cubes:
            raise DataError("train: validation split consumed every cube")
    sampler = PatchSampler(cubes, cfg.patch_size, seed=cfg.seed)
    noise_rng = np.random.default_rng(cfg.seed + 1)
    adam = Adam(model.parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    log = TrainLog()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        epoch_loss = 0.0
        t0 = time.perf_counter()
        for _ in range(cfg.steps_per_epoch):
            model.zero_grads()
            batch_loss = 0.0
            for _ in range(cfg.batch_size):
                clean = sampler.sample()
                case = CURRICULUM_CASES[int(noise_rng.integers(4))]
                spec = replace(proto, case=case,
                               seed=int(noise_rng.integers(2 ** 63)))
                loss = mse_loss(model, corrupt(clean, spec), clean,
                                weight=1.0 / cfg.batch_size)
                loss.backward()
                batch_loss += loss.item()
            if not np.isfinite(batch_loss):
                raise NumericError(f"non-finite loss at step {step}")
            adam.step(lr)
            epoch_loss += batch_loss
            step += 1
        mean_loss = epoch_loss / cfg.steps_per_epoch
        val = validation_psnr(model, val_pairs) if val_pairs else float("nan")
        log.append(epoch, step, mean_loss, lr, val)
        if out_dir is not None:
            save_checkpoint(os.path.join(out_dir, f"epoch{epoch:03d}.hsdm"), model)
            with open(os.path.join(out_dir, "train_log.csv"), "w",
                      encoding="utf-8") as fh:
                fh.write(log.to_csv())
        if not quiet:
            dt = time.perf_counter() - t0
            print(f"epoch {epoch:3d}  loss {mean_loss:.6f}  lr {lr:.2e}  "
                  f"val {val:.2f} dB  ({dt:.1f}s)")
    return log


def overfit_pair(model: DenoiserModel, noisy: np.ndarray, clean: np.ndarray,
                 steps: int, lr: float = 1e-3) -> list:
    """Memorize one noisy->clean pair; returns the loss trajectory."""
    adam = Adam(model.parameters())
    losses = []
    for _ in range(steps):
        model.zero_grads()
        loss = mse_loss(model, noisy, clean)
        loss.backward()
        adam.step(lr)
        losses.append(loss.item())
    return losses
