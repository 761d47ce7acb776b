"""Two-phase L2 training of the GRCNN denoiser with Adam.

Phase one uses a fixed noise level; phase two draws a level uniformly per
patch and feeds the matching noise-level map. Training mutates the model in
place (single writer); everything is a deterministic function of ``cfg.seed``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..degrade import Impulse, NonIid, Stripe, add_noise
from .model import GrcnnModel

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 1.0  # multiplicative, applied after every epoch
    epochs_fixed: int = 3
    epochs_random: int = 2
    batch_size: int = 4
    patch_size: tuple[int, int, int] = (8, 32, 32)  # (bands, rows, cols)
    sigma_fixed: float = 50.0
    sigma_range: tuple[float, float] = (0.0, 50.0)
    complex_noise: bool = False
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs_fixed < 0 or self.epochs_random < 0 or self.epochs_fixed + self.epochs_random == 0:
            raise ValueError("need at least one epoch")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads[k].astype(p.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


@dataclass
class TrainResult:
    model: GrcnnModel
    losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


def _crop(rng, cube: np.ndarray, size, augment: bool) -> np.ndarray:
    B, M, N = cube.shape
    b, m, n = size
    if b > B or m > M or n > N:
        raise ValueError(f"patch size {size} exceeds cube {cube.shape}")
    i = int(rng.integers(0, B - b + 1))
    j = int(rng.integers(0, M - m + 1))
    k = int(rng.integers(0, N - n + 1))
    p = cube[i : i + b, j : j + m, k : k + n]
    if augment:
        if rng.random() < 0.5:
            p = p[:, ::-1]
        if rng.random() < 0.5:
            p = p[:, :, ::-1]
        if m == n and rng.random() < 0.5:
            p = p.transpose(0, 2, 1)
    return np.ascontiguousarray(p)


def _complex_noise(rng, clean):
    extra = [None, Stripe(), Impulse()][int(rng.integers(0, 3))]
    models = [NonIid(70.0)] + ([extra] if extra is not None else [])
    return add_noise(clean, models, rng)


def l2_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient ``2 (pred - target) / n``."""
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def train(model: GrcnnModel, dataset, cfg: TrainConfig | None = None) -> TrainResult:
    cfg = cfg or TrainConfig()
    data = [np.asarray(c, dtype=np.float64) for c in dataset]
    if not data:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    params = dict(model.named_parameters())
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    result = TrainResult(model)
    phases = [("fixed", cfg.epochs_fixed), ("random", cfg.epochs_random)]
    epoch = 0
    for phase, n_epochs in phases:
        for _ in range(n_epochs):
            order = rng.permutation(len(data))
            batch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                clean = np.stack([_crop(rng, data[i], cfg.patch_size, cfg.augment) for i in idx])
                if phase == "fixed":
                    sig = np.full(len(idx), float(cfg.sigma_fixed))
                else:
                    sig = rng.uniform(*cfg.sigma_range, size=len(idx))
                if not model.noise_map and cfg.complex_noise and phase == "random":
                    noisy = np.stack([_complex_noise(rng, c) for c in clean])
                else:
                    noisy = clean + rng.standard_normal(clean.shape) * (sig / 255.0)[:, None, None, None]
                out = model.forward(noisy[:, None], sig if model.noise_map else None, keep_cache=True)
                loss, grad = l2_loss(out, clean[:, None].astype(model.dtype))
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, step {len(result.losses)}"
                    )
                grads = model.backward(grad)
                opt.step(grads)
                model.touch()
                result.losses.append(loss)
                batch_losses.append(loss)
            result.epoch_losses.append(float(np.mean(batch_losses)))
            log.info("epoch %d (%s) loss %.6f lr %.2e", epoch, phase, result.epoch_losses[-1], opt.lr)
            opt.lr *= cfg.lr_decay
            epoch += 1
    return result


def toy_config(**overrides) -> TrainConfig:
    """Desk-scale settings for :func:`train_toy`: 16x16 patches, 3 + 15 epochs."""
    base = dict(lr=2e-3, lr_decay=0.95, epochs_fixed=3, epochs_random=15,
                batch_size=4, patch_size=(8, 16, 16))
    base.update(overrides)
    return TrainConfig(**base)


def train_toy(
    widths=(8, 16, 32),
    cube=(8, 32, 32),
    count: int = 200,
    noise_map: bool = True,
    seed: int = 0,
    cfg: TrainConfig | None = None,
) -> TrainResult:
    """Train a fresh model on ``count`` synthetic cubes of shape ``cube`` (B, M, N).

    The data stream uses ``seed + 1`` so that it stays independent of the
    weight initialization, which uses ``seed``.
    """
    from ..synthetic import synthetic_dataset

    B, M, N = cube
    data = synthetic_dataset(count, M, N, B, seed=seed + 1)
    model = GrcnnModel(widths, noise_map=noise_map, seed=seed, dtype=np.float32)
    cfg = cfg or toy_config(seed=seed, complex_noise=not noise_map)
    return train(model, data, cfg)
