"""Noise-prediction training on moving-sprite videos with plain gradient descent."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tc
from .data import generate_sprite_video, random_spec
from .diffusion import NoiseSchedule, add_noise, make_schedule
from .model import Denoiser, DenoiserConfig, tokenize
from .tensor import GradTape, RngStream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1.0
    grad_clip: float | None = None
    p_uncond: float = 0.1
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    seed: int = 0
    out: str | None = None
    model: DenoiserConfig = field(default_factory=DenoiserConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = DenoiserConfig.from_dict(self.model)
        if self.steps < 1:
            raise ValueError(f"step count must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.p_uncond <= 1:
            raise ValueError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")
        schedule = {"max_timestep": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}
        if any(getattr(self.model, k) != v for k, v in schedule.items()):
            self.model = DenoiserConfig.from_dict({**self.model.to_dict(), **schedule})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class StepResult:
    loss: float
    t: np.ndarray
    eps: np.ndarray
    z_t: np.ndarray
    dropped: np.ndarray
    grad_norm: float


def null_condition_mask(n: int, stream: RngStream, p: float = 0.1) -> np.ndarray:
    """Boolean mask, True where the example trains on the null condition."""
    return stream.uniform(n) < p


def noise_prediction_loss(
    model: Denoiser, z_t: np.ndarray, ids: np.ndarray, masks: np.ndarray, t: np.ndarray, eps: np.ndarray
) -> tc.Tensor:
    """Mean squared error between ``eps`` and the model's prediction."""
    cond = model.text_embedding(ids, masks)
    diff = tc.sub(model.forward(z_t, cond, t), eps)
    return tc.mean(tc.mul(diff, diff))


def training_step(
    model: Denoiser,
    batch: list[tuple[np.ndarray, str]],
    schedule: NoiseSchedule,
    stream: RngStream,
    lr: float,
    p_uncond: float = 0.1,
    grad_clip: float | None = None,
) -> StepResult:
    """One gradient-descent update on ``batch`` of ``(latent video, prompt)``.

    Draws, in order: timesteps, noise, null-condition mask.
    """
    if not batch:
        raise ValueError("empty batch")
    z0 = np.stack([z for z, _ in batch]).astype(np.float32)
    b = len(batch)
    t = stream.integers(1, schedule.T, b)
    eps = np.array(tc.gaussian(z0.shape, stream).data)
    z_t = add_noise(z0, eps, t, schedule)
    dropped = null_condition_mask(b, stream, p_uncond)
    toks = [tokenize(p, model.config) for _, p in batch]
    ids = np.stack([i for i, _ in toks])
    masks = np.stack([m for _, m in toks]) * (~dropped)[:, None].astype(np.float32)

    params = model.parameters()
    with GradTape() as tape:
        loss = noise_prediction_loss(model, z_t, ids, masks, t, eps)
    grads = tc.backward(tape, loss, params)
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    scale = lr
    if grad_clip is not None and norm > grad_clip:
        scale = lr * grad_clip / norm
    step = np.float32(scale)
    model.params = {name: tc.parameter(p.data - step * g) for (name, p), g in zip(model.params.items(), grads)}
    return StepResult(loss.item(), t, eps, z_t, dropped, norm)


def sprite_batch(stream: RngStream, size: int, frames: int) -> list[tuple[np.ndarray, str]]:
    out = []
    for _ in range(size):
        _, latent, prompt = generate_sprite_video(random_spec(stream, frames), frames)
        out.append((latent, prompt))
    return out


def train(config: TrainConfig, progress_every: int = 0) -> tuple[Denoiser, dict]:
    """Train a fresh model; writes a checkpoint when ``config.out`` is set.

    Returns the model and a summary dict (also stored in the checkpoint).
    """
    from .io import save_checkpoint

    mc = config.model
    model = Denoiser.init(mc, seed=config.seed)
    schedule = make_schedule(config.T, config.beta_start, config.beta_end)
    data_stream = RngStream(config.seed, 1 << 32)
    noise_stream = RngStream(config.seed, 1 << 33)
    losses = []
    for step in range(config.steps):
        batch = sprite_batch(data_stream, config.batch_size, mc.frames)
        res = training_step(model, batch, schedule, noise_stream, config.lr, config.p_uncond, config.grad_clip)
        if not np.isfinite(res.loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        losses.append(res.loss)
        if progress_every and (step + 1) % progress_every == 0:
            log.info("step %d loss %.4f (last %d mean %.4f)", step + 1, res.loss, progress_every, np.mean(losses[-progress_every:]))
    window = min(100, len(losses))
    summary = {
        # the output path is left out so identical runs give identical bytes wherever they are written
        "train_config": {k: v for k, v in config.to_dict().items() if k != "out"},
        "final_loss": losses[-1],
        "first_window_mean": float(np.mean(losses[:window])),
        "last_window_mean": float(np.mean(losses[-window:])),
        "losses": [float(x) for x in losses],
    }
    model.meta = {"manifest": summary}
    if config.out:
        save_checkpoint(model, Path(config.out), summary)
    return model, summary
