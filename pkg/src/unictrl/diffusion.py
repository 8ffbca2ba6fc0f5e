"""Noise schedule, forward noising, the DDIM update and classifier-free guidance.

All functions take and return float32 ``numpy`` arrays. Schedule tables and the
elementwise arithmetic run in float64; results are rounded to float32 once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule. ``alpha_bar[t]`` for ``t`` in ``0..T``, ``alpha_bar[0] == 1``."""

    T: int
    beta: np.ndarray  # beta[t - 1] is beta_t
    alpha_bar: np.ndarray

    def sigma(self, t: int, t_prev: int, eta: float) -> float:
        """DDIM noise scale for the ``t -> t_prev`` step; zero when ``eta == 0``."""
        if eta == 0:
            return 0.0
        ab_t, ab_prev = self.alpha_bar[t], self.alpha_bar[t_prev]
        return float(eta * np.sqrt((1 - ab_prev) / (1 - ab_t)) * np.sqrt(1 - ab_t / ab_prev))


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(T, beta, alpha_bar)


def timesteps(T: int, steps: int) -> list[int]:
    """Evenly spaced decreasing timesteps ``tau_0 = T > ... > tau_N = 0``."""
    if not 1 <= steps <= T:
        raise ValueError(f"need 1 <= steps <= T, got steps={steps}, T={T}")
    taus = [int(round(T - n * T / steps)) for n in range(steps + 1)]
    return taus


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 25
    eta: float = 0.0
    guidance: float = 7.5
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.guidance < 0:
            raise ValueError(f"guidance weight must be >= 0, got {self.guidance}")
        timesteps(self.T, self.steps)

    @property
    def taus(self) -> list[int]:
        return timesteps(self.T, self.steps)


def add_noise(z0: np.ndarray, eps: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """``sqrt(ab_t) z0 + sqrt(1 - ab_t) eps``; ``t`` may be an int or a per-example array."""
    if z0.shape != eps.shape:
        raise ValueError(f"z0 {z0.shape} and eps {eps.shape} differ in shape")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > s.T):
        raise ValueError(f"timestep out of range 0..{s.T}: {t}")
    ab = s.alpha_bar[t_arr]
    a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
    if t_arr.ndim:
        bshape = (-1,) + (1,) * (z0.ndim - 1)
        a, b = a.reshape(bshape), b.reshape(bshape)
    return (a * z0.astype(np.float64) + b * eps.astype(np.float64)).astype(np.float32)


def ddim_step(
    z_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    s: NoiseSchedule,
    noise: np.ndarray | None = None,
    eta: float = 0.0,
) -> np.ndarray:
    """One DDIM update ``z_t -> z_{t_prev}``.

    ``z0_hat = (z_t - sqrt(1-ab_t) eps_hat) / sqrt(ab_t)``, then
    ``sqrt(ab_prev) z0_hat + sqrt(1 - ab_prev - sigma^2) eps_hat + sigma noise``.
    ``t == t_prev`` is accepted as the degenerate fixed point.
    """
    if t < t_prev:
        raise ValueError(f"ddim_step needs t >= t_prev, got {t} -> {t_prev}")
    if not (0 <= t_prev and t <= s.T):
        raise ValueError(f"timesteps out of range 0..{s.T}: {t} -> {t_prev}")
    sigma = s.sigma(t, t_prev, eta) if t != t_prev else 0.0
    ab_t, ab_prev = s.alpha_bar[t], s.alpha_bar[t_prev]
    dir_var = 1.0 - ab_prev - sigma * sigma
    if dir_var < -1e-12:
        raise ValueError(f"invalid sigma {sigma}: 1 - ab_prev - sigma^2 = {dir_var} < 0")
    if sigma > 0 and noise is None:
        raise ValueError("noise is required when sigma > 0")
    z = z_t.astype(np.float64)
    e = eps_hat.astype(np.float64)
    z0_hat = (z - np.sqrt(1.0 - ab_t) * e) / np.sqrt(ab_t)
    out = np.sqrt(ab_prev) * z0_hat + np.sqrt(max(dir_var, 0.0)) * e
    if sigma > 0:
        out = out + sigma * noise.astype(np.float64)
    return out.astype(np.float32)


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance ``eps_uncond + w (eps_cond - eps_uncond)``.

    ``w == 1`` and ``w == 0`` return the conditional / unconditional input
    exactly.
    """
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("guidance inputs differ in shape")
    if w == 1:
        return eps_cond.copy()
    if w == 0:
        return eps_uncond.copy()
    u = eps_uncond.astype(np.float64)
    return (u + w * (eps_cond.astype(np.float64) - u)).astype(np.float32)
