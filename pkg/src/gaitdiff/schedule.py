"""Linear-beta noise schedule, forward noising and sinusoidal step embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_STEPS = 60
DEFAULT_BETA_START = 1e-4
# 0.02 (the 1000-step convention) leaves alpha_bar_T ~ 0.54 at 60 steps, so the
# N(0, I) prior would not match the terminal forward marginal.
DEFAULT_BETA_END = 0.2
EMBED_DIM = 128


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays are stored 0-based: ``betas[t - 1]`` is beta_t for t = 1..T."""

    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def _check(self, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"diffusion step t={t} outside 1..{self.T}")

    def beta(self, t):
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t):
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t):
        """alpha_bar_t, with alpha_bar_0 = 1."""
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t - 1])

    def params(self):
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def linear_schedule(T=DEFAULT_STEPS, beta_start=DEFAULT_BETA_START, beta_end=DEFAULT_BETA_END):
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(int(T), float(beta_start), float(beta_end),
                         betas, alphas, np.cumprod(alphas))


def forward_noise(a0, t, eps, s: NoiseSchedule):
    """Noised sample sqrt(ab_t) * a0 + sqrt(1 - ab_t) * eps.

    ``t`` may be a scalar step or an integer array with one step per batch row.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if a0.shape != eps.shape:
        raise ValueError(f"a0 shape {a0.shape} != eps shape {eps.shape}")
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        s._check(int(t_arr))
        ab = s.alpha_bar(int(t_arr))
        return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps
    if t_arr.min() < 1 or t_arr.max() > s.T:
        raise ValueError(f"diffusion steps must lie in 1..{s.T}")
    ab = s.alpha_bars[t_arr - 1][:, None]
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def sinusoidal_embedding(t, dim=EMBED_DIM):
    """[sin | cos] embedding, frequencies 10000^(-2i/dim) for i < dim/2.

    Scalar ``t`` gives shape ``(dim,)``; an array of steps gives ``(len(t), dim)``.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("diffusion step must be >= 0")
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    angles = t_arr[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
