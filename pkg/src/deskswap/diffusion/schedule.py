"""Forward noising schedule and the deterministic reverse update rule.

The schedule is the standard variance-preserving discrete-time construction:
linearly spaced betas, alpha_bars as cumulative products of (1 - beta). The
reverse update is the deterministic (eta = 0) variant: estimate the clean
latent from the predicted noise, then re-noise it analytically to the earlier
timestep. Everything here is plain float64 numpy so results are bit-stable
across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    betas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ValueError(
                f"betas must satisfy 0 < start <= end < 1, got "
                f"({self.beta_start}, {self.beta_end})"
            )
        betas = np.linspace(self.beta_start, self.beta_end, self.num_steps)
        alpha_bars = np.cumprod(1.0 - betas)
        betas.flags.writeable = False
        alpha_bars.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    def _check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.ndim > 1:
            raise ValueError(f"t must be a scalar or 1-D batch, got shape {t.shape}")
        if not np.issubdtype(t.dtype, np.integer):
            raise ValueError("t must be integer step indices")
        if (t < 0).any() or (t >= self.num_steps).any():
            raise ValueError(f"t must lie in [0, {self.num_steps}), got {t}")
        return t

    def signal_level(self, t) -> np.ndarray:
        """sqrt(alpha_bar_t), broadcastable over a 5-axis latent batch."""
        t = self._check_t(t)
        level = np.sqrt(self.alpha_bars[t])
        if level.ndim == 1:
            level = level.reshape(-1, 1, 1, 1, 1)
        return level

    def noise_level(self, t) -> np.ndarray:
        """sqrt(1 - alpha_bar_t), broadcastable like signal_level."""
        t = self._check_t(t)
        level = np.sqrt(1.0 - self.alpha_bars[t])
        if level.ndim == 1:
            level = level.reshape(-1, 1, 1, 1, 1)
        return level


def add_noise(z0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward process: z_t = sqrt(ab_t)·z0 + sqrt(1 - ab_t)·eps.

    ``t`` may be a scalar (shared step) or a length-B vector of per-sample
    steps when ``z0`` is a batched 5-axis latent.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    t_arr = np.asarray(t)
    if t_arr.ndim == 1 and z0.ndim != 5:
        raise ValueError("per-sample t requires a batched (B, C, F, H, W) latent")
    return sched.signal_level(t) * z0 + sched.noise_level(t) * eps


def predict_clean(z_t: np.ndarray, t, eps_hat: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Invert the forward process around a noise estimate: z0_hat."""
    return (np.asarray(z_t) - sched.noise_level(t) * np.asarray(eps_hat)) / sched.signal_level(t)


def reverse_step(z_t: np.ndarray, t: int, t_prev: int, eps_hat: np.ndarray,
                 sched: NoiseSchedule) -> np.ndarray:
    """One deterministic reverse update from step t to t_prev (t_prev < t).

    ``t_prev = -1`` denotes the fully denoised endpoint (alpha_bar = 1), so
    the return value is the clean estimate itself. Feeding the true forward
    noise back in reproduces the forward trajectory: the update applied to
    add_noise(z0, t, eps) with eps_hat = eps lands on add_noise(z0, t_prev, eps).
    """
    if t_prev >= t:
        raise ValueError(f"t_prev must be < t, got t={t}, t_prev={t_prev}")
    z0_hat = predict_clean(z_t, t, eps_hat, sched)
    if t_prev < 0:
        return z0_hat
    return sched.signal_level(t_prev) * z0_hat + sched.noise_level(t_prev) * np.asarray(eps_hat)


def inference_steps(sched: NoiseSchedule, num_inference_steps: int,
                    t_start: int | None = None) -> list:
    """Descending step indices for the reverse loop, evenly spread.

    ``t_start`` caps the first (noisiest) step for partial-strength sampling;
    by default the loop starts at the final schedule step.
    """
    if num_inference_steps < 1:
        raise ValueError("need at least one inference step")
    top = sched.num_steps - 1 if t_start is None else int(t_start)
    if not (0 <= top < sched.num_steps):
        raise ValueError(f"t_start must lie in [0, {sched.num_steps}), got {top}")
    count = min(num_inference_steps, top + 1)
    steps = np.unique(np.linspace(0, top, count).round().astype(int))
    return [int(s) for s in steps[::-1]]
