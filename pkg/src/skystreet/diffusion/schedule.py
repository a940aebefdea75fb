"""DDPM-style noise schedule: linear betas, cumulative alpha products."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    betas: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.timesteps < 1:
            raise ConfigError(f"timesteps: must be >= 1, got {self.timesteps}")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ConfigError(
                f"betas: need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}"
            )
        betas = np.linspace(self.beta_start, self.beta_end, self.timesteps, dtype=np.float64)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - betas))

    def check_t(self, t: int) -> None:
        if not 0 <= t < self.timesteps:
            raise ConfigError(f"t: must be in [0, {self.timesteps}), got {t}")

    def q_sample(self, x0: torch.Tensor, t: int | torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        """Forward process: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
        if torch.is_tensor(t):
            if bool((t < 0).any()) or bool((t >= self.timesteps).any()):
                raise ConfigError(f"t: must be in [0, {self.timesteps})")
            ab = torch.from_numpy(self.alpha_bar).to(x0.dtype)[t]
            while ab.ndim < x0.ndim:
                ab = ab.unsqueeze(-1)
        else:
            self.check_t(int(t))
            ab = torch.tensor(self.alpha_bar[int(t)], dtype=x0.dtype)
        return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
