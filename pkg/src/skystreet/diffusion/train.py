"""Denoiser training: cyclic lr decay, conditioning dropout, ground-frame loss.

Each step noises ONLY the ground frame of every stack, predicts eps with the
denoiser, and takes the MSE on the ground frame alone.  Point tokens are
zeroed with probability cond_dropout so the net also learns the
unconditional branch used by classifier-free guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigError, NumericError
from .net import DenoiserNet
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-5
    lr_final: float = 2.5e-6
    cycle_len: int = 3000
    cond_dropout: float = 0.10
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.lr_init <= 0 or self.lr_final <= 0:
            raise ConfigError("lr_init/lr_final must be > 0")
        if self.cycle_len < 1:
            raise ConfigError(f"cycle_len: must be >= 1, got {self.cycle_len}")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ConfigError(f"cond_dropout: must be in [0, 1], got {self.cond_dropout}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {
            "lr_init": self.lr_init,
            "lr_final": self.lr_final,
            "cycle_len": self.cycle_len,
            "cond_dropout": self.cond_dropout,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    """Linear decay lr_init -> lr_final within each cycle, then reset."""
    frac = (iteration % cfg.cycle_len) / cfg.cycle_len
    return cfg.lr_init + (cfg.lr_final - cfg.lr_init) * frac


class Trainer:
    """Owns the parameter state; single-threaded runs are bit-deterministic."""

    def __init__(self, net: DenoiserNet, schedule: NoiseSchedule, cfg: TrainConfig):
        self.net = net
        self.schedule = schedule
        self.cfg = cfg
        self.iteration = 0
        self.opt = torch.optim.Adam(net.parameters(), lr=cfg.lr_init, betas=(0.9, 0.999))
        self.gen = torch.Generator().manual_seed(cfg.seed)

    def train_step(
        self,
        stacks: torch.Tensor,  # (B, F, 4, 32, 32); frame F-1 holds the CLEAN ground latent
        cam_feats: torch.Tensor,  # (B, F, 20)
        tokens: torch.Tensor,  # (B, TOKEN_COUNT, TOKEN_DIM)
    ) -> float:
        b, fn = stacks.shape[:2]
        dtype = next(self.net.parameters()).dtype
        stacks = stacks.to(dtype)
        t = torch.randint(0, self.schedule.timesteps, (b,), generator=self.gen)
        eps = torch.randn(stacks[:, -1].shape, generator=self.gen, dtype=dtype)
        noisy = stacks.clone()
        noisy[:, -1] = self.schedule.q_sample(stacks[:, -1], t, eps)

        drop = torch.rand(b, generator=self.gen) < self.cfg.cond_dropout
        tok = tokens.to(dtype).clone()
        tok[drop] = 0.0

        mask = torch.zeros(b, fn, dtype=torch.bool)
        mask[:, -1] = True
        pred = self.net(noisy, t, cam_feats.to(dtype), tok, mask)
        loss = ((pred[:, -1] - eps) ** 2).mean()
        if not torch.isfinite(loss):
            raise NumericError(f"train_step: non-finite loss at iteration {self.iteration}")

        lr = lr_at(self.cfg, self.iteration)
        for group in self.opt.param_groups:
            group["lr"] = lr
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self.iteration += 1
        return float(loss.detach())

    def sample_batch_indices(self, dataset_size: int) -> np.ndarray:
        """Seeded with-replacement batch sampling from the bundle pool."""
        idx = torch.randint(0, dataset_size, (self.cfg.batch_size,), generator=self.gen)
        return idx.numpy()
