"""Splat optimization: loss, per-group Adam, quaternion renormalization.

The loss mixes L1, SSIM, and the perceptual proxy:
    (1 - l_ssim) * L1 + l_ssim * (1 - SSIM) + l_perc * proxy.
In this loss path the SSIM window shrinks to the image side when the image
is smaller than 11 pixels (the metrics-module contract keeps the strict
minimum-size precondition).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigError, DataError, NumericError
from ..geom import Camera
from ..metrics import SSIM_WINDOW, perceptual_proxy_torch, ssim_torch
from .model import GaussianModel
from .render import render_gaussians


@dataclass(frozen=True)
class LossWeights:
    lambda_ssim: float = 0.2
    lambda_perc: float = 0.1

    def __post_init__(self):
        if self.lambda_ssim < 0 or self.lambda_perc < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass(frozen=True)
class LrConfig:
    position: float = 2e-4
    log_scale: float = 5e-3
    rotation: float = 1e-3
    opacity: float = 5e-2
    sh: float = 2.5e-3

    def for_param(self, name: str) -> float:
        return {
            "positions": self.position,
            "log_scales": self.log_scale,
            "rotations": self.rotation,
            "opacity_logits": self.opacity,
            "sh_dc": self.sh,
            "sh_rest": self.sh,
        }[name]


def reconstruction_loss(render: torch.Tensor, target: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    if render.shape != target.shape:
        raise DataError(f"reconstruction_loss: shape mismatch {tuple(render.shape)} vs {tuple(target.shape)}")
    l1 = (render - target).abs().mean()
    window = min(SSIM_WINDOW, render.shape[0], render.shape[1])
    ssim_val = ssim_torch(render, target, window=window)
    loss = (1.0 - weights.lambda_ssim) * l1 + weights.lambda_ssim * (1.0 - ssim_val)
    if weights.lambda_perc > 0:
        loss = loss + weights.lambda_perc * perceptual_proxy_torch(render, target)
    return loss


def _to_target_tensor(img: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    return torch.from_numpy(np.ascontiguousarray(img, dtype=np.float64)).to(dtype)


def optimize(
    model: GaussianModel,
    views: list[tuple[Camera, np.ndarray]],
    iters: int,
    lr: LrConfig = LrConfig(),
    weights: LossWeights = LossWeights(),
    background: tuple[float, float, float] = (0.0, 0.0, 0.0),
    seed: int = 0,
) -> list[float]:
    """Adam over trainable parameter groups; returns the per-step loss history.

    Frozen parameters (skybox geometry) are never touched; quaternions are
    renormalized after every step.  View order is drawn from a seeded
    generator so runs are reproducible.
    """
    if not views:
        raise DataError("optimize: no target views")
    targets = [(cam, _to_target_tensor(img, model.dtype)) for cam, img in views]
    for cam, t in targets:
        if t.shape != (cam.intrinsics.height, cam.intrinsics.width, 3):
            raise DataError(f"optimize: target shape {tuple(t.shape)} does not match camera size")

    param_groups = []
    quat_params = []
    for group in model.groups().values():
        for name, tensor in group.trainable_parameters().items():
            param_groups.append({"params": [tensor], "lr": lr.for_param(name)})
            if name == "rotations":
                quat_params.append(tensor)
    if not param_groups:
        raise DataError("optimize: model has no trainable parameters")
    opt = torch.optim.Adam(param_groups, betas=(0.9, 0.999))
    gen = torch.Generator().manual_seed(seed)

    history: list[float] = []
    for it in range(iters):
        cam, target = targets[int(torch.randint(0, len(targets), (1,), generator=gen))]
        image, _ = render_gaussians(model, cam, background)
        loss = reconstruction_loss(image, target, weights)
        if not torch.isfinite(loss):
            raise NumericError(f"optimize: non-finite loss at iteration {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            for q in quat_params:
                q /= q.norm(dim=1, keepdim=True).clamp(min=1e-12)
        history.append(float(loss.detach()))
    return history
