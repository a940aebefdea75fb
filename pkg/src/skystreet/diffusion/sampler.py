"""DDIM sampling with classifier-free guidance and a noise-scale multiplier.

Only the ground frame is sampled; aerial frames are pinned to their clean
encodings at every step.  The stochastic term sigma is the standard DDIM
sigma times noise_gamma (the paper-style "increase the noise scale"), capped
so the direction coefficient stays real.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from ..errors import ConfigError, NumericError
from .codec import LATENT_CHANNELS, LATENT_RES, decode, encode
from .net import DenoiserNet, FrameStack, camera_feature
from .schedule import NoiseSchedule
from .tokens import point_tokens


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 50
    eta: float = 0.0
    cfg_scale: float = 5.0
    noise_gamma: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps: must be >= 1, got {self.steps}")
        if self.eta < 0:
            raise ConfigError(f"eta: must be >= 0, got {self.eta}")
        if self.cfg_scale < 0:
            raise ConfigError(f"cfg_scale: must be >= 0, got {self.cfg_scale}")
        if self.noise_gamma < 1:
            raise ConfigError(f"noise_gamma: must be >= 1, got {self.noise_gamma}")

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "eta": self.eta,
            "cfg_scale": self.cfg_scale,
            "noise_gamma": self.noise_gamma,
            "seed": self.seed,
        }


def cfg_predict(
    eps_cond: torch.Tensor, eps_uncond: torch.Tensor, scale: float
) -> torch.Tensor:
    """eps_u + scale * (eps_c - eps_u); scales 0 and 1 return the inputs exactly."""
    if scale == 0.0:
        return eps_uncond
    if scale == 1.0:
        return eps_cond
    return eps_uncond + scale * (eps_cond - eps_uncond)


def ddim_step_times(timesteps: int, steps: int) -> np.ndarray:
    """Descending step schedule from T-1 to 0 (inclusive), `steps` entries."""
    if steps == 1:
        return np.array([timesteps - 1])
    return np.unique(np.round(np.linspace(timesteps - 1, 0, steps)).astype(int))[::-1]


def ddim_sample(
    eps_fn: Callable[[torch.Tensor, int], torch.Tensor],
    shape: tuple[int, ...],
    schedule: NoiseSchedule,
    cfg: SampleConfig,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
    """Generic DDIM loop over a single latent of `shape`.

    eps_fn(x_t, t) predicts the noise for the current latent.  The update to
    the next step s is
        x_s = sqrt(ab_s) * x0_hat + sqrt(1 - ab_s - sigma^2) * eps + sigma * z
    with sigma = noise_gamma * eta * sigma_ddim(t, s).  The final step uses
    ab_s = 1, so steps=1 collapses to the one-shot x0 prediction.
    """
    if generator is None:
        generator = torch.Generator().manual_seed(cfg.seed)
    x = torch.randn(shape, generator=generator, dtype=dtype)
    times = ddim_step_times(schedule.timesteps, cfg.steps)
    ab = schedule.alpha_bar
    for i, t in enumerate(times):
        ab_t = float(ab[t])
        ab_s = float(ab[times[i + 1]]) if i + 1 < len(times) else 1.0
        eps = eps_fn(x, int(t)).to(dtype)
        x0_hat = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
        sigma_ddim = np.sqrt(max((1.0 - ab_s) / (1.0 - ab_t), 0.0)) * np.sqrt(
            max(1.0 - ab_t / ab_s, 0.0)
        )
        sigma = min(cfg.noise_gamma * cfg.eta * sigma_ddim, np.sqrt(1.0 - ab_s))
        dir_coef = np.sqrt(max(1.0 - ab_s - sigma**2, 0.0))
        x = np.sqrt(ab_s) * x0_hat + dir_coef * eps
        if sigma > 0:
            x = x + sigma * torch.randn(shape, generator=generator, dtype=dtype)
        if not torch.isfinite(x).all():
            raise NumericError(f"ddim_sample: non-finite latent at step {i} (t={t})")
    return x


def sample_ground(
    net: DenoiserNet,
    ref_latents: np.ndarray,  # (N, 32, 32, 4) clean aerial encodings
    cam_feats: np.ndarray,  # (N+1, 20) aerial feats then ground feat
    tokens: np.ndarray,  # (TOKEN_COUNT, TOKEN_DIM)
    schedule: NoiseSchedule,
    cfg: SampleConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample the ground frame; returns (image uint8 256x256x3, latent)."""
    n = ref_latents.shape[0]
    dtype = next(net.parameters()).dtype
    refs = torch.from_numpy(np.asarray(ref_latents)).to(dtype)
    feats = torch.from_numpy(np.asarray(cam_feats)).to(dtype)
    toks = torch.from_numpy(np.asarray(tokens)).to(dtype)

    def eps_fn(x_g: torch.Tensor, t: int) -> torch.Tensor:
        stack = torch.cat([refs, x_g.to(dtype).unsqueeze(0)], dim=0)
        with torch.no_grad():
            eps_c = net.denoise(stack, t, feats, toks, conditioned=True)[n]
            if cfg.cfg_scale == 1.0:
                return eps_c
            eps_u = net.denoise(stack, t, feats, toks, conditioned=False)[n]
        return cfg_predict(eps_c, eps_u, cfg.cfg_scale)

    latent = ddim_sample(
        eps_fn, (LATENT_RES, LATENT_RES, LATENT_CHANNELS), schedule, cfg, dtype=torch.float64
    )
    image = np.clip(decode(latent.numpy()), 0.0, 1.0)
    return np.round(image * 255.0).astype(np.uint8), latent.numpy()


def build_stack(ref_images: np.ndarray, ground_image: np.ndarray | None) -> FrameStack:
    """Encode reference images (and the ground target if given) into a stack.

    With no ground image the ground frame is zeros (placeholder to be replaced
    by noise at sampling time).
    """
    lats = [encode(img.astype(np.float64) / 255.0 if img.dtype == np.uint8 else img) for img in ref_images]
    if ground_image is not None:
        g = ground_image.astype(np.float64) / 255.0 if ground_image.dtype == np.uint8 else ground_image
        lats.append(encode(g))
    else:
        lats.append(np.zeros((LATENT_RES, LATENT_RES, LATENT_CHANNELS)))
    return FrameStack(np.stack(lats).astype(np.float32))


def bundle_model_inputs(bundle, scene_diameter: float) -> tuple[np.ndarray, np.ndarray]:
    """(cam_feats (N+1, 20), tokens) for a ConditioningBundle."""
    feats = [camera_feature(c, scene_diameter) for c in bundle.ref_cameras]
    feats.append(camera_feature(bundle.ground_camera, scene_diameter))
    return np.stack(feats), point_tokens(bundle.point_render)
