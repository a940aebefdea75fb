"""Toy multi-view latent diffusion: fixed codec, schedule, denoiser, sampler."""

from .codec import IMAGE_RES, LATENT_CHANNELS, LATENT_RES, decode, encode
from .net import DenoiserConfig, DenoiserNet, camera_feature
from .sampler import SampleConfig, cfg_predict, ddim_sample, sample_ground
from .schedule import NoiseSchedule
from .tokens import TOKEN_COUNT, TOKEN_DIM, point_tokens
from .train import TrainConfig, Trainer, lr_at

__all__ = [
    "IMAGE_RES",
    "LATENT_CHANNELS",
    "LATENT_RES",
    "decode",
    "encode",
    "DenoiserConfig",
    "DenoiserNet",
    "camera_feature",
    "SampleConfig",
    "cfg_predict",
    "ddim_sample",
    "sample_ground",
    "NoiseSchedule",
    "TOKEN_COUNT",
    "TOKEN_DIM",
    "point_tokens",
    "TrainConfig",
    "Trainer",
    "lr_at",
]
