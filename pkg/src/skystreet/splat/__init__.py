"""Gaussian-splatting-lite: init, skybox, differentiable renderer, optimizer."""

from .model import (
    SH_C0,
    SH_C1,
    GaussianGroup,
    GaussianModel,
    init_from_cloud,
    make_skybox,
)
from .optimize import LossWeights, LrConfig, optimize, reconstruction_loss
from .render import render_gaussians

__all__ = [
    "SH_C0",
    "SH_C1",
    "GaussianGroup",
    "GaussianModel",
    "init_from_cloud",
    "make_skybox",
    "LossWeights",
    "LrConfig",
    "optimize",
    "reconstruction_loss",
    "render_gaussians",
]
