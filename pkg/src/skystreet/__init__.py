"""Synthetic aerial-to-ground pipeline: procedural city capture, point-cloud
conditioning, toy multi-view latent diffusion, and splat reconstruction."""

__version__ = "0.1.0"
