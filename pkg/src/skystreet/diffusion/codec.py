"""Fixed (non-learned) latent codec standing in for a pretrained autoencoder.

encode: 256x256x3 -> 32x32x4.  Channels 0-2 are 8x8 area averages of RGB;
channel 3 is the per-patch luminance standard deviation (a contrast summary).
decode: 32x32x4 -> 256x256x3 by bilinear upsampling plus a per-block mean
correction, which makes block averaging an exact right inverse: the RGB
channels of encode(decode(z)) reproduce z to float precision.  The contrast
channel is a lossy summary and is not reconstructed.

All math runs in float64; images are float arrays in [0, 1].
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError

IMAGE_RES = 256
LATENT_RES = 32
LATENT_CHANNELS = 4
PATCH = IMAGE_RES // LATENT_RES  # 8

_LUMA = np.array([0.2126, 0.7152, 0.0722])


def _block_mean(img: np.ndarray) -> np.ndarray:
    """(256, 256, C) -> (32, 32, C) area average over 8x8 patches."""
    h, w, c = img.shape
    return img.reshape(LATENT_RES, PATCH, LATENT_RES, PATCH, c).mean(axis=(1, 3))


def encode(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (IMAGE_RES, IMAGE_RES, 3):
        raise DataError(f"encode: expected ({IMAGE_RES}, {IMAGE_RES}, 3), got {image.shape}")
    rgb = _block_mean(image)
    lum = image @ _LUMA
    contrast = lum.reshape(LATENT_RES, PATCH, LATENT_RES, PATCH).std(axis=(1, 3))
    return np.concatenate([rgb, contrast[..., None]], axis=-1)


def _bilinear_up(latent_rgb: np.ndarray) -> np.ndarray:
    """(32, 32, 3) -> (256, 256, 3), half-pixel-aligned sample centers."""
    # Output pixel u maps to source coordinate (u + 0.5) / 8 - 0.5.
    coords = (np.arange(IMAGE_RES) + 0.5) / PATCH - 0.5
    i0 = np.clip(np.floor(coords).astype(int), 0, LATENT_RES - 1)
    i1 = np.clip(i0 + 1, 0, LATENT_RES - 1)
    f = np.clip(coords - np.floor(coords), 0.0, 1.0)
    f = np.where(coords < 0, 0.0, np.where(coords > LATENT_RES - 1, 1.0, f))
    rows = latent_rgb[i0] * (1 - f)[:, None, None] + latent_rgb[i1] * f[:, None, None]
    out = rows[:, i0] * (1 - f)[None, :, None] + rows[:, i1] * f[None, :, None]
    return out


def decode(latent: np.ndarray) -> np.ndarray:
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (LATENT_RES, LATENT_RES, LATENT_CHANNELS):
        raise DataError(
            f"decode: expected ({LATENT_RES}, {LATENT_RES}, {LATENT_CHANNELS}), got {latent.shape}"
        )
    rgb = latent[..., :3]
    base = _bilinear_up(rgb)
    # Bilinear upsampling does not preserve 8x8 block means; add back the
    # per-block residual so block averaging inverts the decode exactly.
    residual = rgb - _block_mean(base)
    return base + np.repeat(np.repeat(residual, PATCH, axis=0), PATCH, axis=1)
