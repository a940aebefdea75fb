"""Fixed point-render tokenizer standing in for a pretrained image encoder.

The 256x256x3 point render is cut into 16x16 patches (256 patches of 768
numbers), projected by a fixed seeded orthonormal 768->128 matrix, and each
token is unit-normalized.  A small learned adapter lives inside the denoiser
(see net.DenoiserNet); everything here is deterministic and parameter-free.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .codec import IMAGE_RES

TOKEN_SEED = 61452
TOKEN_PATCH = 16
TOKEN_GRID = IMAGE_RES // TOKEN_PATCH  # 16
TOKEN_COUNT = TOKEN_GRID * TOKEN_GRID  # 256
TOKEN_DIM = 128
_PATCH_DIM = TOKEN_PATCH * TOKEN_PATCH * 3  # 768

_projection_cache: np.ndarray | None = None


def token_projection() -> np.ndarray:
    """The fixed orthonormal (TOKEN_DIM, 768) projection; rows orthonormal."""
    global _projection_cache
    if _projection_cache is None:
        rng = np.random.default_rng(TOKEN_SEED)
        a = rng.standard_normal((_PATCH_DIM, _PATCH_DIM))
        q, r = np.linalg.qr(a)
        # Fix the QR sign convention so the matrix is reproducible across
        # LAPACK builds.
        q = q * np.sign(np.diag(r))
        _projection_cache = q[:, :TOKEN_DIM].T.copy()
    return _projection_cache


def point_tokens(point_render: np.ndarray) -> np.ndarray:
    """(256, 256, 3) image in [0, 1] -> (256, 128) unit-norm tokens."""
    img = np.asarray(point_render)
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    else:
        img = img.astype(np.float64)
    if img.shape != (IMAGE_RES, IMAGE_RES, 3):
        raise DataError(f"point_tokens: expected ({IMAGE_RES}, {IMAGE_RES}, 3), got {img.shape}")
    patches = (
        img.reshape(TOKEN_GRID, TOKEN_PATCH, TOKEN_GRID, TOKEN_PATCH, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(TOKEN_COUNT, _PATCH_DIM)
    )
    tokens = patches @ token_projection().T
    norms = np.linalg.norm(tokens, axis=1, keepdims=True)
    return tokens / np.maximum(norms, 1e-12)
