"""Image metrics: PSNR, SSIM, a deterministic perceptual proxy, and the
evaluation harness that averages per-split results.

SSIM and the proxy have differentiable torch cores (reused by the
reconstruction loss); the public functions accept numpy arrays or uint8
images and return floats.  The proxy replaces a learned perceptual metric
with a fixed seeded random 3x3 filter bank applied over a 3-level Gaussian
pyramid — deterministic, dependency-free, and robust to small per-pixel
misalignment.  Reports label it "perc_proxy".
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

PROXY_SEED = 90125
PROXY_FILTERS = 16
PROXY_LEVELS = 3

_proxy_bank_cache: torch.Tensor | None = None


def _to_float01(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for images in [0, 1]; identical images cap at 99 dB."""
    a, b = _to_float01(a), _to_float01(b)
    if a.shape != b.shape:
        raise DataError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * float(np.log10(1.0 / mse)), PSNR_CAP_DB)


def _gaussian_kernel1d(window: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    x = torch.arange(window, dtype=dtype) - (window - 1) / 2.0
    k = torch.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def ssim_torch(a: torch.Tensor, b: torch.Tensor, window: int = SSIM_WINDOW) -> torch.Tensor:
    """Channel-averaged SSIM over valid windows; a, b are (H, W, C) in [0, 1]."""
    if a.shape != b.shape:
        raise DataError(f"ssim: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    h, w, c = a.shape
    if min(h, w) < window:
        raise DataError(f"ssim: image {h}x{w} smaller than window {window}")
    k1 = _gaussian_kernel1d(window, SSIM_SIGMA, a.dtype)

    def blur(x: torch.Tensor) -> torch.Tensor:
        x = x.permute(2, 0, 1).unsqueeze(1)  # (C, 1, H, W)
        x = F.conv2d(x, k1.view(1, 1, window, 1))
        x = F.conv2d(x, k1.view(1, 1, 1, window))
        return x

    mu_a, mu_b = blur(a), blur(b)
    s_aa = blur(a * a) - mu_a * mu_a
    s_bb = blur(b * b) - mu_b * mu_b
    s_ab = blur(a * b) - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    return (num / den).mean()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    at = torch.from_numpy(np.ascontiguousarray(_to_float01(a)))
    bt = torch.from_numpy(np.ascontiguousarray(_to_float01(b)))
    if at.ndim == 2:
        at, bt = at.unsqueeze(-1), bt.unsqueeze(-1)
    with torch.no_grad():
        return float(ssim_torch(at, bt))


def _proxy_bank(dtype: torch.dtype) -> torch.Tensor:
    global _proxy_bank_cache
    if _proxy_bank_cache is None:
        rng = np.random.default_rng(PROXY_SEED)
        bank = rng.standard_normal((PROXY_FILTERS, 3, 3, 3)) / np.sqrt(27.0)
        _proxy_bank_cache = torch.from_numpy(bank)
    return _proxy_bank_cache.to(dtype)


def _binomial_down(x: torch.Tensor) -> torch.Tensor:
    """Blur with a 5-tap binomial kernel (replicate edges), then decimate by 2."""
    k = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=x.dtype) / 16.0
    c = x.shape[1]
    x = F.pad(x, (2, 2, 2, 2), mode="replicate")
    x = F.conv2d(x, k.view(1, 1, 5, 1).expand(c, 1, 5, 1), groups=c)
    x = F.conv2d(x, k.view(1, 1, 1, 5).expand(c, 1, 1, 5), groups=c)
    return x[:, :, ::2, ::2]


def _proxy_features(x: torch.Tensor) -> torch.Tensor:
    bank = _proxy_bank(x.dtype)
    x = F.pad(x, (1, 1, 1, 1), mode="replicate")
    f = F.conv2d(x, bank)
    rms = torch.sqrt((f**2).mean(dim=(2, 3), keepdim=True)).clamp(min=1e-8)
    return f / rms


def perceptual_proxy_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Feature-space distance; a, b are (H, W, 3) in [0, 1]."""
    if a.shape != b.shape:
        raise DataError(f"perceptual_proxy: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    xa = a.permute(2, 0, 1).unsqueeze(0)
    xb = b.permute(2, 0, 1).unsqueeze(0)
    total = xa.new_zeros(())
    for _ in range(PROXY_LEVELS):
        fa, fb = _proxy_features(xa), _proxy_features(xb)
        total = total + ((fa - fb) ** 2).mean()
        xa, xb = _binomial_down(xa), _binomial_down(xb)
    return total / PROXY_LEVELS


def perceptual_proxy(a: np.ndarray, b: np.ndarray) -> float:
    at = torch.from_numpy(np.ascontiguousarray(_to_float01(a)))
    bt = torch.from_numpy(np.ascontiguousarray(_to_float01(b)))
    with torch.no_grad():
        return float(perceptual_proxy_torch(at, bt))


REPORT_SCHEMA_VERSION = 1


def evaluate_set(
    renders: list[np.ndarray],
    targets: list[np.ndarray],
    splits: list[str],
    view_ids: list[str] | None = None,
) -> dict:
    """Per-view PSNR/SSIM/proxy plus per-split means and the overall mean.

    splits assigns each view to "aerial" or "ground"; the overall mean is the
    count-weighted mean over views (equivalently of split means).
    """
    if not (len(renders) == len(targets) == len(splits)):
        raise DataError(
            f"evaluate_set: length mismatch renders={len(renders)} targets={len(targets)} splits={len(splits)}"
        )
    if view_ids is None:
        view_ids = [f"view{i:04d}" for i in range(len(renders))]
    views = []
    for vid, r, t, sp in zip(view_ids, renders, targets, splits):
        if sp not in ("aerial", "ground"):
            raise DataError(f"evaluate_set: unknown split {sp!r}")
        views.append(
            {
                "view_id": vid,
                "split": sp,
                "psnr": psnr(r, t),
                "ssim": ssim(r, t),
                "perc_proxy": perceptual_proxy(r, t),
            }
        )

    def mean_block(items: list[dict]) -> dict:
        return {
            "count": len(items),
            "psnr": float(np.mean([v["psnr"] for v in items])) if items else None,
            "ssim": float(np.mean([v["ssim"] for v in items])) if items else None,
            "perc_proxy": float(np.mean([v["perc_proxy"] for v in items])) if items else None,
        }

    report = {
        "version": REPORT_SCHEMA_VERSION,
        "views": views,
        "splits": {
            "aerial": mean_block([v for v in views if v["split"] == "aerial"]),
            "ground": mean_block([v for v in views if v["split"] == "ground"]),
        },
        "overall": mean_block(views),
    }
    return report
